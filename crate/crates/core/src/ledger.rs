//! Append-only record of every score observed during a run.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CompensatedSum;

/// One evaluated score. `round` starts at 1 and increases by one per append.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub round: u64,
    pub candidate: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    count: u64,
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
}

/// The dataset of observed scores with per-candidate running moments.
///
/// [`ObservationLog::record`] is the only mutator; everything else reads.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLog {
    observations: Vec<Observation>,
    moments: Vec<Moments>,
}

impl ObservationLog {
    pub fn new(num_candidates: usize) -> Self {
        ObservationLog {
            observations: Vec::new(),
            moments: vec![Moments::default(); num_candidates],
        }
    }

    pub fn num_candidates(&self) -> usize {
        self.moments.len()
    }

    /// Appends a score for `candidate` and returns the round it was assigned.
    pub fn record(&mut self, candidate: usize, score: f64) -> Result<u64> {
        if candidate >= self.moments.len() {
            return Err(Error::IndexOutOfRange {
                index: candidate,
                len: self.moments.len(),
            });
        }
        if !score.is_finite() {
            return Err(Error::NonFinite(format!(
                "score {score} for candidate {candidate}"
            )));
        }
        let round = self.observations.last().map_or(1, |o| o.round + 1);
        let m = &mut self.moments[candidate];
        m.count += 1;
        m.sum.add(score);
        m.sum_sq.add(score * score);
        self.observations.push(Observation {
            round,
            candidate,
            score,
        });
        Ok(round)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// `r_n(t)`: how many times candidate `n` has been evaluated.
    pub fn count(&self, n: usize) -> u64 {
        self.moments.get(n).map_or(0, |m| m.count)
    }

    pub fn counts(&self) -> Vec<u64> {
        self.moments.iter().map(|m| m.count).collect()
    }

    pub fn sum(&self, n: usize) -> f64 {
        self.moments[n].sum.value()
    }

    pub fn sum_of_squares(&self, n: usize) -> f64 {
        self.moments[n].sum_sq.value()
    }

    pub fn sample_mean(&self, n: usize) -> Result<f64> {
        let m = self.moments.get(n).ok_or(Error::IndexOutOfRange {
            index: n,
            len: self.moments.len(),
        })?;
        if m.count == 0 {
            return Err(Error::NeverEvaluated(n));
        }
        Ok(m.sum.value() / m.count as f64)
    }

    /// Unbiased (`r - 1` denominator) sample variance of candidate `n`.
    pub fn sample_variance(&self, n: usize) -> Result<f64> {
        let count = self.count(n);
        if count < 2 {
            return Err(Error::InsufficientData(format!(
                "candidate {n} has {count} observations; variance needs 2"
            )));
        }
        // Two-pass over the raw scores: the moment form cancels badly when
        // the spread is tiny relative to the mean.
        let mean = self.sample_mean(n)?;
        let ss: CompensatedSum = self
            .scores_of(n)
            .map(|v| (v - mean) * (v - mean))
            .collect();
        Ok(ss.value() / (count - 1) as f64)
    }

    pub fn scores_of(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        self.observations
            .iter()
            .filter(move |o| o.candidate == n)
            .map(|o| o.score)
    }

    /// Candidate with the highest sample mean among those evaluated at least
    /// once; ties go to the lowest index.
    pub fn final_selection(&self) -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (n, m) in self.moments.iter().enumerate() {
            if m.count == 0 {
                continue;
            }
            let mean = m.sum.value() / m.count as f64;
            match best {
                Some((_, b)) if mean <= b => {}
                _ => best = Some((n, mean)),
            }
        }
        best.map(|(n, _)| n).ok_or(Error::EmptyLog)
    }

    /// Rebuilds a log from raw observations, validating round order.
    pub fn from_observations(
        num_candidates: usize,
        observations: impl IntoIterator<Item = Observation>,
    ) -> Result<Self> {
        let mut log = ObservationLog::new(num_candidates);
        for o in observations {
            let round = log.record(o.candidate, o.score)?;
            if round != o.round {
                return Err(Error::InvalidConfig(format!(
                    "observation rounds must be 1, 2, 3, ...; expected {round}, found {}",
                    o.round
                )));
            }
        }
        Ok(log)
    }

    /// Writes one JSON object per line: `{"round":t,"candidate":n,"score":v}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for o in &self.observations {
            serde_json::to_writer(&mut out, o)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(num_candidates: usize, input: R) -> Result<Self> {
        let mut obs = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            obs.push(serde_json::from_str::<Observation>(&line)?);
        }
        Self::from_observations(num_candidates, obs)
    }
}
