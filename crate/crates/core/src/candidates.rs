//! The finite feasible set: latent vectors, their projected soft prompts and
//! the per-candidate observation noise.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CANDIDATE_SET_SCHEMA: u32 = 1;

/// Closed box bounding every latent coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentBox {
    pub lower: f64,
    pub upper: f64,
}

impl Default for LatentBox {
    fn default() -> Self {
        LatentBox {
            lower: -1.0,
            upper: 1.0,
        }
    }
}

impl LatentBox {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|v| *v >= self.lower && *v <= self.upper)
    }
}

/// A high-dimensional encoding of a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub id: usize,
    pub values: Vec<f64>,
    /// How many times this vector has been picked as a perturbation seed.
    #[serde(default)]
    pub selection_count: u64,
}

impl LatentVector {
    pub fn new(id: usize, values: Vec<f64>) -> Self {
        LatentVector {
            id,
            values,
            selection_count: 0,
        }
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }
}

/// Moderate-dimensional projection of a latent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftPrompt {
    pub id: usize,
    pub z: Vec<f64>,
    pub latent_id: usize,
    #[serde(default)]
    pub prompt_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CandidateSetFile {
    schema: u32,
    latent_dim: usize,
    soft_dim: usize,
    #[serde(default)]
    latent_box: LatentBox,
    projection: Vec<Vec<f64>>,
    latents: Vec<LatentVector>,
    prompts: Vec<SoftPrompt>,
    #[serde(default)]
    initial: Vec<usize>,
    #[serde(default)]
    noise_variance: Option<Vec<f64>>,
}

/// The candidate soft prompts together with the projection that produced
/// them.
///
/// Candidate indices are zero-based and coincide with `SoftPrompt::id`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    latents: Vec<LatentVector>,
    prompts: Vec<SoftPrompt>,
    projection: DMatrix<f64>,
    latent_box: LatentBox,
    initial: Vec<usize>,
    noise_variance: Option<Vec<f64>>,
    z_cache: Vec<DVector<f64>>,
}

impl CandidateSet {
    /// Builds the set by projecting every latent vector: `z_n = A X_n`.
    ///
    /// `initial` lists the candidates derived directly from the initial
    /// example prompts (may be empty).
    pub fn from_projection(
        latents: Vec<LatentVector>,
        projection: DMatrix<f64>,
        latent_box: LatentBox,
        initial: Vec<usize>,
    ) -> Result<Self> {
        let prompts = latents
            .iter()
            .enumerate()
            .map(|(n, x)| {
                if x.values.len() != projection.ncols() {
                    return Err(Error::dims(projection.ncols(), x.values.len(), "latent vector"));
                }
                let z = &projection * x.as_dvector();
                Ok(SoftPrompt {
                    id: n,
                    z: z.as_slice().to_vec(),
                    latent_id: x.id,
                    prompt_text: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(latents, prompts, projection, latent_box, initial, None)
    }

    /// Candidate set whose soft prompts are given directly; the latent space
    /// is the soft-prompt space and the projection is the identity.
    pub fn from_soft_prompts(zs: Vec<Vec<f64>>) -> Result<Self> {
        let dim = zs.first().map_or(0, Vec::len);
        let latents = zs
            .into_iter()
            .enumerate()
            .map(|(n, z)| LatentVector::new(n, z))
            .collect();
        let unbounded = LatentBox {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        };
        Self::from_projection(latents, DMatrix::identity(dim, dim), unbounded, Vec::new())
    }

    fn from_parts(
        latents: Vec<LatentVector>,
        prompts: Vec<SoftPrompt>,
        projection: DMatrix<f64>,
        latent_box: LatentBox,
        initial: Vec<usize>,
        noise_variance: Option<Vec<f64>>,
    ) -> Result<Self> {
        let z_cache = prompts
            .iter()
            .map(|p| DVector::from_column_slice(&p.z))
            .collect();
        let set = CandidateSet {
            latents,
            prompts,
            projection,
            latent_box,
            initial,
            noise_variance,
            z_cache,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let d = self.projection.nrows();
        let d_latent = self.projection.ncols();
        let gram = &self.projection * self.projection.transpose();
        let ortho_err = (&gram - DMatrix::<f64>::identity(d, d)).amax();
        if ortho_err > 1e-8 {
            return Err(Error::InvalidConfig(format!(
                "projection rows are not orthonormal (max deviation {ortho_err:e})"
            )));
        }
        for (n, p) in self.prompts.iter().enumerate() {
            if p.id != n {
                return Err(Error::InvalidConfig(format!(
                    "prompt ids must be contiguous from 0; position {n} has id {}",
                    p.id
                )));
            }
            if p.z.len() != d {
                return Err(Error::dims(d, p.z.len(), "soft prompt"));
            }
            let hits = self.latents.iter().filter(|x| x.id == p.latent_id).count();
            if hits != 1 {
                return Err(Error::InvalidConfig(format!(
                    "prompt {n} references latent {} which resolves {hits} times",
                    p.latent_id
                )));
            }
        }
        for x in &self.latents {
            if x.values.len() != d_latent {
                return Err(Error::dims(d_latent, x.values.len(), "latent vector"));
            }
            if !self.latent_box.contains(&x.values) {
                return Err(Error::InvalidConfig(format!(
                    "latent {} lies outside the latent box",
                    x.id
                )));
            }
        }
        if let Some(&bad) = self.initial.iter().find(|&&i| i >= self.prompts.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.prompts.len(),
            });
        }
        if let Some(nv) = &self.noise_variance {
            if nv.len() != self.prompts.len() {
                return Err(Error::dims(self.prompts.len(), nv.len(), "noise variances"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn soft_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn prompts(&self) -> &[SoftPrompt] {
        &self.prompts
    }

    pub fn latents(&self) -> &[LatentVector] {
        &self.latents
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn latent_box(&self) -> LatentBox {
        self.latent_box
    }

    /// Candidates derived from the initial example prompts.
    pub fn initial(&self) -> &[usize] {
        &self.initial
    }

    pub fn soft_prompt(&self, n: usize) -> &DVector<f64> {
        &self.z_cache[n]
    }

    pub fn soft_prompts(&self) -> &[DVector<f64>] {
        &self.z_cache
    }

    /// Latent vector behind candidate `n`.
    pub fn latent_of(&self, n: usize) -> &LatentVector {
        let id = self.prompts[n].latent_id;
        self.latents
            .iter()
            .find(|x| x.id == id)
            .expect("latent ids validated at construction")
    }

    pub fn noise_variance(&self) -> Option<&[f64]> {
        self.noise_variance.as_deref()
    }

    /// Installs per-candidate observation variances, raising each to `floor`.
    pub fn set_noise_variance(&mut self, variances: Vec<f64>, floor: f64) -> Result<()> {
        if variances.len() != self.len() {
            return Err(Error::dims(self.len(), variances.len(), "noise variances"));
        }
        if let Some(v) = variances.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("noise variance {v}")));
        }
        self.noise_variance = Some(variances.into_iter().map(|v| v.max(floor)).collect());
        Ok(())
    }

    pub fn set_prompt_text(&mut self, n: usize, text: String) {
        self.prompts[n].prompt_text = Some(text);
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CandidateSetFile {
            schema: CANDIDATE_SET_SCHEMA,
            latent_dim: self.latent_dim(),
            soft_dim: self.soft_dim(),
            latent_box: self.latent_box,
            projection: self
                .projection
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            latents: self.latents.clone(),
            prompts: self.prompts.clone(),
            initial: self.initial.clone(),
            noise_variance: self.noise_variance.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CandidateSetFile = serde_json::from_str(text)?;
        if file.schema != CANDIDATE_SET_SCHEMA {
            return Err(Error::InvalidConfig(format!(
                "unsupported candidate-set schema {}",
                file.schema
            )));
        }
        if file.projection.len() != file.soft_dim {
            return Err(Error::dims(file.soft_dim, file.projection.len(), "projection rows"));
        }
        if let Some(row) = file.projection.iter().find(|r| r.len() != file.latent_dim) {
            return Err(Error::dims(file.latent_dim, row.len(), "projection columns"));
        }
        let flat: Vec<f64> = file.projection.iter().flatten().copied().collect();
        let projection = DMatrix::from_row_slice(file.soft_dim, file.latent_dim, &flat);
        Self::from_parts(
            file.latents,
            file.prompts,
            projection,
            file.latent_box,
            file.initial,
            file.noise_variance,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_set() -> CandidateSet {
        let latents = vec![
            LatentVector::new(0, vec![0.1, 0.2, 0.3]),
            LatentVector::new(1, vec![-0.4, 0.5, 0.0]),
        ];
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        CandidateSet::from_projection(latents, a, LatentBox::default(), vec![0]).unwrap()
    }

    #[test]
    fn projection_applied_to_latents() {
        let set = small_set();
        assert_eq!(set.prompts()[1].z, vec![-0.4, 0.0]);
        assert_eq!(set.latent_of(1).values, vec![-0.4, 0.5, 0.0]);
    }

    #[test]
    fn json_round_trip() {
        let mut set = small_set();
        set.set_noise_variance(vec![0.0, 0.2], 1e-8).unwrap();
        let back = CandidateSet::from_json(&set.to_json().unwrap()).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.noise_variance().unwrap()[0], 1e-8);
    }

    #[test]
    fn rejects_non_orthonormal_projection() {
        let latents = vec![LatentVector::new(0, vec![0.0, 0.0])];
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(CandidateSet::from_projection(latents, a, LatentBox::default(), vec![]).is_err());
    }

    #[test]
    fn rejects_out_of_box_latent() {
        let latents = vec![LatentVector::new(0, vec![1.5, 0.0])];
        let a = DMatrix::identity(2, 2);
        assert!(CandidateSet::from_projection(latents, a, LatentBox::default(), vec![]).is_err());
    }
}
