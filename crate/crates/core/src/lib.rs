pub mod acquisition;
pub mod candidates;
pub mod error;
pub mod ledger;
pub mod linalg;
pub mod posterior;
pub mod psk;
pub mod scoring;
pub mod search;
pub mod selection;
pub mod surrogate;
