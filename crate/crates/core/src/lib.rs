pub mod assay;
pub mod bias;
pub mod cross_section;
pub mod duration;
pub mod epidemic;
pub mod error;
pub mod estimation;
pub mod external_study;
pub mod harness;
pub mod quad;
pub mod rng;
