//! Neural models: the grammar-masked generator and the consistency
//! discriminator, both built on the autodiff core with disjoint parameter
//! stores.

mod discriminator;
mod encoder;
mod generator;
mod lstm;

pub use discriminator::{
    ConsistencyScore, DiscriminatorModel, ProgramEncoderKind, TreeEncoding,
};
pub use encoder::{BiEncoder, EncoderStates};
pub use generator::{
    Candidate, CompletedHypothesis, DecoderStep, GeneratorModel, Hypothesis, SampleOutcome,
};
pub use lstm::LstmCell;
