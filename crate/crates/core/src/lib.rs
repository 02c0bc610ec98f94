//! Answerability-aware question answering over a typed knowledge base.
//!
//! Candidate logical forms come from two sources: KB path traversal from the
//! linked entities, and sketch filling over retrieved schema elements. A
//! discriminator ranks the union and either commits to a logical form (with
//! its answers, or NA when execution is empty) or abstains with NK.

pub mod constructor;
pub mod dataset;
pub mod discriminator;
pub mod eval;
pub mod executor;
pub mod kb;
pub mod linker;
pub mod pipeline;
pub mod retriever;
pub mod scorer;
pub mod sexpr;
pub mod synth;
pub mod training;
pub mod value;
