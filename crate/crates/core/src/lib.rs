//! Partial parameter sharing for cooperative multi-agent reinforcement
//! learning: agents share one parameter set and differ through learnable
//! threshold masks, pushed apart by a diversity term and kept plastic by
//! periodic resets.
//!
//! The crate carries its own small autodiff engine ([`tape`]), two toy
//! cooperative tasks ([`env`]), QMIX-style and MATD3-style learners
//! ([`trainers`]) and an experiment harness ([`harness`]).

pub mod env;
pub mod harness;
pub mod masking;
pub mod networks;
pub mod params;
pub mod replay;
pub mod tape;
pub mod tensor;
pub mod trainers;
