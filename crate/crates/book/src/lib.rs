//! Compiles every listing in `book/src` as a doctest, one module per chapter
//! so failures point at their chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/sampling.md")]
pub mod sampling {}
#[doc = include_str!("../../../book/src/policy.md")]
pub mod policy {}
#[doc = include_str!("../../../book/src/rollouts.md")]
pub mod rollouts {}
#[doc = include_str!("../../../book/src/voting.md")]
pub mod voting {}
#[doc = include_str!("../../../book/src/advantages.md")]
pub mod advantages {}
#[doc = include_str!("../../../book/src/surrogate.md")]
pub mod surrogate {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
