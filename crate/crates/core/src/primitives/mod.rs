//! Token, distribution and randomness primitives shared by every other module.

mod dist;
mod response;
mod rng;
mod vocab;

pub(crate) use dist::softmax_unchecked;
pub use dist::{argmax, sample_categorical, shannon_entropy, softmax_with_temperature, ProbDist, Temperature};
pub use response::Response;
pub use rng::RngStream;
pub use vocab::{TokenId, Vocabulary};
