//! Dense linear algebra, feed-forward networks with analytic gradients,
//! Adam, and the seedable generator everything else trains on.

mod adam;
mod functions;
pub mod gradcheck;
mod matrix;
mod net;
mod rng;
pub mod tolerance;

pub use adam::{AdamConfig, AdamState};
pub use functions::{log_sigmoid, log_softmax, sigmoid, softmax, softplus};
pub use matrix::{argmax, dot, l2_norm, one_hot, Matrix};
pub use net::{Activation, FeedForwardNet, NetConfig, Tape};
pub use rng::Rng;
