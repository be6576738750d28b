//! Reward-robust RLHF laboratory.
//!
//! A synthetic preference world, Bradley-Terry and multi-head Gaussian
//! reward models, reward-integration strategies over uncertainty sets,
//! single-step PPO, and reproducible experiment scenarios built from them.

pub mod ensemble;
pub mod error;
pub mod labs;
pub mod numerics;
pub mod ppo;
pub mod rewardnet;
pub mod toyworld;

pub use error::{Error, Result};
