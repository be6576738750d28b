//! Synthetic prompt/response world with a known golden reward.
//!
//! `K` prompts and `K` responses; the best response to prompt `x` is response
//! `x`. An ideal annotator turns the golden reward into preference pairs, and
//! policies or reward functions are scored against the golden matrix.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numerics::{argmax, Matrix, Rng};

/// How off-diagonal cells of the golden matrix are valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GoldenVariant {
    /// Diagonal 1, elsewhere 0.
    #[default]
    Binary,
    /// Diagonal 1, elsewhere -1.
    Margin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyWorld {
    k: usize,
    #[serde(with = "nested_matrix")]
    golden: Matrix,
}

mod nested_matrix {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::numerics::Matrix;

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        m.to_nested().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Matrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

impl ToyWorld {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn golden(&self) -> &Matrix {
        &self.golden
    }

    pub fn golden_reward(&self, prompt: usize, response: usize) -> f64 {
        self.golden.get(prompt, response)
    }

    /// Every `(prompt, response)` cell in row-major order.
    pub fn grid(&self) -> Vec<(usize, usize)> {
        (0..self.k)
            .flat_map(|x| (0..self.k).map(move |a| (x, a)))
            .collect()
    }
}

/// World of size `k` with the 0/1 identity golden reward.
pub fn make_world(k: usize) -> Result<ToyWorld> {
    make_world_with(k, GoldenVariant::Binary)
}

pub fn make_world_with(k: usize, variant: GoldenVariant) -> Result<ToyWorld> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("world size must be >= 2, got {k}")));
    }
    let off = match variant {
        GoldenVariant::Binary => 0.0,
        GoldenVariant::Margin => -1.0,
    };
    let golden = Matrix::from_fn(k, k, |x, a| if x == a { 1.0 } else { off });
    Ok(ToyWorld { k, golden })
}

/// One `(prompt, chosen, rejected)` comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PreferenceExample {
    pub prompt: usize,
    pub chosen: usize,
    pub rejected: usize,
}

impl Serialize for PreferenceExample {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.prompt, self.chosen, self.rejected].serialize(s)
    }
}

impl<'de> Deserialize<'de> for PreferenceExample {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [prompt, chosen, rejected] = <[usize; 3]>::deserialize(d)?;
        Ok(Self {
            prompt,
            chosen,
            rejected,
        })
    }
}

/// A set of comparisons plus where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub k: usize,
    pub examples: Vec<PreferenceExample>,
    pub seed: u64,
}

impl PreferenceDataset {
    /// Validates every example against a world of size `k`.
    pub fn new(k: usize, examples: Vec<PreferenceExample>, seed: u64) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Empty("preference dataset"));
        }
        for (i, e) in examples.iter().enumerate() {
            if e.chosen == e.rejected {
                return Err(Error::InvalidArgument(format!(
                    "example {i}: chosen == rejected ({})",
                    e.chosen
                )));
            }
            if e.prompt >= k || e.chosen >= k || e.rejected >= k {
                return Err(Error::InvalidArgument(format!(
                    "example {i}: index out of range for k = {k}"
                )));
            }
        }
        Ok(Self { k, examples, seed })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Ideal annotator: for each prompt, the diagonal response is preferred over
/// two distinct off-diagonal responses drawn without replacement. At `k = 2`
/// only one off-diagonal response exists and it is used for both pairs.
pub fn annotate(world: &ToyWorld, rng: &mut Rng) -> PreferenceDataset {
    let k = world.k();
    let mut examples = Vec::with_capacity(2 * k);
    for x in 0..k {
        let others: Vec<usize> = (0..k).filter(|a| *a != x).collect();
        let rejected = if others.len() >= 2 {
            rng.sample_distinct(&others, 2)
        } else {
            vec![others[0], others[0]]
        };
        for r in rejected {
            examples.push(PreferenceExample {
                prompt: x,
                chosen: x,
                rejected: r,
            });
        }
    }
    PreferenceDataset {
        k,
        examples,
        seed: rng.seed(),
    }
}

/// Every comparison not present in `train` among all (x, x, a≠x) triples.
pub fn held_out_pairs(world: &ToyWorld, train: &PreferenceDataset) -> Vec<PreferenceExample> {
    let k = world.k();
    let mut out = Vec::new();
    for x in 0..k {
        for a in (0..k).filter(|a| *a != x) {
            let e = PreferenceExample {
                prompt: x,
                chosen: x,
                rejected: a,
            };
            if !train.examples.contains(&e) {
                out.push(e);
            }
        }
    }
    out
}

/// Fraction of prompts whose most probable response is the golden one.
/// `policy` holds `π(·|x)` in row `x`; ties go to the lowest index.
pub fn policy_accuracy(policy: &Matrix, world: &ToyWorld) -> Result<f64> {
    matrix_accuracy(policy, world)
}

/// Fraction of rows whose argmax is the diagonal.
pub fn matrix_accuracy(m: &Matrix, world: &ToyWorld) -> Result<f64> {
    let k = world.k();
    if m.rows() != k || m.cols() != k {
        return Err(Error::DimensionMismatch {
            context: "matrix_accuracy",
            expected: k,
            got: if m.rows() != k { m.rows() } else { m.cols() },
        });
    }
    let hits = (0..k)
        .filter(|&x| argmax(m.row(x)) == world.golden().row_argmax()[x])
        .count();
    Ok(hits as f64 / k as f64)
}

/// Evaluates a reward function on the full grid.
pub fn rm_matrix(reward_fn: impl Fn(usize, usize) -> f64, world: &ToyWorld) -> Result<Matrix> {
    let k = world.k();
    let mut m = Matrix::zeros(k, k);
    for x in 0..k {
        for a in 0..k {
            let r = ensure_finite(reward_fn(x, a), || format!("reward at ({x}, {a})"))?;
            m.set(x, a, r);
        }
    }
    Ok(m)
}

/// Fraction of comparisons where the chosen response scores strictly higher.
/// Ties count as failures.
pub fn rm_ranking_accuracy(
    reward_fn: impl Fn(usize, usize) -> f64,
    examples: &[PreferenceExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("ranking accuracy examples"));
    }
    let hits = examples
        .iter()
        .filter(|e| reward_fn(e.prompt, e.chosen) > reward_fn(e.prompt, e.rejected))
        .count();
    Ok(hits as f64 / examples.len() as f64)
}
