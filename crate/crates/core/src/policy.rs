//! Distributions over discrete action sets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netmodel::Action;
use crate::{Error, Result};

/// Smallest probability used inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDistribution<A = Action> {
    pub actions: Vec<A>,
    pub probs: Vec<f64>,
}

impl<A: Clone + PartialEq> PolicyDistribution<A> {
    pub fn new(actions: Vec<A>, probs: Vec<f64>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::NoFeasibleAction);
        }
        if actions.len() != probs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} actions but {} probabilities",
                actions.len(),
                probs.len()
            )));
        }
        Ok(Self { actions, probs })
    }

    pub fn uniform(actions: Vec<A>) -> Result<Self> {
        let n = actions.len();
        Self::new(actions, vec![1.0 / n.max(1) as f64; n])
    }

    /// All mass on `index`.
    pub fn point(actions: Vec<A>, index: usize) -> Result<Self> {
        let mut probs = vec![0.0; actions.len()];
        if index >= probs.len() {
            return Err(Error::NoFeasibleAction);
        }
        probs[index] = 1.0;
        Self::new(actions, probs)
    }

    /// Numerically stable softmax of `logits`.
    pub fn softmax(actions: Vec<A>, logits: &[f64]) -> Result<Self> {
        let probs = softmax(logits)?;
        Self::new(actions, probs)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn same_support(&self, other: &Self) -> bool {
        self.actions == other.actions
    }

    pub fn prob_of(&self, action: &A) -> f64 {
        self.actions
            .iter()
            .position(|a| a == action)
            .map_or(0.0, |i| self.probs[i])
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc })
            .0
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::NoFeasibleAction);
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::NoFeasibleAction);
    }
    let e: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / z).collect())
}
