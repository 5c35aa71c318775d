//! Value-equivalence distortion between tabular models.
//!
//! For policy and value classes `Π` and `𝒱`,
//!
//! ```text
//! d(M1, M2) = max_{π ∈ Π, V ∈ 𝒱} ( max_s |B^π_{M1} V(s) − B^π_{M2} V(s)| )²
//! ```
//!
//! Two models at distortion zero induce identical Bellman updates on every
//! pair in `Π × 𝒱`.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mdp::{bellman_unchecked, StationaryPolicy, TabularMdp, ValueFunction};
use crate::rate_distortion::DistortionMatrix;
use crate::seed::rng_from_seed;
use crate::{Error, Result};

pub const DEFAULT_POLICY_CLASS_SIZE: usize = 16;
pub const DEFAULT_VALUE_CLASS_SIZE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyClass {
    members: Vec<StationaryPolicy>,
}

impl PolicyClass {
    pub fn new(members: Vec<StationaryPolicy>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::invalid("policy class is empty"))?;
        let dims = (first.num_states(), first.num_actions());
        if members
            .iter()
            .any(|p| (p.num_states(), p.num_actions()) != dims)
        {
            return Err(Error::invalid("policy class members have mismatched dimensions"));
        }
        Ok(PolicyClass { members })
    }

    pub fn members(&self) -> &[StationaryPolicy] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueClass {
    members: Vec<ValueFunction>,
}

impl ValueClass {
    pub fn new(members: Vec<ValueFunction>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::invalid("value class is empty"))?;
        if members.iter().any(|v| v.len() != first.len()) {
            return Err(Error::invalid("value class members have mismatched lengths"));
        }
        Ok(ValueClass { members })
    }

    pub fn members(&self) -> &[ValueFunction] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn check_compatible(m: &TabularMdp, pc: &PolicyClass, vc: &ValueClass) -> Result<()> {
    let p = &pc.members[0];
    if p.num_states() != m.num_states() || p.num_actions() != m.num_actions() {
        return Err(Error::invalid(format!(
            "policy class is {}x{}, MDP is {}x{}",
            p.num_states(),
            p.num_actions(),
            m.num_states(),
            m.num_actions()
        )));
    }
    if vc.members[0].len() != m.num_states() {
        return Err(Error::invalid(format!(
            "value class has {} states, MDP has {}",
            vc.members[0].len(),
            m.num_states()
        )));
    }
    Ok(())
}

/// All `B^π_M V` vectors for `(π, V)` in class order, concatenated.
fn bellman_images(m: &TabularMdp, pc: &PolicyClass, vc: &ValueClass) -> Vec<f64> {
    let mut out = Vec::with_capacity(pc.len() * vc.len() * m.num_states());
    for pi in &pc.members {
        for v in &vc.members {
            out.extend(bellman_unchecked(m, pi, v.values()));
        }
    }
    out
}

/// Sup over `(π, V)` of the squared sup-norm gap, given the two image sets.
fn sup_squared_gap(a: &[f64], b: &[f64], num_states: usize) -> f64 {
    a.chunks(num_states)
        .zip(b.chunks(num_states))
        .map(|(x, y)| {
            let gap = x
                .iter()
                .zip(y)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            gap * gap
        })
        .fold(0.0, f64::max)
}

pub fn distortion(
    m1: &TabularMdp,
    m2: &TabularMdp,
    pc: &PolicyClass,
    vc: &ValueClass,
) -> Result<f64> {
    if m1.num_states() != m2.num_states()
        || m1.num_actions() != m2.num_actions()
        || m1.horizon() != m2.horizon()
    {
        return Err(Error::invalid("models do not share states, actions and horizon"));
    }
    check_compatible(m1, pc, vc)?;
    Ok(sup_squared_gap(
        &bellman_images(m1, pc, vc),
        &bellman_images(m2, pc, vc),
        m1.num_states(),
    ))
}

/// Pairwise distortions among `samples`. Each entry is computed on its own,
/// so the result does not depend on how rows are scheduled across threads.
pub fn distortion_matrix(
    samples: &[TabularMdp],
    pc: &PolicyClass,
    vc: &ValueClass,
) -> Result<DistortionMatrix> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("need at least one sample"))?;
    for m in samples {
        if m.num_states() != first.num_states()
            || m.num_actions() != first.num_actions()
            || m.horizon() != first.horizon()
        {
            return Err(Error::invalid("models do not share states, actions and horizon"));
        }
    }
    check_compatible(first, pc, vc)?;
    let ns = first.num_states();
    let images: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|m| bellman_images(m, pc, vc))
        .collect();
    let n = samples.len();
    let data: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            if i == j {
                0.0
            } else {
                sup_squared_gap(&images[i], &images[j], ns)
            }
        })
        .collect();
    DistortionMatrix::new(n, n, data)
}

/// `size` distinct deterministic stationary policies drawn uniformly, or all
/// `|A|^|S|` of them (in lexicographic order, state 0 fastest) if that is no
/// more than `size`.
pub fn default_policy_class(
    num_states: usize,
    num_actions: usize,
    size: usize,
    rng_seed: u64,
) -> Result<PolicyClass> {
    if size == 0 || num_states == 0 || num_actions == 0 {
        return Err(Error::invalid("policy class size and dimensions must be positive"));
    }
    let total = u32::try_from(num_states)
        .ok()
        .and_then(|ns| num_actions.checked_pow(ns));
    let action_lists: Vec<Vec<usize>> = match total {
        Some(total) if total <= size => (0..total)
            .map(|mut code| {
                (0..num_states)
                    .map(|_| {
                        let a = code % num_actions;
                        code /= num_actions;
                        a
                    })
                    .collect()
            })
            .collect(),
        _ => {
            let mut rng = rng_from_seed(rng_seed);
            let mut seen = HashSet::with_capacity(size);
            let mut lists = Vec::with_capacity(size);
            while lists.len() < size {
                let actions: Vec<usize> = (0..num_states)
                    .map(|_| rng.random_range(0..num_actions))
                    .collect();
                if seen.insert(actions.clone()) {
                    lists.push(actions);
                }
            }
            lists
        }
    };
    let members = action_lists
        .iter()
        .map(|a| StationaryPolicy::deterministic(num_actions, a))
        .collect::<Result<Vec<_>>>()?;
    PolicyClass::new(members)
}

/// The zero function plus `size - 1` functions with entries drawn uniformly
/// from `[0, H - 1]`.
pub fn default_value_class(
    num_states: usize,
    horizon: usize,
    size: usize,
    rng_seed: u64,
) -> Result<ValueClass> {
    if size == 0 || num_states == 0 || horizon == 0 {
        return Err(Error::invalid("value class size, states and horizon must be positive"));
    }
    let mut rng = rng_from_seed(rng_seed);
    let top = (horizon - 1) as f64;
    let mut members = vec![ValueFunction::zeros(num_states)];
    for _ in 1..size {
        let v = (0..num_states).map(|_| rng.random::<f64>() * top).collect();
        members.push(ValueFunction::new(v)?);
    }
    ValueClass::new(members)
}
