//! Causal order from the mean shifts that single-variable interventions
//! induce in their descendants.

use serde::{Deserialize, Serialize};

use crate::cumulants::Moments;
use crate::error::{Error, Result};
use crate::graph;
use crate::simulator::Dataset;

pub const DEFAULT_THRESHOLD_Z: f64 = 6.0;

/// `affected[j][i]` is true when `X_j` moved under `Do(X_i)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectMatrix {
    pub affected: Vec<Vec<bool>>,
}

impl EffectMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            affected: vec![vec![false; n]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.affected.len()
    }

    /// Records the flags of one intervention on `target`.
    pub fn set_column(&mut self, target: usize, flags: &[bool]) {
        for (j, &f) in flags.iter().enumerate() {
            self.affected[j][target] = f && j != target;
        }
    }

    /// Ancestors-first order with ties broken by index.
    pub fn order(&self) -> Result<Vec<usize>> {
        graph::topo_order(self.n(), |from, to| self.affected[to][from]).map_err(Error::EffectCycle)
    }
}

fn shift_flags(obs: &Moments, intv: &Moments, target: usize, threshold_z: f64) -> Vec<bool> {
    let n = obs.mean.len();
    let (n_obs, n_int) = (obs.n_samples as f64, intv.n_samples as f64);
    (0..n)
        .map(|j| {
            if j == target {
                return false;
            }
            let diff = (intv.mean[j] - obs.mean[j]).abs();
            let se = (obs.var[j] / n_obs + intv.var[j] / n_int).sqrt();
            // guards the noiseless case, where only rounding separates means
            let floor = 1e-12 * (1.0 + obs.mean[j].abs().max(intv.mean[j].abs()));
            diff > threshold_z * se.max(floor)
        })
        .collect()
}

/// Flags coordinates whose mean moved by more than `threshold_z` pooled
/// standard errors. The target itself is never flagged.
pub fn detect_affected(obs: &Dataset, intv: &Dataset, threshold_z: f64) -> Result<Vec<bool>> {
    let target = intv.target().ok_or(Error::MissingIntervention)?;
    if obs.n_vars() != intv.n_vars() {
        return Err(Error::Dimension(format!(
            "observational data has {} variables, interventional {}",
            obs.n_vars(),
            intv.n_vars()
        )));
    }
    let (mo, mi) = (Moments::from_dataset(obs)?, Moments::from_dataset(intv)?);
    Ok(detect_affected_moments(&mo, &mi, target, threshold_z))
}

/// [`detect_affected`] on precomputed moments.
pub fn detect_affected_moments(
    obs: &Moments,
    intv: &Moments,
    target: usize,
    threshold_z: f64,
) -> Vec<bool> {
    shift_flags(obs, intv, target, threshold_z)
}

/// Builds the effect matrix from every interventional dataset and returns its
/// topological order. Variables without an intervention get no outgoing
/// effects.
pub fn causal_order(obs: &Dataset, intvs: &[Dataset], threshold_z: f64) -> Result<Vec<usize>> {
    let n = obs.n_vars();
    let mo = Moments::from_dataset(obs)?;
    let mut effects = EffectMatrix::new(n);
    let mut seen = vec![false; n];
    for d in intvs {
        let target = d.target().ok_or(Error::MissingIntervention)?;
        if target >= n {
            return Err(Error::IndexOutOfRange {
                index: target,
                len: n,
            });
        }
        if std::mem::replace(&mut seen[target], true) {
            return Err(Error::DuplicateTarget(target));
        }
        let mi = Moments::from_dataset(d)?;
        effects.set_column(target, &shift_flags(&mo, &mi, target, threshold_z));
    }
    effects.order()
}

/// Whether `order` lists every edge `B[to, from] != 0` source first.
pub fn is_topological(b: &nalgebra::DMatrix<f64>, order: &[usize]) -> bool {
    let n = b.nrows();
    if order.len() != n || !crate::linalg::is_permutation(order) {
        return false;
    }
    let pos = crate::linalg::inverse_perm(order);
    (0..n).all(|to| (0..n).all(|from| b[(to, from)] == 0.0 || pos[from] < pos[to]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_is_reported() {
        let mut e = EffectMatrix::new(3);
        e.set_column(0, &[false, true, false]);
        e.set_column(1, &[true, false, false]);
        match e.order() {
            Err(Error::EffectCycle(c)) => {
                let mut c = c;
                c.sort();
                assert_eq!(c, vec![0, 1]);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn target_is_never_flagged() {
        let mut e = EffectMatrix::new(2);
        e.set_column(1, &[true, true]);
        assert!(!e.affected[1][1]);
        assert!(e.affected[0][1]);
        assert_eq!(e.order().unwrap(), vec![1, 0]);
    }
}
