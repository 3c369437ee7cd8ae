//! Exact time-to-go analysis over transition kernels.
//!
//! With a stage cost of one per action, the expected time-to-go `J` on the
//! non-terminal states solves `J = 1 + F J`, where `F` is the non-terminal
//! block of the action-marginalized chain. Everything here works on dense
//! matrices of at most 64 states, so the system is solved directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Proposal, SyntheticModel, TransitionKernel};

/// Absolute slack added to the value-error bound comparison.
pub const LEMMA_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("time-to-go system is not solvable: {0}")]
    Unsolvable(String),
    #[error("no non-hallucinated action is available")]
    NoNonHallucinated,
}

/// Expected time-to-go per state; the terminal (last) entry is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVector {
    pub values: Vec<f64>,
}

impl ValueVector {
    pub fn get(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn terminal(&self) -> usize {
        self.values.len() - 1
    }

    /// Sup norm; the terminal entry is zero, so it ranges over all states.
    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sum_{s'} row[s'] * J(s')`.
    pub fn expectation(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.values).map(|(p, v)| p * v).sum()
    }

    pub fn distance_inf(&self, other: &ValueVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Marginalizes the action kernels under the proposal:
/// row `s` is `sum_a proposal(a|s) * kernel_a[s]`.
pub fn induced_chain(
    kernels: &[TransitionKernel],
    proposal: &Proposal,
) -> Result<TransitionKernel, AnalysisError> {
    let first = kernels
        .first()
        .ok_or_else(|| AnalysisError::Shape("no kernels".into()))?;
    let n = first.size();
    if kernels.iter().any(|k| k.size() != n) {
        return Err(AnalysisError::Shape("kernels differ in size".into()));
    }
    if proposal.n_actions() != kernels.len() || proposal.n_states() != n {
        return Err(AnalysisError::Shape(format!(
            "proposal is {}x{}, kernels are {} of size {n}",
            proposal.n_states(),
            proposal.n_actions(),
            kernels.len()
        )));
    }
    let mut data = vec![0.0; n * n];
    for s in 0..n {
        let weights = proposal.row(s);
        let out = &mut data[s * n..(s + 1) * n];
        for (kernel, w) in kernels.iter().zip(weights) {
            if *w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(kernel.row(s)) {
                *o += w * p;
            }
        }
    }
    Ok(TransitionKernel::from_dense_unchecked(n, data))
}

/// Non-terminal block `F` of a chain.
pub fn transient_block(chain: &TransitionKernel) -> DMatrix<f64> {
    let m = chain.size() - 1;
    DMatrix::from_fn(m, m, |i, j| chain.get(i, j))
}

/// Solves `(I - F) J = 1` by LU decomposition.
pub fn solve_time_to_go(chain: &TransitionKernel) -> Result<ValueVector, AnalysisError> {
    let m = chain.size() - 1;
    if m == 0 {
        return Ok(ValueVector { values: vec![0.0] });
    }
    let f = transient_block(chain);
    let a = DMatrix::<f64>::identity(m, m) - f;
    let ones = DVector::<f64>::from_element(m, 1.0);
    let solution = a
        .lu()
        .solve(&ones)
        .ok_or_else(|| AnalysisError::Unsolvable("singular system".into()))?;
    if let Some((i, v)) = solution
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(AnalysisError::Unsolvable(format!(
            "state {i} has time-to-go {v}; terminal unreachable"
        )));
    }
    let mut values: Vec<f64> = solution.iter().copied().collect();
    values.push(0.0);
    Ok(ValueVector { values })
}

/// `sum |p - q|`, in `[0, 2]` for distributions.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// Largest row-wise distance between two kernel sets over non-terminal rows.
pub fn compute_eta(
    true_kernels: &[TransitionKernel],
    model_kernels: &[TransitionKernel],
) -> Result<f64, AnalysisError> {
    if true_kernels.len() != model_kernels.len() {
        return Err(AnalysisError::Shape("kernel sets differ in length".into()));
    }
    let mut eta: f64 = 0.0;
    for (p, q) in true_kernels.iter().zip(model_kernels) {
        if p.size() != q.size() {
            return Err(AnalysisError::Shape("kernels differ in size".into()));
        }
        for s in 0..p.terminal() {
            eta = eta.max(tv_distance(p.row(s), q.row(s)));
        }
    }
    Ok(eta)
}

/// `J(s) - E[J(s') | s, a]` under `kernel`.
pub fn improvement(kernel: &TransitionKernel, j: &ValueVector, s: usize) -> f64 {
    j.get(s) - j.expectation(kernel.row(s))
}

/// Smallest improvement over non-terminal states and non-hallucinated actions.
pub fn min_improvement(
    kernels: &[TransitionKernel],
    hallucinated: &[bool],
    j: &ValueVector,
) -> Result<f64, AnalysisError> {
    let mut delta: Option<f64> = None;
    for (kernel, _) in kernels.iter().zip(hallucinated).filter(|(_, h)| !**h) {
        for s in 0..kernel.terminal() {
            let d = improvement(kernel, j, s);
            delta = Some(delta.map_or(d, |m: f64| m.min(d)));
        }
    }
    delta.ok_or(AnalysisError::NoNonHallucinated)
}

/// True time-to-go under the model's proposal.
pub fn true_time_to_go(model: &SyntheticModel) -> Result<ValueVector, AnalysisError> {
    solve_time_to_go(&induced_chain(&model.true_kernels, &model.proposal)?)
}

/// Time-to-go the model predicts under its own kernels.
pub fn model_time_to_go(model: &SyntheticModel) -> Result<ValueVector, AnalysisError> {
    solve_time_to_go(&induced_chain(&model.model_kernels, &model.proposal)?)
}

pub fn compute_delta(model: &SyntheticModel, j: &ValueVector) -> Result<f64, AnalysisError> {
    min_improvement(&model.true_kernels, &model.hallucinated, j)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConditionReport {
    pub delta: f64,
    pub eta: f64,
    pub j_inf_norm: f64,
    pub j_tilde_inf_norm: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl FilterConditionReport {
    /// Evaluates `delta > 2 * eta * |J| * (|J~| + 1)`.
    pub fn from_parts(delta: f64, eta: f64, j_inf_norm: f64, j_tilde_inf_norm: f64) -> Self {
        let rhs = 2.0 * eta * j_inf_norm * (j_tilde_inf_norm + 1.0);
        FilterConditionReport {
            delta,
            eta,
            j_inf_norm,
            j_tilde_inf_norm,
            rhs,
            holds: delta > rhs,
        }
    }
}

pub fn check_filter_condition(model: &SyntheticModel) -> Result<FilterConditionReport, AnalysisError> {
    let j = true_time_to_go(model)?;
    let j_tilde = model_time_to_go(model)?;
    let delta = compute_delta(model, &j)?;
    Ok(FilterConditionReport::from_parts(
        delta,
        model.eta,
        j.inf_norm(),
        j_tilde.inf_norm(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    /// `|J~ - J|_inf`
    pub lhs: f64,
    /// `eta * |J~|_inf * |J|_inf`
    pub rhs: f64,
    pub holds: bool,
}

pub fn lemma1_check(model: &SyntheticModel) -> Result<Lemma1Report, AnalysisError> {
    let j = true_time_to_go(model)?;
    let j_tilde = model_time_to_go(model)?;
    let lhs = j_tilde.distance_inf(&j);
    let rhs = model.eta * j_tilde.inf_norm() * j.inf_norm();
    Ok(Lemma1Report {
        lhs,
        rhs,
        holds: lhs <= rhs + LEMMA_SLACK,
    })
}

/// `|F^k 1|_inf`, the mass still transient after `k` steps from the worst
/// start state. Tends to zero iff the Neumann series of `F` converges.
pub fn transient_mass_after(chain: &TransitionKernel, k: usize) -> f64 {
    let f = transient_block(chain);
    let mut v = DVector::<f64>::from_element(f.nrows(), 1.0);
    for _ in 0..k {
        v = &f * v;
    }
    v.amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(rows: Vec<Vec<f64>>) -> TransitionKernel {
        TransitionKernel::from_rows(rows).unwrap()
    }

    #[test]
    fn induced_chain_examples() {
        let k1 = kernel(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]);
        let k2 = kernel(vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let single = induced_chain(std::slice::from_ref(&k1), &Proposal::uniform(3, 1)).unwrap();
        assert_eq!(single, k1);

        let mixed = induced_chain(&[k1, k2], &Proposal::uniform(3, 2)).unwrap();
        assert_eq!(mixed.row(0), &[0.0, 0.5, 0.5]);
        assert_eq!(mixed.row(1), &[0.5, 0.0, 0.5]);

        let ids = vec![TransitionKernel::identity(4); 3];
        assert_eq!(
            induced_chain(&ids, &Proposal::uniform(4, 3)).unwrap(),
            TransitionKernel::identity(4)
        );
    }

    #[test]
    fn time_to_go_examples() {
        // s0 -> s1 -> terminal
        let chain = kernel(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]);
        let j = solve_time_to_go(&chain).unwrap();
        assert!((j.get(0) - 2.0).abs() < 1e-12);
        assert!((j.get(1) - 1.0).abs() < 1e-12);
        assert_eq!(j.get(2), 0.0);

        // geometric: stay 0.5, exit 0.5
        let geo = kernel(vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert!((solve_time_to_go(&geo).unwrap().get(0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn absorbing_component_is_unsolvable() {
        let chain = kernel(vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]);
        assert!(matches!(solve_time_to_go(&chain), Err(AnalysisError::Unsolvable(_))));
        // two states trapped in a cycle
        let cycle = kernel(vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert!(solve_time_to_go(&cycle).is_err());
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]), 2.0);
        assert!((tv_distance(&[0.5, 0.5, 0.0], &[0.25, 0.25, 0.5]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eta_examples() {
        let p = kernel(vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.0, 0.0, 1.0]]);
        assert_eq!(compute_eta(std::slice::from_ref(&p), std::slice::from_ref(&p)).unwrap(), 0.0);
        // only row 1 differs: |0.5-0.35| + |0.5-0.65| = 0.3
        let q = kernel(vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.35, 0.65], vec![0.0, 0.0, 1.0]]);
        assert!((compute_eta(&[p], &[q]).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn delta_one_step_chain() {
        // every non-hallucinated action advances exactly one step on a chain
        let advance = kernel(vec![
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ]);
        let j = solve_time_to_go(&advance).unwrap();
        let d = min_improvement(&[advance, TransitionKernel::identity(4)], &[false, true], &j).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_constructed_quarter() {
        // J fixed by a reference chain: J = (3, 2, 1, 0).
        let reference = kernel(vec![
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ]);
        let j = solve_time_to_go(&reference).unwrap();
        // From s0: 0.75 stay, 0.25 to s1 -> improvement 0.25; other rows
        // improve by at least 1.
        let weak = kernel(vec![
            vec![0.75, 0.25, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ]);
        // exhaustive min over rows computed by hand: {0.25, 1, 1}
        let d = min_improvement(&[reference, weak], &[false, false], &j).unwrap();
        assert!((d - 0.25).abs() < 1e-12);
        assert_eq!(
            min_improvement(&[TransitionKernel::identity(4)], &[true], &j),
            Err(AnalysisError::NoNonHallucinated)
        );
    }

    #[test]
    fn filter_condition_formula() {
        let r = FilterConditionReport::from_parts(1.0, 0.0, 5.0, 5.0);
        assert_eq!(r.rhs, 0.0);
        assert!(r.holds);
        let r = FilterConditionReport::from_parts(1.0, 0.01, 5.0, 5.0);
        assert!((r.rhs - 0.6).abs() < 1e-12);
        assert!(r.holds);
        let r = FilterConditionReport::from_parts(1.0, 0.5, 5.0, 5.0);
        assert!((r.rhs - 30.0).abs() < 1e-12);
        assert!(!r.holds);
    }

    #[test]
    fn neumann_mass_vanishes_on_solvable_chain() {
        let geo = kernel(vec![vec![0.5, 0.25, 0.25], vec![0.1, 0.6, 0.3], vec![0.0, 0.0, 1.0]]);
        assert!(solve_time_to_go(&geo).is_ok());
        assert!(transient_mass_after(&geo, 1024) < 1e-12);
    }
}
