use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::stream::RandomStream;

/// Row sums must match 1 within this tolerance after construction.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Looser tolerance applied to kernels loaded from JSON.
const LOAD_TOLERANCE: f64 = 1e-9;

/// Row-stochastic square matrix over `size` states; the last state is the
/// terminal one and its row is absorbing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct TransitionKernel {
    size: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    size: usize,
    /// Dense row-major entries.
    matrix: Vec<f64>,
}

impl TryFrom<KernelRepr> for TransitionKernel {
    type Error = ModelError;

    fn try_from(repr: KernelRepr) -> Result<Self, Self::Error> {
        let kernel = TransitionKernel {
            size: repr.size,
            data: repr.matrix,
        };
        kernel.validate_with(LOAD_TOLERANCE)?;
        Ok(kernel)
    }
}

impl From<TransitionKernel> for KernelRepr {
    fn from(k: TransitionKernel) -> Self {
        KernelRepr {
            size: k.size,
            matrix: k.data,
        }
    }
}

impl TransitionKernel {
    pub fn identity(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        for i in 0..size {
            data[i * size + i] = 1.0;
        }
        TransitionKernel { size, data }
    }

    /// Builds a kernel from explicit rows and validates it.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(ModelError::InvalidKernel("rows must be square".into()));
        }
        let kernel = TransitionKernel {
            size,
            data: rows.into_iter().flatten().collect(),
        };
        kernel.validate()?;
        Ok(kernel)
    }

    pub(crate) fn from_dense_unchecked(size: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), size * size);
        TransitionKernel { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn terminal(&self) -> usize {
        self.size - 1
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.size..(s + 1) * self.size]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        let n = self.size;
        &mut self.data[s * n..(s + 1) * n]
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.size + to]
    }

    pub fn sample_next(&self, from: usize, stream: &mut RandomStream) -> usize {
        stream.categorical(self.row(from))
    }

    pub fn is_point_mass(&self, from: usize, to: usize) -> bool {
        (self.get(from, to) - 1.0).abs() <= ROW_SUM_TOLERANCE
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.validate_with(ROW_SUM_TOLERANCE)
    }

    fn validate_with(&self, tol: f64) -> Result<(), ModelError> {
        if self.size == 0 || self.data.len() != self.size * self.size {
            return Err(ModelError::InvalidKernel(format!(
                "expected {0}x{0} entries, got {1}",
                self.size,
                self.data.len()
            )));
        }
        for s in 0..self.size {
            let row = self.row(s);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(ModelError::InvalidKernel(format!("row {s} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(ModelError::InvalidKernel(format!("row {s} sums to {sum}")));
            }
        }
        let t = self.terminal();
        if (self.get(t, t) - 1.0).abs() > tol {
            return Err(ModelError::InvalidKernel("terminal row is not absorbing".into()));
        }
        Ok(())
    }
}

/// Per-state categorical distribution over an action table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    n_states: usize,
    n_actions: usize,
    /// `n_states x n_actions`, each row normalized.
    weights: Vec<f64>,
}

impl Proposal {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Proposal {
            n_states,
            n_actions,
            weights: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Same (normalized) action weights in every state.
    pub fn state_independent(n_states: usize, weights: &[f64]) -> Result<Self, ModelError> {
        Self::per_state(vec![weights.to_vec(); n_states])
    }

    pub fn per_state(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return Err(ModelError::InvalidProposal("empty proposal".into()));
        }
        let mut weights = Vec::with_capacity(n_states * n_actions);
        for (s, row) in rows.into_iter().enumerate() {
            if row.len() != n_actions {
                return Err(ModelError::InvalidProposal(format!("row {s} has wrong length")));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(ModelError::InvalidProposal(format!("row {s} has a negative weight")));
            }
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(ModelError::InvalidProposal(format!("row {s} has no mass")));
            }
            weights.extend(row.iter().map(|w| w / total));
        }
        Ok(Proposal {
            n_states,
            n_actions,
            weights,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.weights[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn sample(&self, s: usize, stream: &mut RandomStream) -> usize {
        stream.categorical(self.row(s))
    }
}
