//! Cost accounting in forward-equivalents: a forward pass costs 1, an
//! input-gradient pass costs 2.

use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Default)]
pub struct FlopLedger {
    forward: AtomicU64,
    backward: AtomicU64,
    vector_ops: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub forward: u64,
    pub backward: u64,
    pub vector_ops: u64,
}

impl LedgerSnapshot {
    pub const BACKWARD_WEIGHT: u64 = 2;

    pub fn forward_equivalents(&self) -> u64 {
        self.forward + Self::BACKWARD_WEIGHT * self.backward
    }

    pub fn model_calls(&self) -> u64 {
        self.forward + self.backward
    }

    /// Counts accrued since `earlier`.
    pub fn since(&self, earlier: &LedgerSnapshot) -> LedgerSnapshot {
        LedgerSnapshot {
            forward: self.forward - earlier.forward,
            backward: self.backward - earlier.backward,
            vector_ops: self.vector_ops - earlier.vector_ops,
        }
    }
}

impl std::ops::Add for LedgerSnapshot {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            forward: self.forward + o.forward,
            backward: self.backward + o.backward,
            vector_ops: self.vector_ops + o.vector_ops,
        }
    }
}

impl FlopLedger {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn add_forward(&self, n: u64) {
        self.forward.fetch_add(n, Ordering::Relaxed);
    }
    pub fn add_backward(&self, n: u64) {
        self.backward.fetch_add(n, Ordering::Relaxed);
    }
    pub fn add_vector_ops(&self, n: u64) {
        self.vector_ops.fetch_add(n, Ordering::Relaxed);
    }
    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            forward: self.forward.load(Ordering::Relaxed),
            backward: self.backward.load(Ordering::Relaxed),
            vector_ops: self.vector_ops.load(Ordering::Relaxed),
        }
    }
    pub fn reset(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            forward: self.forward.swap(0, Ordering::Relaxed),
            backward: self.backward.swap(0, Ordering::Relaxed),
            vector_ops: self.vector_ops.swap(0, Ordering::Relaxed),
        }
    }
}

/// Forward-equivalent ratio `baseline / method`.
pub fn speedup(baseline: &LedgerSnapshot, method: &LedgerSnapshot) -> Option<f64> {
    let m = method.forward_equivalents();
    (m > 0).then(|| baseline.forward_equivalents() as f64 / m as f64)
}
