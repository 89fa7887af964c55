//! Initiation-interval formulas for the pipeline modules.
//!
//! Every formula is affine in the in-degree `|N_i|` once the head count `k`
//! and the stage width `d` are fixed:
//!
//! `cycles = a*|N_i| + a_k*k*|N_i| + b*k + c*d + e`
//!
//! so the sum over all nodes depends only on `n` and `m`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IiFormula {
    pub per_degree: u64,
    pub per_head_degree: u64,
    pub per_head: u64,
    pub per_dim: u64,
    pub constant: u64,
}

impl IiFormula {
    pub const fn constant(cycles: u64) -> Self {
        Self {
            per_degree: 0,
            per_head_degree: 0,
            per_head: 0,
            per_dim: 0,
            constant: cycles,
        }
    }

    /// Memory read/write modules: one item per cycle.
    pub const MEMORY: Self = Self::constant(1);

    /// Neighbor aggregation: `4|N_i| + 2`.
    pub const AGGREGATION: Self = Self {
        per_degree: 4,
        ..Self::constant(2)
    };

    /// Grouped vector-matrix multiply followed by the sum tree: `d + 36`.
    pub const VMM: Self = Self {
        per_dim: 1,
        ..Self::constant(36)
    };

    /// GAT kernel 1 multi-headed element-wise multiply with `a_src`/`a_dest`: `k + 112`.
    pub const GAT_PROJECTION_MHEWM: Self = Self {
        per_head: 1,
        ..Self::constant(112)
    };

    /// GAT kernel 2 aggregation: `k|N_i| + 2k + 38`.
    pub const GAT_AGGREGATION: Self = Self {
        per_head_degree: 1,
        per_head: 2,
        ..Self::constant(38)
    };

    /// GAT kernel 2 softmax: `k|N_i| + k + 17`.
    pub const GAT_SOFTMAX: Self = Self {
        per_head_degree: 1,
        per_head: 1,
        ..Self::constant(17)
    };

    /// GAT kernel 2 multi-headed element-wise multiply: `k|N_i| + k + 14`.
    pub const GAT_MHEWM: Self = Self {
        per_head_degree: 1,
        per_head: 1,
        ..Self::constant(14)
    };

    /// Per-edge share of the GAT kernel 2 modules, `k` cycles per edge; used
    /// for the duplicated attention-logit stages.
    pub const GAT_EDGE_SCORE: Self = Self {
        per_head: 1,
        ..Self::constant(0)
    };

    /// MoNet pseudo-coordinate projection, per edge.
    pub const MONET_PSEUDO_VMM: Self = Self::constant(1);
    /// MoNet Gaussian weight computation, per edge.
    pub const MONET_GAUSSIAN: Self = Self::constant(1);
    /// MoNet weighted multi-head accumulation, per edge.
    pub const MONET_MHEWM_AGGREGATE: Self = Self::constant(4);
    /// MoNet multi-headed VMM: `d + k + 28`.
    pub const MONET_MHVMM: Self = Self {
        per_dim: 1,
        per_head: 1,
        ..Self::constant(28)
    };
    /// MoNet multi-head aggregation: `7k + 10`.
    pub const MONET_MH_AGGREGATE: Self = Self {
        per_head: 7,
        ..Self::constant(10)
    };

    /// GatedGCN soft attention: `10|N_i| + 72`.
    pub const GATED_SOFT_ATTENTION: Self = Self {
        per_degree: 10,
        ..Self::constant(72)
    };
    /// GatedGCN output sum: `31`.
    pub const GATED_SUM: Self = Self::constant(31);
    /// Two-input element-wise sum, shared by every model with a sum stage.
    pub const SUM: Self = Self::GATED_SUM;

    pub fn eval(&self, degree: u64, heads: u64, dim: u64) -> u64 {
        self.per_degree * degree
            + self.per_head_degree * heads * degree
            + self.per_head * heads
            + self.per_dim * dim
            + self.constant
    }

    /// Coefficient on `|N_i|` for fixed `k`.
    pub fn degree_slope(&self, heads: u64) -> u64 {
        self.per_degree + self.per_head_degree * heads
    }

    /// Value at `|N_i| = 0` for fixed `k` and `d`.
    pub fn intercept(&self, heads: u64, dim: u64) -> u64 {
        self.eval(0, heads, dim)
    }
}

/// Exact affine evaluation of `f` at the given degree and dimensions.
pub fn ii_eval(f: &IiFormula, degree: u64, heads: u64, dim: u64) -> u64 {
    f.eval(degree, heads, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_values() {
        assert_eq!(ii_eval(&IiFormula::AGGREGATION, 5, 1, 128), 22);
        assert_eq!(ii_eval(&IiFormula::GAT_SOFTMAX, 3, 8, 16), 49);
        assert_eq!(ii_eval(&IiFormula::MONET_MH_AGGREGATE, 0, 2, 64), 24);
        assert_eq!(ii_eval(&IiFormula::VMM, 0, 1, 128), 164);
        assert_eq!(ii_eval(&IiFormula::GAT_PROJECTION_MHEWM, 0, 8, 128), 120);
        assert_eq!(ii_eval(&IiFormula::GAT_AGGREGATION, 2, 8, 16), 8 * 2 + 16 + 38);
        assert_eq!(ii_eval(&IiFormula::GAT_MHEWM, 2, 8, 16), 16 + 8 + 14);
        assert_eq!(ii_eval(&IiFormula::MONET_MHVMM, 0, 2, 64), 94);
        assert_eq!(ii_eval(&IiFormula::GATED_SOFT_ATTENTION, 3, 1, 32), 102);
        assert_eq!(ii_eval(&IiFormula::GATED_SUM, 9, 1, 32), 31);
    }

    #[test]
    fn slope_and_intercept_reconstruct() {
        let f = IiFormula::GAT_AGGREGATION;
        for deg in 0..10 {
            assert_eq!(f.eval(deg, 8, 16), f.degree_slope(8) * deg + f.intercept(8, 16));
        }
    }
}
