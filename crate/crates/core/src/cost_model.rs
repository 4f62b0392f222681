//! Closed-form cost of global attention, baseline vs. partitioned.
//!
//! One operation is one token-pair interaction. Global attention over `m`
//! tokens costs `m²`; the partitioning step adds `N²` for frame-level
//! similarity and assignment. Frame-wise attention is identical in both
//! executions and is left out.

use serde::Serialize;

use crate::anchor_schedule::ExecutionPlan;

pub const DEFAULT_TOKENS_PER_FRAME: usize = 1000;

/// Camera and register tokens added to each frame's patch tokens.
pub const EXTRA_TOKENS_PER_FRAME: usize = 5;

/// Tokens per frame for `patches` patch tokens.
pub fn tokens_for_patches(patches: usize) -> usize {
    patches + EXTRA_TOKENS_PER_FRAME
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub num_frames: usize,
    pub num_subscenes: usize,
    pub tokens_per_frame: usize,
    pub baseline_ops: f64,
    pub partitioned_ops: f64,
    pub overhead_ops: f64,
    /// `baseline / (partitioned + overhead)`.
    pub speedup: f64,
    /// `baseline / partitioned`, the attention-only ratio.
    pub attention_speedup: f64,
    pub per_subscene_ops: Vec<f64>,
}

pub fn attention_cost(num_frames: usize, tokens_per_frame: usize) -> f64 {
    let m = num_frames as f64 * tokens_per_frame as f64;
    m * m
}

pub fn plan_cost(plan: &ExecutionPlan, tokens_per_frame: usize) -> CostReport {
    let lengths: Vec<f64> = plan.subscenes.iter().map(|s| s.len() as f64).collect();
    cost_from_lengths(plan.n, &lengths, tokens_per_frame)
}

/// Cost for subscenes of the given frame counts. Lengths may be fractional
/// for idealised what-if plans.
pub fn cost_from_lengths(num_frames: usize, lengths: &[f64], tokens_per_frame: usize) -> CostReport {
    let t = tokens_per_frame as f64;
    let per_subscene_ops: Vec<f64> = lengths.iter().map(|&l| (l * t) * (l * t)).collect();
    let partitioned_ops: f64 = per_subscene_ops.iter().sum();
    let n = num_frames as f64;
    let overhead_ops = n * n;
    let baseline_ops = attention_cost(num_frames, tokens_per_frame);
    CostReport {
        num_frames,
        num_subscenes: lengths.len(),
        tokens_per_frame,
        baseline_ops,
        partitioned_ops,
        overhead_ops,
        speedup: baseline_ops / (partitioned_ops + overhead_ops),
        attention_speedup: baseline_ops / partitioned_ops,
        per_subscene_ops,
    }
}

/// `k` equal subscenes of `n / k` frames with no anchor duplication.
pub fn idealized_cost(num_frames: usize, k: usize, tokens_per_frame: usize) -> CostReport {
    let len = num_frames as f64 / k as f64;
    cost_from_lengths(num_frames, &vec![len; k], tokens_per_frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor_schedule::build_plan;
    use crate::soft_partition::Partition;
    use proptest::prelude::*;

    fn contiguous_plan(n: usize, k: usize) -> ExecutionPlan {
        let labels: Vec<usize> = (0..n).map(|s| s * k / n).collect();
        build_plan(&Partition::from_labels(&labels, k, 0).unwrap())
    }

    #[test]
    fn attention_cost_examples() {
        assert_eq!(attention_cost(1, 1), 1.0);
        assert_eq!(attention_cost(10, 100), 1e6);
        assert_eq!(attention_cost(20, 100), 4.0 * attention_cost(10, 100));
        assert_eq!(tokens_for_patches(995), 1000);
    }

    #[test]
    fn single_group_close_to_baseline() {
        for t in [32, 100, 1000] {
            let r = plan_cost(&contiguous_plan(50, 1), t);
            assert!(r.speedup >= 0.999 && r.speedup < 1.0, "{}", r.speedup);
            assert_eq!(r.partitioned_ops, attention_cost(50, t));
            assert_eq!(r.partitioned_ops + r.overhead_ops - r.baseline_ops, 2500.0);
        }
    }

    #[test]
    fn eight_subscenes_of_sixty_five() {
        // 512 baseline frames against eight 65-frame subscenes.
        let r = cost_from_lengths(512, &[65.0; 8], 1000);
        assert_eq!(r.attention_speedup, 262144.0 / 33800.0);
        assert!((r.speedup - 262144.0 / 33800.0).abs() < 1e-4);
        assert!((r.speedup - 7.756).abs() < 0.01);
    }

    #[test]
    fn valid_plan_of_512_frames() {
        // The anchor's own subscene holds 64 frames, the other seven 65.
        let plan = contiguous_plan(512, 8);
        assert_eq!(plan.subscene_lengths(), vec![64, 65, 65, 65, 65, 65, 65, 65]);
        let r = plan_cost(&plan, 1000);
        let want = 512.0f64.powi(2) * 1e6 / ((64.0f64.powi(2) + 7.0 * 65.0f64.powi(2)) * 1e6 + 512.0f64.powi(2));
        assert!((r.speedup - want).abs() < 1e-9);
        assert!((r.speedup - 7.7854).abs() < 1e-4);
    }

    #[test]
    fn idealized_speedup_is_k() {
        for k in [1, 2, 4, 8, 16] {
            assert_eq!(idealized_cost(512, k, 1000).attention_speedup, k as f64);
        }
    }

    proptest! {
        #[test]
        fn speedup_bounded_and_monotone(n in 16usize..400, t in 1usize..2000) {
            let kmax = (n as f64).sqrt() as usize;
            let mut prev = 0.0;
            for k in (1..=kmax).filter(|k| n % k == 0) {
                let r = plan_cost(&contiguous_plan(n, k), t);
                prop_assert!(r.speedup <= k as f64);
                prop_assert!(r.speedup > prev);
                prev = r.speedup;
            }
        }

        #[test]
        fn overhead_negligible(n in 1usize..300, k in 1usize..9, t in 100usize..3000) {
            prop_assume!(k <= n);
            let r = plan_cost(&contiguous_plan(n, k), t);
            prop_assert!(r.overhead_ops / r.partitioned_ops < 1e-3);
            prop_assert!(r.per_subscene_ops.iter().all(|&v| v > 0.0));
        }
    }
}
