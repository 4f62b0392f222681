//! Desk-scale stand-ins for the real model: synthetic clustered scenes, a
//! dense quadratic interaction workload run per subscene, an exhaustive
//! partition oracle and partition-quality metrics.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::anchor_schedule::ExecutionPlan;
use crate::descriptor_io::DescriptorSet;
use crate::error::{Error, Result};
use crate::rng;
use crate::scene_graph::SimilarityGraph;
use crate::soft_partition::{group_loss, AssignmentMatrix, GroupWeights, Partition};

pub const DEFAULT_SYNTH_CHANNELS: usize = 32;
pub const DEFAULT_WORKLOAD_CHANNELS: usize = 16;
pub const DEFAULT_TOKEN_GUARD: usize = 65_536;
pub const MAX_ORACLE_PARTITIONS: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SceneParams {
    pub num_frames: usize,
    pub num_clusters: usize,
    pub noise_sigma: f64,
    pub channels: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub descriptors: DescriptorSet,
    pub true_labels: Vec<usize>,
    pub params: SceneParams,
}

pub fn synth_scene(n: usize, num_clusters: usize, noise_sigma: f64, seed: u64) -> Result<SyntheticScene> {
    synth_scene_with(SceneParams {
        num_frames: n,
        num_clusters,
        noise_sigma,
        channels: DEFAULT_SYNTH_CHANNELS,
        seed,
    })
}

/// Frames are split into contiguous runs, one per cluster. Each cluster gets
/// a random unit direction; each frame is its cluster direction plus
/// isotropic Gaussian noise.
pub fn synth_scene_with(params: SceneParams) -> Result<SyntheticScene> {
    let SceneParams {
        num_frames: n,
        num_clusters,
        noise_sigma,
        channels,
        seed,
    } = params;
    if num_clusters == 0 || num_clusters > n {
        return Err(Error::config(format!(
            "cluster count {num_clusters} must lie in [1, {n}]"
        )));
    }
    if channels == 0 {
        return Err(Error::config("channels must be at least 1"));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::config("noise sigma must be nonnegative"));
    }
    let mut rng = rng::stream(seed, rng::STREAM_SYNTH);
    let directions: Vec<Vec<f64>> = (0..num_clusters)
        .map(|_| loop {
            let v: Vec<f64> = (0..channels).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect();
    let true_labels: Vec<usize> = (0..n).map(|s| s * num_clusters / n).collect();
    let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("valid sigma"));
    let mut data = Vec::with_capacity(n * channels);
    for &label in &true_labels {
        for &d in &directions[label] {
            let e = noise.map_or(0.0, |dist| dist.sample(&mut rng));
            data.push((d + e) as f32);
        }
    }
    Ok(SyntheticScene {
        descriptors: DescriptorSet::new(n, channels, data)?,
        true_labels,
        params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionRun {
    pub duration: Duration,
    /// Multiply-adds performed: `m² · channels`.
    pub ops: u64,
    /// Token pairs scored: `m²`.
    pub pairs: u64,
    pub checksum: f64,
}

/// Global interaction over the tokens of frames `0..seq_len_frames`.
pub fn mock_global_attention(
    seq_len_frames: usize,
    tokens_per_frame: usize,
    channels: usize,
    seed: u64,
) -> Result<AttentionRun> {
    let frames: Vec<usize> = (0..seq_len_frames).collect();
    attend_frames(&frames, tokens_per_frame, channels, seed, DEFAULT_TOKEN_GUARD)
}

fn frame_tokens(frame: usize, tokens_per_frame: usize, channels: usize, seed: u64, out: &mut Vec<f32>) {
    let mut rng = rng::substream(seed, rng::STREAM_WORKLOAD, frame as u64);
    out.extend((0..tokens_per_frame * channels).map(|_| rng.gen_range(-1.0f32..1.0)));
}

/// Scores every token pair of the concatenated frames row by row and
/// reduces each score row into the checksum. Token features depend only on
/// `(seed, frame)`, so a frame contributes the same tokens in every subscene.
pub fn attend_frames(
    frames: &[usize],
    tokens_per_frame: usize,
    channels: usize,
    seed: u64,
    token_guard: usize,
) -> Result<AttentionRun> {
    if tokens_per_frame == 0 || channels == 0 {
        return Err(Error::config("tokens per frame and channels must be at least 1"));
    }
    let m = frames.len() * tokens_per_frame;
    if m > token_guard {
        return Err(Error::WorkloadTooLarge {
            tokens: m,
            guard: token_guard,
        });
    }
    let start = Instant::now();
    let mut x = Vec::with_capacity(m * channels);
    for &f in frames {
        frame_tokens(f, tokens_per_frame, channels, seed, &mut x);
    }
    let scale = 1.0 / (channels as f32).sqrt();
    let mut scores = vec![0.0f32; m];
    let mut checksum = 0.0f64;
    for qi in x.chunks_exact(channels) {
        for (score, kj) in scores.iter_mut().zip(x.chunks_exact(channels)) {
            *score = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
        }
        let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f64 = scores.iter().map(|&v| f64::from(v)).sum();
        checksum += f64::from(max) + sum / m as f64;
    }
    let pairs = (m as u64) * (m as u64);
    Ok(AttentionRun {
        duration: start.elapsed(),
        ops: pairs * channels as u64,
        pairs,
        checksum,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub workers: usize,
    pub total_ms: f64,
    pub per_subscene_ms: Vec<f64>,
    pub per_subscene_ops: Vec<u64>,
    pub per_subscene_pairs: Vec<u64>,
    pub measured_ops: u64,
    pub checksum: f64,
}

/// Runs the workload once per subscene, spreading subscenes over `workers`
/// threads. Results are collected in subscene order.
pub fn run_plan(
    plan: &ExecutionPlan,
    tokens_per_frame: usize,
    channels: usize,
    workers: usize,
    seed: u64,
) -> Result<BenchResult> {
    if workers == 0 {
        return Err(Error::config("workers must be at least 1"));
    }
    for seq in &plan.subscenes {
        let m = seq.len() * tokens_per_frame;
        if m > DEFAULT_TOKEN_GUARD {
            return Err(Error::WorkloadTooLarge {
                tokens: m,
                guard: DEFAULT_TOKEN_GUARD,
            });
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let runs: Vec<AttentionRun> = pool.install(|| {
        plan.subscenes
            .par_iter()
            .with_max_len(1)
            .map(|seq| attend_frames(seq, tokens_per_frame, channels, seed, DEFAULT_TOKEN_GUARD))
            .collect::<Result<_>>()
    })?;
    let total = start.elapsed();
    Ok(BenchResult {
        workers,
        total_ms: total.as_secs_f64() * 1e3,
        per_subscene_ms: runs.iter().map(|r| r.duration.as_secs_f64() * 1e3).collect(),
        per_subscene_ops: runs.iter().map(|r| r.ops).collect(),
        per_subscene_pairs: runs.iter().map(|r| r.pairs).collect(),
        measured_ops: runs.iter().map(|r| r.ops).sum(),
        checksum: runs.iter().map(|r| r.checksum).sum(),
    })
}

/// Stirling number of the second kind, saturating.
fn stirling2(n: usize, k: usize) -> u128 {
    let mut row = vec![0u128; k + 1];
    row[0] = 1;
    for i in 1..=n {
        for j in (1..=k.min(i)).rev() {
            row[j] = (j as u128).saturating_mul(row[j]).saturating_add(row[j - 1]);
        }
        row[0] = 0;
    }
    row[k]
}

/// Exhaustive minimum of the grouping loss over all partitions of the frames
/// into exactly `k` nonempty groups of at most `cap` frames.
///
/// Partitions are enumerated once each as restricted-growth strings in
/// lexicographic order; ties keep the first (smallest) string.
pub fn brute_force_partition(
    s: &SimilarityGraph,
    k: usize,
    w: &GroupWeights,
    cap: usize,
    anchor: usize,
) -> Result<(Partition, f64)> {
    let n = s.num_frames();
    if k == 0 || k > n {
        return Err(Error::config(format!("group count {k} must lie in [1, {n}]")));
    }
    if cap.saturating_mul(k) < n {
        return Err(Error::InfeasibleCap { cap, k, n });
    }
    let count = stirling2(n, k);
    if count > MAX_ORACLE_PARTITIONS {
        return Err(Error::TooLarge(format!(
            "{count} partitions of {n} frames into {k} groups exceed {MAX_ORACLE_PARTITIONS}"
        )));
    }

    struct Search<'a> {
        s: &'a SimilarityGraph,
        w: &'a GroupWeights,
        n: usize,
        k: usize,
        cap: usize,
        labels: Vec<usize>,
        sizes: Vec<usize>,
        best: Option<(Vec<usize>, f64)>,
        error: Option<Error>,
    }

    impl Search<'_> {
        fn visit(&mut self, pos: usize, used: usize) {
            if self.error.is_some() {
                return;
            }
            if pos == self.n {
                if used == self.k {
                    self.evaluate();
                }
                return;
            }
            if self.n - pos < self.k - used {
                return;
            }
            let limit = (used + 1).min(self.k);
            for g in 0..limit {
                if self.sizes[g] >= self.cap {
                    continue;
                }
                self.labels[pos] = g;
                self.sizes[g] += 1;
                self.visit(pos + 1, used.max(g + 1));
                self.sizes[g] -= 1;
            }
        }

        fn evaluate(&mut self) {
            let mut a = vec![0.0; self.n * self.k];
            for (f, &g) in self.labels.iter().enumerate() {
                a[f * self.k + g] = 1.0;
            }
            let a = AssignmentMatrix::new(self.n, self.k, a).expect("one-hot rows");
            match group_loss(&a, self.s, self.w) {
                Ok(loss) => {
                    if self.best.as_ref().is_none_or(|(_, b)| loss < *b) {
                        self.best = Some((self.labels.clone(), loss));
                    }
                }
                Err(e) => self.error = Some(e),
            }
        }
    }

    let mut search = Search {
        s,
        w,
        n,
        k,
        cap,
        labels: vec![0; n],
        sizes: vec![0; k],
        best: None,
        error: None,
    };
    search.visit(0, 0);
    if let Some(e) = search.error {
        return Err(e);
    }
    let (labels, loss) = search
        .best
        .ok_or(Error::InfeasibleCap { cap, k, n })?;
    Ok((Partition::from_labels(&labels, k, anchor)?, loss))
}

/// Grouping loss of a hard partition, evaluated on its one-hot encoding with
/// groups in canonical order.
pub fn partition_loss(p: &Partition, s: &SimilarityGraph, w: &GroupWeights) -> Result<f64> {
    group_loss(&AssignmentMatrix::one_hot(&p.canonical()), s, w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionMetrics {
    pub size_min: usize,
    pub size_max: usize,
    pub size_stddev: f64,
    /// Mean similarity over distinct same-group pairs; `None` if every group
    /// is a singleton.
    pub within_similarity: Option<f64>,
    /// Mean similarity over cross-group pairs; `None` for a single group.
    pub cross_similarity: Option<f64>,
    /// Fraction of frames whose true label is the majority label of their group.
    pub purity: f64,
}

pub fn partition_metrics(p: &Partition, true_labels: &[usize], s: &SimilarityGraph) -> PartitionMetrics {
    let sizes = p.sizes();
    let k = sizes.len() as f64;
    let mean = sizes.iter().sum::<usize>() as f64 / k;
    let var = sizes.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / k;

    let labels = p.labels();
    let n = p.n();
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if labels[i] == labels[j] {
                within += s.get(i, j);
                nw += 1;
            } else {
                cross += s.get(i, j);
                nc += 1;
            }
        }
    }

    let num_true = true_labels.iter().max().map_or(0, |m| m + 1);
    let majority: usize = p
        .groups()
        .iter()
        .map(|members| {
            let mut counts = vec![0usize; num_true];
            for &f in members {
                counts[true_labels[f]] += 1;
            }
            counts.into_iter().max().unwrap_or(0)
        })
        .sum();

    PartitionMetrics {
        size_min: sizes.iter().copied().min().unwrap_or(0),
        size_max: sizes.iter().copied().max().unwrap_or(0),
        size_stddev: var.sqrt(),
        within_similarity: (nw > 0).then(|| within / nw as f64),
        cross_similarity: (nc > 0).then(|| cross / nc as f64),
        purity: majority as f64 / n as f64,
    }
}
