//! Cosine-similarity scene graph, scene density and the adaptive group count.

use rayon::prelude::*;
use serde::Serialize;

use crate::descriptor_io::DescriptorSet;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.75;
pub const DEFAULT_K_MAX: usize = 8;

/// Dense N×N frame similarity matrix, row-major, stored in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    num_frames: usize,
    matrix: Vec<f64>,
}

impl SimilarityGraph {
    /// Wraps an existing matrix. It must be square, finite, symmetric to
    /// within 1e-6 and have entries in [-1, 1].
    pub fn from_matrix(num_frames: usize, matrix: Vec<f64>) -> Result<Self> {
        if num_frames == 0 || matrix.len() != num_frames * num_frames {
            return Err(Error::config(format!(
                "similarity matrix of {} entries is not {num_frames}x{num_frames}",
                matrix.len()
            )));
        }
        for i in 0..num_frames {
            for j in 0..num_frames {
                let v = matrix[i * num_frames + j];
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::config(format!("S[{i}][{j}] = {v} outside [-1, 1]")));
                }
                if (v - matrix[j * num_frames + i]).abs() > 1e-6 {
                    return Err(Error::config(format!("S is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { num_frames, matrix })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.num_frames + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.num_frames..(i + 1) * self.num_frames]
    }

    /// Reorders frames so that new frame `i` is old frame `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.num_frames;
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                matrix[i * n + j] = self.get(perm[i], perm[j]);
            }
        }
        Self {
            num_frames: n,
            matrix,
        }
    }

    /// Min / mean / max over off-diagonal entries (the diagonal when N = 1).
    pub fn stats(&self) -> SimilarityStats {
        let n = self.num_frames;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            for j in 0..n {
                if i == j && n > 1 {
                    continue;
                }
                let v = self.get(i, j);
                min = min.min(v);
                max = max.max(v);
                sum += v;
                count += 1;
            }
        }
        SimilarityStats {
            min,
            mean: sum / count as f64,
            max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Per-frame neighbour counts above a similarity threshold and their mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityEstimate {
    pub per_frame_counts: Vec<usize>,
    pub density: f64,
    pub threshold: f64,
}

/// Pairwise cosine similarity between frame descriptors.
///
/// Rows are computed in parallel; every entry depends only on its own pair,
/// so the result does not depend on the thread count.
pub fn similarity_matrix(set: &DescriptorSet) -> Result<SimilarityGraph> {
    let n = set.num_frames();
    let sq_norms: Vec<f64> = set.rows().map(|r| dot(r, r)).collect();
    let zero: Vec<usize> = sq_norms
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 0.0)
        .map(|(i, _)| i)
        .collect();
    if !zero.is_empty() {
        return Err(Error::ZeroNorm { frames: zero });
    }

    let mut matrix = vec![0.0; n * n];
    matrix
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out)| {
            let di = set.row(i);
            for (j, slot) in out.iter_mut().enumerate() {
                *slot = if i == j {
                    1.0
                } else {
                    let c = dot(di, set.row(j)) / (sq_norms[i] * sq_norms[j]).sqrt();
                    c.clamp(-1.0, 1.0)
                };
            }
        });
    Ok(SimilarityGraph {
        num_frames: n,
        matrix,
    })
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Counts, for every frame, the other frames whose similarity exceeds
/// `threshold`, and averages the counts.
pub fn density(graph: &SimilarityGraph, threshold: f64) -> Result<DensityEstimate> {
    if !(threshold > -1.0 && threshold < 1.0) {
        return Err(Error::config(format!(
            "threshold {threshold} must lie in (-1, 1)"
        )));
    }
    let n = graph.num_frames;
    let per_frame_counts: Vec<usize> = (0..n)
        .map(|i| {
            graph
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, &v)| j != i && v > threshold)
                .count()
        })
        .collect();
    let density = per_frame_counts.iter().sum::<usize>() as f64 / n as f64;
    Ok(DensityEstimate {
        per_frame_counts,
        density,
        threshold,
    })
}

/// Number of subscenes: `override_k` if given, otherwise the density rounded
/// half away from zero and clamped to `[1, min(k_max, n)]`.
pub fn group_count(
    est: &DensityEstimate,
    k_max: usize,
    n: usize,
    override_k: Option<usize>,
) -> Result<usize> {
    if k_max == 0 {
        return Err(Error::config("k_max must be at least 1"));
    }
    if let Some(k) = override_k {
        if k == 0 || k > n {
            return Err(Error::config(format!(
                "group override {k} must lie in [1, {n}]"
            )));
        }
        return Ok(k);
    }
    let upper = k_max.min(n).max(1);
    let rounded = est.density.round();
    Ok((rounded.max(1.0) as usize).clamp(1, upper))
}
