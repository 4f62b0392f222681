//! Soft assignment of frames to subscenes.
//!
//! Frames are assigned through a row-wise softmax of an N×K logit matrix.
//! Gradient descent on the logits minimises
//!
//! ```text
//! L_group = λ_coh Σ_k ‖h_k − h_avg‖² + λ_bal Σ_k (m_k − N/K)² + λ_sharp Σ_s Σ_k A_sk (1 − A_sk)
//! ```
//!
//! where `m_k = Σ_s A_sk`, `h_k = (1/m_k) Σ_s A_sk S_s:` and `h_avg` is the
//! mean similarity row. The soft result is hardened by row argmax and then
//! greedily rebalanced under a per-group size cap.

use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;
use crate::scene_graph::SimilarityGraph;

pub const DEFAULT_LOGIT_GUARD: f64 = 50.0;
pub const MIN_GROUP_SIZE: f64 = 1e-8;
pub const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    n: usize,
    k: usize,
    z: Vec<f64>,
}

impl LogitMatrix {
    pub fn new(n: usize, k: usize, z: Vec<f64>) -> Result<Self> {
        Self::with_guard(n, k, z, DEFAULT_LOGIT_GUARD)
    }

    pub fn with_guard(n: usize, k: usize, z: Vec<f64>, guard: f64) -> Result<Self> {
        if n == 0 || k == 0 || z.len() != n * k {
            return Err(Error::config(format!(
                "logit matrix of {} entries is not {n}x{k}",
                z.len()
            )));
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite() || v.abs() > guard) {
            return Err(Error::config(format!(
                "logit ({}, {}) = {} is non-finite or beyond ±{guard}",
                i / k,
                i % k,
                z[i]
            )));
        }
        Ok(Self { n, k, z })
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            z: vec![0.0; n * k],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }
}

/// Row-stochastic N×K membership matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    n: usize,
    k: usize,
    a: Vec<f64>,
}

impl AssignmentMatrix {
    pub fn new(n: usize, k: usize, a: Vec<f64>) -> Result<Self> {
        if n == 0 || k == 0 || a.len() != n * k {
            return Err(Error::config(format!(
                "assignment matrix of {} entries is not {n}x{k}",
                a.len()
            )));
        }
        for (s, row) in a.chunks_exact(k).enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::config(format!("row {s} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::config(format!("row {s} sums to {sum}")));
            }
        }
        Ok(Self { n, k, a })
    }

    pub fn uniform(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            a: vec![1.0 / k as f64; n * k],
        }
    }

    /// One-hot encoding of a partition, column `g` for group `g`.
    pub fn one_hot(p: &Partition) -> Self {
        let mut a = vec![0.0; p.n * p.k()];
        for (g, members) in p.groups.iter().enumerate() {
            for &s in members {
                a[s * p.k() + g] = 1.0;
            }
        }
        Self { n: p.n, k: p.k(), a }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.a
    }

    #[inline]
    pub fn get(&self, s: usize, k: usize) -> f64 {
        self.a[s * self.k + k]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.a[s * self.k..(s + 1) * self.k]
    }

    /// Soft group sizes `m_k`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.k];
        for row in self.a.chunks_exact(self.k) {
            for (mk, v) in m.iter_mut().zip(row) {
                *mk += v;
            }
        }
        m
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.a.iter().map(|&v| v as f32).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupWeights {
    pub coh: f64,
    pub bal: f64,
    pub sharp: f64,
}

impl GroupWeights {
    pub fn new(coh: f64, bal: f64, sharp: f64) -> Result<Self> {
        let w = [coh, bal, sharp];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::config("loss weights must not all be zero"));
        }
        Ok(Self { coh, bal, sharp })
    }

    /// λ_coh = 1, λ_bal = 1/N, λ_sharp = 0.1.
    pub fn defaults_for(n: usize) -> Self {
        Self {
            coh: 1.0,
            bal: 1.0 / n.max(1) as f64,
            sharp: 0.1,
        }
    }
}

/// Hard assignment of every frame to exactly one of K nonempty groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    n: usize,
    groups: Vec<Vec<usize>>,
    anchor: usize,
}

impl Partition {
    pub fn new(n: usize, mut groups: Vec<Vec<usize>>, anchor: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::config("partition needs at least one group"));
        }
        if anchor >= n {
            return Err(Error::config(format!("anchor {anchor} outside 0..{n}")));
        }
        let mut seen = vec![false; n];
        for (g, members) in groups.iter_mut().enumerate() {
            if members.is_empty() {
                return Err(Error::config(format!("group {g} is empty")));
            }
            members.sort_unstable();
            for &s in members.iter() {
                if s >= n {
                    return Err(Error::config(format!("frame {s} outside 0..{n}")));
                }
                if std::mem::replace(&mut seen[s], true) {
                    return Err(Error::config(format!("frame {s} assigned twice")));
                }
            }
        }
        if let Some(s) = seen.iter().position(|v| !v) {
            return Err(Error::config(format!("frame {s} unassigned")));
        }
        Ok(Self { n, groups, anchor })
    }

    /// Builds a partition from per-frame group labels in `0..k`.
    pub fn from_labels(labels: &[usize], k: usize, anchor: usize) -> Result<Self> {
        let mut groups = vec![Vec::new(); k];
        for (s, &g) in labels.iter().enumerate() {
            if g >= k {
                return Err(Error::config(format!("label {g} of frame {s} outside 0..{k}")));
            }
            groups[g].push(s);
        }
        Self::new(labels.len(), groups, anchor)
    }

    /// `k` groups of consecutive frames whose sizes differ by at most one.
    pub fn contiguous(n: usize, k: usize, anchor: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::config(format!("group count {k} must lie in [1, {n}]")));
        }
        let labels: Vec<usize> = (0..n).map(|s| s * k / n).collect();
        Self::from_labels(&labels, k, anchor)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.n];
        for (g, members) in self.groups.iter().enumerate() {
            for &s in members {
                labels[s] = g;
            }
        }
        labels
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Same partition with groups ordered by their smallest frame.
    pub fn canonical(&self) -> Self {
        let mut groups = self.groups.clone();
        groups.sort_unstable_by_key(|g| g[0]);
        Self {
            n: self.n,
            groups,
            anchor: self.anchor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeConfig {
    pub iterations: usize,
    pub step: f64,
    pub seed: u64,
    pub init_noise: f64,
    pub backtracking: bool,
    pub logit_guard: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            step: 0.5,
            seed: 0,
            init_noise: 0.01,
            backtracking: true,
            logit_guard: DEFAULT_LOGIT_GUARD,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::config("step must be positive"));
        }
        if !(self.init_noise.is_finite() && self.init_noise >= 0.0) {
            return Err(Error::config("init_noise must be nonnegative"));
        }
        if !(self.logit_guard.is_finite() && self.logit_guard > 0.0) {
            return Err(Error::config("logit guard must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub assignment: AssignmentMatrix,
    pub logits: LogitMatrix,
    /// Loss at the initial point followed by the loss after each iteration.
    pub loss_trace: Vec<f64>,
}

/// Row-wise softmax with max subtraction.
pub fn soft_assign(z: &LogitMatrix) -> AssignmentMatrix {
    let k = z.k;
    let mut a = Vec::with_capacity(z.z.len());
    for row in z.z.chunks_exact(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = a.len();
        a.extend(row.iter().map(|v| (v - max).exp()));
        let sum: f64 = a[start..].iter().sum();
        a[start..].iter_mut().for_each(|v| *v /= sum);
    }
    AssignmentMatrix { n: z.n, k, a }
}

/// Group means, global mean and soft sizes shared by the coherence loss and
/// its gradient.
struct CoherenceTerms {
    sizes: Vec<f64>,
    /// K×N group mean rows.
    means: Vec<f64>,
    global: Vec<f64>,
}

impl CoherenceTerms {
    fn compute(a: &AssignmentMatrix, s: &SimilarityGraph) -> Result<Self> {
        let (n, k) = (a.n, a.k);
        if s.num_frames() != n {
            return Err(Error::config(format!(
                "assignment has {n} frames, similarity graph has {}",
                s.num_frames()
            )));
        }
        let sizes = a.column_sums();
        if let Some((g, &m)) = sizes.iter().enumerate().find(|(_, &m)| m < MIN_GROUP_SIZE) {
            return Err(Error::DegenerateGroup {
                group: g,
                size: m,
                iteration: None,
            });
        }
        let mut means = vec![0.0; k * n];
        let mut global = vec![0.0; n];
        for src in 0..n {
            let row = s.row(src);
            for (gv, &v) in global.iter_mut().zip(row) {
                *gv += v;
            }
            for g in 0..k {
                let w = a.get(src, g);
                if w != 0.0 {
                    for (h, &v) in means[g * n..(g + 1) * n].iter_mut().zip(row) {
                        *h += w * v;
                    }
                }
            }
        }
        for (g, m) in sizes.iter().enumerate() {
            means[g * n..(g + 1) * n].iter_mut().for_each(|h| *h /= m);
        }
        global.iter_mut().for_each(|v| *v /= n as f64);
        Ok(Self {
            sizes,
            means,
            global,
        })
    }

    fn loss(&self) -> f64 {
        let n = self.global.len();
        self.means
            .chunks_exact(n)
            .map(|h| {
                h.iter()
                    .zip(&self.global)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Σ_k ‖h_k − h_avg‖².
pub fn coherence_loss(a: &AssignmentMatrix, s: &SimilarityGraph) -> Result<f64> {
    Ok(CoherenceTerms::compute(a, s)?.loss())
}

/// Σ_k (m_k − N/K)².
pub fn balance_loss(a: &AssignmentMatrix) -> f64 {
    let target = a.n as f64 / a.k as f64;
    a.column_sums().iter().map(|m| (m - target).powi(2)).sum()
}

/// Σ_s Σ_k A_sk (1 − A_sk).
pub fn sharpness_loss(a: &AssignmentMatrix) -> f64 {
    a.a.iter().map(|v| v * (1.0 - v)).sum()
}

pub fn group_loss(a: &AssignmentMatrix, s: &SimilarityGraph, w: &GroupWeights) -> Result<f64> {
    let coh = if w.coh != 0.0 {
        coherence_loss(a, s)?
    } else {
        0.0
    };
    Ok(w.coh * coh + w.bal * balance_loss(a) + w.sharp * sharpness_loss(a))
}

/// Loss and exact gradient of `group_loss(soft_assign(z))` with respect to
/// the logits.
pub fn group_loss_grad(
    z: &LogitMatrix,
    s: &SimilarityGraph,
    w: &GroupWeights,
) -> Result<(f64, Vec<f64>)> {
    let a = soft_assign(z);
    let (loss, grad_a) = loss_and_assignment_grad(&a, s, w)?;
    Ok((loss, softmax_backward(&a, &grad_a)))
}

/// Loss and gradient with respect to the entries of A.
fn loss_and_assignment_grad(
    a: &AssignmentMatrix,
    s: &SimilarityGraph,
    w: &GroupWeights,
) -> Result<(f64, Vec<f64>)> {
    let (n, k) = (a.n, a.k);
    let mut grad = vec![0.0; n * k];
    let mut loss = 0.0;

    if w.coh != 0.0 {
        let terms = CoherenceTerms::compute(a, s)?;
        loss += w.coh * terms.loss();
        // dL/dA_sk = (2/m_k) (S_s: − h_k)·(h_k − h_avg)
        let mut resid = vec![0.0; k * n];
        let mut offset = vec![0.0; k];
        for g in 0..k {
            let h = &terms.means[g * n..(g + 1) * n];
            let r = &mut resid[g * n..(g + 1) * n];
            for ((rv, hv), gv) in r.iter_mut().zip(h).zip(&terms.global) {
                *rv = hv - gv;
            }
            offset[g] = h.iter().zip(r.iter()).map(|(x, y)| x * y).sum();
        }
        for src in 0..n {
            let row = s.row(src);
            for g in 0..k {
                let r = &resid[g * n..(g + 1) * n];
                let proj: f64 = row.iter().zip(r).map(|(x, y)| x * y).sum();
                grad[src * k + g] += w.coh * 2.0 / terms.sizes[g] * (proj - offset[g]);
            }
        }
    }

    if w.bal != 0.0 {
        let target = n as f64 / k as f64;
        let m = a.column_sums();
        loss += w.bal * m.iter().map(|v| (v - target).powi(2)).sum::<f64>();
        for row in grad.chunks_exact_mut(k) {
            for (gv, mk) in row.iter_mut().zip(&m) {
                *gv += w.bal * 2.0 * (mk - target);
            }
        }
    }

    if w.sharp != 0.0 {
        loss += w.sharp * sharpness_loss(a);
        for (gv, av) in grad.iter_mut().zip(&a.a) {
            *gv += w.sharp * (1.0 - 2.0 * av);
        }
    }

    Ok((loss, grad))
}

/// Chain rule through the row softmax: dz_sk = A_sk (G_sk − Σ_j A_sj G_sj).
fn softmax_backward(a: &AssignmentMatrix, grad_a: &[f64]) -> Vec<f64> {
    let k = a.k;
    let mut out = vec![0.0; grad_a.len()];
    for ((o, ar), gr) in out
        .chunks_exact_mut(k)
        .zip(a.a.chunks_exact(k))
        .zip(grad_a.chunks_exact(k))
    {
        let inner: f64 = ar.iter().zip(gr).map(|(x, y)| x * y).sum();
        for ((ov, av), gv) in o.iter_mut().zip(ar).zip(gr) {
            *ov = av * (gv - inner);
        }
    }
    out
}

/// Gradient descent on the logits from a seeded near-uniform start.
///
/// With backtracking on, a step that raises the loss is halved up to
/// [`MAX_HALVINGS`] times and dropped if it never improves, so the trace is
/// non-increasing. A trial point with a degenerate group counts as a rise.
pub fn optimize(
    s: &SimilarityGraph,
    k: usize,
    w: &GroupWeights,
    cfg: &OptimizeConfig,
) -> Result<OptimizeResult> {
    cfg.validate()?;
    let n = s.num_frames();
    if k == 0 || k > n {
        return Err(Error::config(format!("group count {k} must lie in [1, {n}]")));
    }

    let mut rng = rng::stream(cfg.seed, rng::STREAM_OPTIMIZE);
    let guard = cfg.logit_guard;
    let mut z: Vec<f64> = if cfg.init_noise > 0.0 {
        let normal = Normal::new(0.0, cfg.init_noise).expect("valid sigma");
        (0..n * k)
            .map(|_| normal.sample(&mut rng).clamp(-guard, guard))
            .collect()
    } else {
        vec![0.0; n * k]
    };

    let with_iter = |e: Error, it: usize| match e {
        Error::DegenerateGroup { group, size, .. } => Error::DegenerateGroup {
            group,
            size,
            iteration: Some(it),
        },
        other => other,
    };

    let logits = |z: Vec<f64>| LogitMatrix { n, k, z };
    let mut current = logits(z.clone());
    let (mut loss, mut grad) = group_loss_grad(&current, s, w).map_err(|e| with_iter(e, 0))?;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(loss);

    for it in 1..=cfg.iterations {
        let mut step = cfg.step;
        let mut accepted = None;
        for attempt in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = z
                .iter()
                .zip(&grad)
                .map(|(zv, g)| (zv - step * g).clamp(-guard, guard))
                .collect();
            let trial = logits(trial);
            match group_loss_grad(&trial, s, w) {
                Ok((l, g)) if !cfg.backtracking || l <= loss => {
                    accepted = Some((trial, l, g));
                    break;
                }
                Ok(_) | Err(Error::DegenerateGroup { .. })
                    if cfg.backtracking && attempt < MAX_HALVINGS =>
                {
                    step *= 0.5;
                }
                Ok(_) => break,
                Err(Error::DegenerateGroup { .. }) if cfg.backtracking => break,
                Err(e) => return Err(with_iter(e, it)),
            }
        }
        if let Some((trial, l, g)) = accepted {
            z.clone_from(&trial.z);
            current = trial;
            loss = l;
            grad = g;
        }
        trace.push(loss);
    }

    Ok(OptimizeResult {
        assignment: soft_assign(&current),
        logits: current,
        loss_trace: trace,
    })
}

/// Assigns each frame to its highest-membership group (ties to the lowest
/// index), then fills empty groups: for each empty group in ascending order,
/// the frame with the largest membership in it is moved over, taken only
/// from groups that keep at least one member.
pub fn harden(a: &AssignmentMatrix, anchor: usize) -> Result<Partition> {
    let (n, k) = (a.n, a.k);
    if k > n {
        return Err(Error::config(format!("cannot fill {k} groups with {n} frames")));
    }
    let mut labels: Vec<usize> = (0..n)
        .map(|s| {
            let row = a.row(s);
            let mut best = 0;
            for (g, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = g;
                }
            }
            best
        })
        .collect();
    let mut sizes = vec![0usize; k];
    for &g in &labels {
        sizes[g] += 1;
    }
    for g in 0..k {
        if sizes[g] > 0 {
            continue;
        }
        let donor = (0..n)
            .filter(|&s| sizes[labels[s]] >= 2)
            .fold(None::<usize>, |best, s| match best {
                Some(b) if a.get(b, g) >= a.get(s, g) => Some(b),
                _ => Some(s),
            })
            .expect("k <= n leaves a group with two members");
        sizes[labels[donor]] -= 1;
        labels[donor] = g;
        sizes[g] = 1;
    }
    Partition::from_labels(&labels, k, anchor)
}

/// One frame moved by [`rebalance_traced`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FrameMove {
    pub frame: usize,
    pub from: usize,
    pub to: usize,
}

pub fn default_cap(n: usize, k: usize) -> usize {
    n.div_ceil(k) + 1
}

pub fn rebalance(p: &Partition, s: &SimilarityGraph, cap: usize) -> Result<Partition> {
    rebalance_traced(p, s, cap).map(|(p, _)| p)
}

/// Enforces `size <= cap` on every group. While some group is over the cap
/// (lowest index first), its member with the lowest mean similarity to the
/// rest of the group moves to the under-cap group it is most similar to on
/// average. Ties go to the lowest frame, then the lowest group.
pub fn rebalance_traced(
    p: &Partition,
    s: &SimilarityGraph,
    cap: usize,
) -> Result<(Partition, Vec<FrameMove>)> {
    let (n, k) = (p.n, p.k());
    if s.num_frames() != n {
        return Err(Error::config(format!(
            "partition has {n} frames, similarity graph has {}",
            s.num_frames()
        )));
    }
    if cap.saturating_mul(k) < n {
        return Err(Error::InfeasibleCap { cap, k, n });
    }
    let mut groups = p.groups.clone();
    let mut moves = Vec::new();
    let mean_sim = |frame: usize, members: &[usize]| -> f64 {
        let (sum, count) = members
            .iter()
            .filter(|&&m| m != frame)
            .fold((0.0, 0usize), |(acc, c), &m| (acc + s.get(frame, m), c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    };

    while let Some(from) = groups.iter().position(|g| g.len() > cap) {
        let members = &groups[from];
        // Members are sorted, so a strict comparison keeps the lowest frame.
        let mut weakest = members[0];
        let mut weakest_sim = mean_sim(weakest, members);
        for &m in &members[1..] {
            let v = mean_sim(m, members);
            if v < weakest_sim {
                weakest = m;
                weakest_sim = v;
            }
        }
        let mut to = None::<(usize, f64)>;
        for (g, target) in groups.iter().enumerate() {
            if g == from || target.len() >= cap {
                continue;
            }
            let v = mean_sim(weakest, target);
            if to.is_none_or(|(_, best)| v > best) {
                to = Some((g, v));
            }
        }
        let (to, _) = to.expect("cap * k >= n leaves an under-cap group");
        groups[from].retain(|&m| m != weakest);
        let pos = groups[to].partition_point(|&m| m < weakest);
        groups[to].insert(pos, weakest);
        moves.push(FrameMove {
            frame: weakest,
            from,
            to,
        });
    }
    Ok((Partition::new(n, groups, p.anchor)?, moves))
}

/// Output of the full optimise → harden → rebalance pipeline.
#[derive(Debug, Clone)]
pub struct PartitionOutcome {
    pub partition: Partition,
    pub optimized: OptimizeResult,
    pub moves: Vec<FrameMove>,
    pub cap: usize,
}

pub fn partition_frames(
    s: &SimilarityGraph,
    k: usize,
    w: &GroupWeights,
    cfg: &OptimizeConfig,
    anchor: usize,
    cap: Option<usize>,
) -> Result<PartitionOutcome> {
    let n = s.num_frames();
    let cap = cap.unwrap_or_else(|| default_cap(n, k.max(1)));
    let optimized = optimize(s, k, w, cfg)?;
    let hard = harden(&optimized.assignment, anchor)?;
    let (partition, moves) = rebalance_traced(&hard, s, cap)?;
    Ok(PartitionOutcome {
        partition,
        optimized,
        moves,
        cap,
    })
}
