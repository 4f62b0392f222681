//! Anchor-shared execution plans.
//!
//! Every subscene starts with the same anchor frame so that all subscene
//! outputs share one reference. On reassembly the anchor's record is taken
//! from the subscene whose group actually contains it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::soft_partition::Partition;

pub const PLAN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionPlan {
    pub n: usize,
    pub anchor: usize,
    pub subscenes: Vec<Vec<usize>>,
    pub owner_of_anchor: usize,
}

impl ExecutionPlan {
    pub fn k(&self) -> usize {
        self.subscenes.len()
    }

    pub fn subscene_lengths(&self) -> Vec<usize> {
        self.subscenes.iter().map(Vec::len).collect()
    }

    pub fn to_json(&self) -> PlanJson {
        PlanJson {
            version: PLAN_VERSION,
            n: self.n,
            anchor: self.anchor,
            owner_of_anchor: self.owner_of_anchor,
            subscenes: self
                .subscenes
                .iter()
                .enumerate()
                .map(|(id, frames)| SubsceneJson {
                    id,
                    frames: frames.clone(),
                })
                .collect(),
        }
    }

    /// Parses and validates a plan document.
    pub fn from_json(doc: PlanJson) -> Result<Self> {
        if doc.version != PLAN_VERSION {
            return Err(Error::format(
                "version",
                format!("unsupported plan version {}", doc.version),
            ));
        }
        let mut subscenes = doc.subscenes;
        subscenes.sort_by_key(|s| s.id);
        if subscenes.iter().enumerate().any(|(i, s)| s.id != i) {
            return Err(Error::format("subscenes", "ids must be 0..K without gaps"));
        }
        let plan = Self {
            n: doc.n,
            anchor: doc.anchor,
            owner_of_anchor: doc.owner_of_anchor,
            subscenes: subscenes.into_iter().map(|s| s.frames).collect(),
        };
        let violations = validate_plan(&plan);
        if let Some(v) = violations.first() {
            return Err(Error::PlanViolation {
                subscene: v.subscene().unwrap_or(0),
                detail: violations
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; "),
            });
        }
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanJson {
    pub version: u32,
    pub n: usize,
    pub anchor: usize,
    pub owner_of_anchor: usize,
    pub subscenes: Vec<SubsceneJson>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsceneJson {
    pub id: usize,
    pub frames: Vec<usize>,
}

/// Subscene `i` is the anchor followed by group `i`'s other members in
/// ascending order.
pub fn build_plan(p: &Partition) -> ExecutionPlan {
    let anchor = p.anchor();
    let mut owner_of_anchor = 0;
    let subscenes = p
        .groups()
        .iter()
        .enumerate()
        .map(|(i, members)| {
            let mut seq = Vec::with_capacity(members.len() + 1);
            seq.push(anchor);
            for &s in members {
                if s == anchor {
                    owner_of_anchor = i;
                } else {
                    seq.push(s);
                }
            }
            seq
        })
        .collect();
    ExecutionPlan {
        n: p.n(),
        anchor,
        subscenes,
        owner_of_anchor,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoSubscenes,
    AnchorOutOfRange { anchor: usize },
    OwnerOutOfRange { owner: usize },
    MissingAnchor { subscene: usize },
    RepeatedAnchor { subscene: usize },
    FrameOutOfRange { subscene: usize, frame: usize },
    DuplicateFrame { frame: usize, subscenes: Vec<usize> },
    MissingFrame { frame: usize },
}

impl Violation {
    pub fn subscene(&self) -> Option<usize> {
        match self {
            Violation::MissingAnchor { subscene }
            | Violation::RepeatedAnchor { subscene }
            | Violation::FrameOutOfRange { subscene, .. } => Some(*subscene),
            Violation::DuplicateFrame { subscenes, .. } => subscenes.get(1).copied(),
            _ => None,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoSubscenes => write!(f, "plan has no subscenes"),
            Violation::AnchorOutOfRange { anchor } => write!(f, "anchor {anchor} out of range"),
            Violation::OwnerOutOfRange { owner } => {
                write!(f, "owner_of_anchor {owner} out of range")
            }
            Violation::MissingAnchor { subscene } => {
                write!(f, "missing anchor at start of subscene {subscene}")
            }
            Violation::RepeatedAnchor { subscene } => {
                write!(f, "anchor repeated inside subscene {subscene}")
            }
            Violation::FrameOutOfRange { subscene, frame } => {
                write!(f, "frame {frame} in subscene {subscene} out of range")
            }
            Violation::DuplicateFrame { frame, subscenes } => {
                write!(f, "duplicate frame {frame} in subscenes {subscenes:?}")
            }
            Violation::MissingFrame { frame } => write!(f, "missing frame {frame}"),
        }
    }
}

/// Checks every plan invariant and reports all violations found.
pub fn validate_plan(plan: &ExecutionPlan) -> Vec<Violation> {
    let mut out = Vec::new();
    if plan.subscenes.is_empty() {
        out.push(Violation::NoSubscenes);
    }
    if plan.anchor >= plan.n {
        out.push(Violation::AnchorOutOfRange {
            anchor: plan.anchor,
        });
    }
    if plan.owner_of_anchor >= plan.subscenes.len().max(1) {
        out.push(Violation::OwnerOutOfRange {
            owner: plan.owner_of_anchor,
        });
    }
    let mut homes: Vec<Vec<usize>> = vec![Vec::new(); plan.n];
    for (i, seq) in plan.subscenes.iter().enumerate() {
        if seq.first() != Some(&plan.anchor) {
            out.push(Violation::MissingAnchor { subscene: i });
        }
        let anchors = seq.iter().filter(|&&f| f == plan.anchor).count();
        if anchors > 1 {
            out.push(Violation::RepeatedAnchor { subscene: i });
        }
        for &f in seq {
            if f >= plan.n {
                out.push(Violation::FrameOutOfRange { subscene: i, frame: f });
            } else if f != plan.anchor {
                homes[f].push(i);
            }
        }
    }
    for (frame, h) in homes.iter().enumerate() {
        if frame == plan.anchor {
            continue;
        }
        match h.len() {
            0 => out.push(Violation::MissingFrame { frame }),
            1 => {}
            _ => out.push(Violation::DuplicateFrame {
                frame,
                subscenes: h.clone(),
            }),
        }
    }
    out
}

/// Fixed-width records, one per position of a subscene sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordBatch {
    pub width: usize,
    pub data: Vec<u8>,
}

impl RecordBatch {
    pub fn new(width: usize, data: Vec<u8>) -> Self {
        Self { width, data }
    }

    pub fn from_records<R: AsRef<[u8]>>(width: usize, records: &[R]) -> Self {
        let mut data = Vec::with_capacity(width * records.len());
        for r in records {
            data.extend_from_slice(r.as_ref());
        }
        Self { width, data }
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn record(&self, i: usize) -> &[u8] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

/// One record per original frame, in frame order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameOutputs {
    pub n: usize,
    pub width: usize,
    pub payload: Vec<u8>,
}

impl FrameOutputs {
    pub fn record(&self, frame: usize) -> &[u8] {
        &self.payload[frame * self.width..(frame + 1) * self.width]
    }
}

/// Reassembles per-subscene outputs into original frame order. Duplicate
/// anchor records from non-owning subscenes are dropped.
pub fn scatter_outputs(plan: &ExecutionPlan, per_subscene: &[RecordBatch]) -> Result<FrameOutputs> {
    if per_subscene.len() != plan.k() {
        return Err(Error::PlanViolation {
            subscene: per_subscene.len().min(plan.k()),
            detail: format!(
                "expected outputs for {} subscenes, got {}",
                plan.k(),
                per_subscene.len()
            ),
        });
    }
    let width = per_subscene.first().map_or(0, |b| b.width);
    for (i, (seq, batch)) in plan.subscenes.iter().zip(per_subscene).enumerate() {
        if batch.width != width {
            return Err(Error::PlanViolation {
                subscene: i,
                detail: format!("record width {} differs from {width}", batch.width),
            });
        }
        if batch.data.len() != seq.len() * width {
            return Err(Error::PlanViolation {
                subscene: i,
                detail: format!(
                    "expected {} records of {width} bytes, got {} bytes",
                    seq.len(),
                    batch.data.len()
                ),
            });
        }
    }
    let mut payload = vec![0u8; plan.n * width];
    let mut filled = vec![false; plan.n];
    for (i, (seq, batch)) in plan.subscenes.iter().zip(per_subscene).enumerate() {
        for (pos, &frame) in seq.iter().enumerate() {
            if frame == plan.anchor && i != plan.owner_of_anchor {
                continue;
            }
            if frame >= plan.n || std::mem::replace(&mut filled[frame], true) {
                return Err(Error::PlanViolation {
                    subscene: i,
                    detail: format!("frame {frame} out of range or assigned twice"),
                });
            }
            payload[frame * width..(frame + 1) * width].copy_from_slice(batch.record(pos));
        }
    }
    if let Some(frame) = filled.iter().position(|f| !f) {
        return Err(Error::PlanViolation {
            subscene: plan.owner_of_anchor,
            detail: format!("no output for frame {frame}"),
        });
    }
    Ok(FrameOutputs {
        n: plan.n,
        width,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tag(a: u32, b: u32) -> Vec<u8> {
        [a.to_le_bytes(), b.to_le_bytes()].concat()
    }

    fn tagged(plan: &ExecutionPlan) -> Vec<RecordBatch> {
        plan.subscenes
            .iter()
            .enumerate()
            .map(|(i, seq)| {
                let recs: Vec<Vec<u8>> = (0..seq.len()).map(|p| tag(i as u32, p as u32)).collect();
                RecordBatch::from_records(8, &recs)
            })
            .collect()
    }

    #[test]
    fn single_group_plan() {
        let p = Partition::new(3, vec![vec![0, 1, 2]], 0).unwrap();
        let plan = build_plan(&p);
        assert_eq!(plan.subscenes, vec![vec![0, 1, 2]]);
        let outs = tagged(&plan);
        let frames = scatter_outputs(&plan, &outs).unwrap();
        assert_eq!(frames.payload, outs[0].data);
    }

    #[test]
    fn anchor_prepended() {
        let p = Partition::new(4, vec![vec![0, 2], vec![1, 3]], 0).unwrap();
        let plan = build_plan(&p);
        assert_eq!(plan.subscenes, vec![vec![0, 2], vec![0, 1, 3]]);
        assert_eq!(plan.owner_of_anchor, 0);

        let p = Partition::new(4, vec![vec![0, 1], vec![2, 3]], 2).unwrap();
        let plan = build_plan(&p);
        assert_eq!(plan.subscenes, vec![vec![2, 0, 1], vec![2, 3]]);
        assert_eq!(plan.owner_of_anchor, 1);
    }

    #[test]
    fn scatter_takes_anchor_from_owner() {
        let p = Partition::new(4, vec![vec![0, 2], vec![1, 3]], 0).unwrap();
        let plan = build_plan(&p);
        let out = scatter_outputs(&plan, &tagged(&plan)).unwrap();
        assert_eq!(out.record(1), tag(1, 1));
        assert_eq!(out.record(0), tag(0, 0));
        assert_eq!(out.record(2), tag(0, 1));
        assert_eq!(out.record(3), tag(1, 2));
    }

    #[test]
    fn scatter_short_output_names_subscene() {
        let p = Partition::new(4, vec![vec![0, 2], vec![1, 3]], 0).unwrap();
        let plan = build_plan(&p);
        let mut outs = tagged(&plan);
        outs[1].data.truncate(16);
        match scatter_outputs(&plan, &outs) {
            Err(Error::PlanViolation { subscene: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validate_reports_every_violation() {
        let p = Partition::new(4, vec![vec![0, 2], vec![1, 3]], 0).unwrap();
        assert!(validate_plan(&build_plan(&p)).is_empty());

        let plan = ExecutionPlan {
            n: 4,
            anchor: 0,
            subscenes: vec![vec![0, 2, 1], vec![0, 1, 3]],
            owner_of_anchor: 0,
        };
        let v = validate_plan(&plan);
        assert_eq!(v, vec![Violation::DuplicateFrame { frame: 1, subscenes: vec![0, 1] }]);
        assert!(v[0].to_string().contains("duplicate frame"));

        let plan = ExecutionPlan {
            n: 4,
            anchor: 0,
            subscenes: vec![vec![2, 0], vec![1, 3]],
            owner_of_anchor: 0,
        };
        let v = validate_plan(&plan);
        assert_eq!(
            v,
            vec![
                Violation::MissingAnchor { subscene: 0 },
                Violation::MissingAnchor { subscene: 1 }
            ]
        );
        assert!(v[0].to_string().contains("missing anchor"));

        let plan = ExecutionPlan {
            n: 3,
            anchor: 0,
            subscenes: vec![vec![0, 0, 5]],
            owner_of_anchor: 2,
        };
        let v = validate_plan(&plan);
        assert!(v.contains(&Violation::OwnerOutOfRange { owner: 2 }));
        assert!(v.contains(&Violation::RepeatedAnchor { subscene: 0 }));
        assert!(v.contains(&Violation::FrameOutOfRange { subscene: 0, frame: 5 }));
        assert!(v.contains(&Violation::MissingFrame { frame: 1 }));
        assert!(v.contains(&Violation::MissingFrame { frame: 2 }));
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let p = Partition::new(5, vec![vec![1, 4], vec![0, 2, 3]], 0).unwrap();
        let plan = build_plan(&p);
        let text = serde_json::to_string(&plan.to_json()).unwrap();
        assert_eq!(
            text,
            r#"{"version":1,"n":5,"anchor":0,"owner_of_anchor":1,"subscenes":[{"id":0,"frames":[0,1,4]},{"id":1,"frames":[0,2,3]}]}"#
        );
        let back = ExecutionPlan::from_json(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, plan);

        let mut bad = plan.to_json();
        bad.subscenes[1].frames.push(1);
        assert!(matches!(
            ExecutionPlan::from_json(bad),
            Err(Error::PlanViolation { subscene: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn relabeling_groups_permutes_subscenes(labels in prop::collection::vec(0usize..3, 3..15), anchor in 0usize..3) {
            prop_assume!((0..3).all(|g| labels.contains(&g)));
            let p = Partition::from_labels(&labels, 3, anchor).unwrap();
            let relabeled: Vec<usize> = labels.iter().map(|g| (g + 1) % 3).collect();
            let q = Partition::from_labels(&relabeled, 3, anchor).unwrap();
            let (a, b) = (build_plan(&p), build_plan(&q));
            for g in 0..3 {
                prop_assert_eq!(&a.subscenes[g], &b.subscenes[(g + 1) % 3]);
            }
            prop_assert_eq!((a.owner_of_anchor + 1) % 3, b.owner_of_anchor);
        }
    }
}
