//! Partition long multi-view frame sequences into balanced, anchor-shared
//! subscenes and account for the global-attention compute they save.
//!
//! The pipeline runs descriptors → [`scene_graph`] → [`soft_partition`] →
//! [`anchor_schedule`]; [`cost_model`] and [`mock_backbone`] measure the
//! result.

pub mod anchor_schedule;
pub mod cli;
pub mod cost_model;
pub mod descriptor_io;
pub mod error;
pub mod mock_backbone;
pub mod rng;
pub mod scene_graph;
pub mod soft_partition;

pub use error::{Error, Result};
