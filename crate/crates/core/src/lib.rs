//! Orchestration suite for an AutoML-based AI-HPC benchmark.
//!
//! The crate counts the analytical operations of image classifiers, grows
//! candidate networks from a ResNet-50 seed by network morphism, tunes batch
//! and kernel size with a TPE-style optimizer, runs the resulting workload
//! over a primary/replica harness and turns the run log into a cumulative
//! OPS score.
//!
//! ```
//! use aiperf::graph::TensorShape;
//! use aiperf::opcount::count_image_fp;
//! use aiperf::resnet::build_resnet50;
//!
//! let net = build_resnet50(TensorShape::new(224, 224, 3)?, 1000)?;
//! let fp = count_image_fp(&net)?.weighted_total();
//! assert_eq!(fp, 7_806_585_544);
//! # Ok::<(), aiperf::graph::GraphError>(())
//! ```

pub mod graph;
pub mod opcount;
pub mod resnet;
pub mod history;
pub mod hpo;
pub mod morph;
pub mod seed;
pub mod harness;
pub mod score;
pub mod config;
pub mod cli;
