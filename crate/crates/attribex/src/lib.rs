//! attribex: instance search from one example via learned binary attributes.
//!
//! The pipeline learns discriminative, shareable, low-redundancy binary
//! attributes over training instances with an incremental spectral
//! optimization, trains one linear SVM detector per attribute, represents
//! images by their detector margins, and ranks a gallery against a single
//! query image, optionally fusing feature-space similarity and a category
//! classifier response. Evaluation covers mAP, CMC curves, the repeated
//! half-split protocol and parameter sweeps.
//!
//! Stages map onto modules:
//!
//! | Module | Role |
//! |--------|------|
//! | [`dataset`] | feature ingestion, normalization, PCA/whitening, splits, synthetic corpora |
//! | [`graph`] | instance proximity matrix, mutual-kNN sparsification, Laplacian, design matrix |
//! | [`attrdesign`] | incremental binarized eigenvector extraction |
//! | [`detectors`] | linear SVM detectors and embeddings |
//! | [`retrieval`] | scoring, normalization, fusion, ranking |
//! | [`eval`] | AP/mAP/CMC, repeated splits, parameter sweep |
//! | [`synthcheck`] | directional experiments on generated data |

pub mod atsf;
pub mod attrdesign;
pub mod config;
pub mod dataset;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod parallel;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod synthcheck;

pub use config::PipelineConfig;
pub use error::{Error, Result};
