//! Convexified graph convolutional networks.
//!
//! Graph classification with kernelized graph filters trained layer by layer.
//! Each layer's learning problem is convex: the class of one-layer GCN filters
//! is lifted into a kernel feature space (inverse-polynomial or Gaussian RBF
//! kernels over k-hop shifted node signals), relaxed to a nuclear-norm ball,
//! and fitted with projected gradient methods. Training a stack of such layers
//! therefore never depends on initialization, and every trained layer carries
//! an explicit certificate: its filter matrix lies inside a nuclear ball whose
//! radius comes from the filter-norm budget of the original nonconvex class.
//!
//! Modules follow the pipeline: [`graph`] builds shift operators and hop
//! stacks, [`kernel`] evaluates kernels and smoothness bounds, [`factor`]
//! produces exact or Nystrom kernel factorizations, [`opt`] supplies nuclear
//! projections and projected optimizers, [`model`] assembles layers into a
//! classifier, [`train`] runs the layer-wise convex program, [`data`] parses
//! TUDataset directories, [`archive`] persists models, and [`oracle`] holds
//! the independent verification suites exposed through `cgcn verify`.

pub mod archive;
pub mod config;
pub mod data;
pub mod error;
pub mod factor;
pub mod graph;
pub mod kernel;
pub mod model;
pub mod opt;
pub mod oracle;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
