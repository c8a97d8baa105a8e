//! Learns a signed distance function (SDF) of a single shape or scene from
//! one or more noisy point clouds, without clean data, normals or ground
//! truth distances. Training maps one noisy observation onto another under
//! an earth mover's distance loss with a geometric-consistency regularizer;
//! the learned field then drives point-cloud denoising, upsampling and
//! marching-cubes surface reconstruction.
//!
//! Modules:
//! - [`geom`]: point/cloud types, unit-sphere normalization, noise and query
//!   sampling.
//! - [`net`] / [`tape`]: the SDF network and its reverse-mode
//!   differentiation, including parameter gradients of losses that depend on
//!   the input gradient of the field.
//! - [`transport`]: exact and approximate assignment (EMD) plus Chamfer
//!   matching.
//! - [`trainer`]: the pull operator, the loss, and the Adam training loop.
//! - [`field`]: denoising, upsampling, grid evaluation and level-set pulls.
//! - [`mesher`]: marching cubes and point-to-mesh distance.
//! - [`metrics`]: evaluation metrics (Chamfer variants, P2M, normal
//!   consistency, F-score).
//! - [`oracle`]: network-free verification that minimizing EMD against noisy
//!   observations recovers the clean points, and the CD-vs-EMD contrast.
//! - [`io`]: XYZ/PLY/OBJ files, network checkpoints, volumes, reports.

pub mod error;
pub mod field;
pub mod geom;
pub mod io;
pub mod kdtree;
pub mod mesher;
pub mod metrics;
pub mod net;
pub mod oracle;
pub mod tape;
pub mod trainer;
pub mod transport;

pub use error::{Error, Result};
pub use field::{denoise, evaluate_grid, level_set_points, upsample, ScalarGrid, SphereField};
pub use io::{load_network, save_network};
pub use geom::{
    add_gaussian_noise, make_observation_set, normalize_to_unit_sphere, sample_queries,
    sample_target_batch, NormalizationTransform, ObservationSet, Point3, PointCloud, QueryBatch,
};
pub use mesher::{marching_cubes, point_to_mesh_distance, sample_mesh_surface, TriangleMesh};
pub use metrics::{evaluate_report, f_score, l1_chamfer, l2_chamfer, normal_consistency, p2m, MetricsReport};
pub use net::{EvalResult, SdfField, SdfNetwork};
pub use trainer::{
    pull, train, LossBreakdown, LossMetric, TrainConfig, TrainMode, TrainState,
};
pub use transport::{chamfer_match, emd_approx, emd_exact, Matching};
