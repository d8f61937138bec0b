//! Fundamental matrices between synchronized stationary cameras from the
//! temporal signatures ("motion barcodes") of image lines.
//!
//! Two cameras watch the same moving objects. For every image line we record,
//! frame by frame, whether any foreground silhouette touches it; corresponding
//! epipolar lines see the same 3-D events and therefore carry near-identical
//! barcodes. Highly correlated line pairs become candidate epipolar line
//! correspondences, and a RANSAC over pairs of candidates proposes epipoles
//! and an epipolar-pencil homography from which the fundamental matrix
//! follows. A synthetic flying-cubes simulator with exact ground truth makes
//! every stage verifiable at desk scale.
//!
//! Module map:
//! - [`mask_io`]: binary silhouette videos (PBM sequences, packed container, heat maps)
//! - [`geometry`]: homogeneous 2-D primitives, pencil homographies, fundamental matrices
//! - [`barcode`]: border-line sampling, rasterization, barcode extraction and correlation
//! - [`matching`]: correlation matrix, mutual top-k candidates, traffic-line filtering
//! - [`estimator`]: RANSAC over candidate epipolar line pairs
//! - [`simulator`]: synthetic multi-camera scenes with ground-truth geometry
//! - [`pipeline`]: end-to-end orchestration, evaluation metrics and report emission

pub mod barcode;
pub mod estimator;
pub mod geometry;
pub mod mask_io;
pub mod matching;
pub mod pipeline;
pub mod simulator;
