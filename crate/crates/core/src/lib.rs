//! Estimating pedestrian crossings from detection clouds.
//!
//! Given raw pedestrian positions around an intersection, [`run_em`] recovers
//! the street corners and the crossing lines that join them. The crate also
//! provides a rule-based trajectory classifier on top of the estimated
//! crossings, a seeded synthetic scene generator with brute-force reference
//! implementations, and readers and writers for the CSV, JSON and SVG files
//! used by the command-line tool.
//!
//! ```
//! use crosswalk_core::{generate_scene, run_em, EmConfig, SceneParams};
//!
//! let scene = generate_scene(&SceneParams::default(), 42).unwrap();
//! let (model, trace) = run_em(&scene.points(), &EmConfig::default()).unwrap();
//! assert_eq!(model.corners.len(), 4);
//! assert!(trace.converged);
//! ```

pub mod classifier;
pub mod clustering;
pub mod em;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod io;
pub mod synthetic;

pub use classifier::{
    build_band_model, classify, classify_with, BandModel, ClassifierRules, Sample, Trajectory,
    TrajectoryClass, TrajectoryKind,
};
pub use clustering::{kmeans, quantize, KMeansResult, OccupancyGrid};
pub use em::{
    assign_latent, batch_consistency, initialize_model, margin_for_iteration, m_step, run_em,
    Assignment, ConsistencyTable, CrossingModel, EmConfig, EmTrace, IterationRecord, Phase,
};
pub use error::{Error, Result};
pub use estimators::{fit_least_squares, fit_theil_sen, FitMethod};
pub use geometry::{Line, Point2, Segment};
pub use io::detections::{Detection, DetectionFilter, ParseMode};
pub use io::report::RunReport;
pub use synthetic::{generate_scene, Layout, SceneParams, Scenario};
