//! Multi-scale diffusion geometry on particle trajectories.
//!
//! Pipeline: [`trajectory`] data and analytic flows → [`landmarks`] selection
//! → [`diffusion`] kernel, Markov operator and spectral embedding →
//! [`separation`] and [`similarity`] fields queried at a diffusion scale `s`.

pub mod diffusion;
pub mod error;
pub mod field;
pub mod landmarks;
pub mod linalg;
pub mod par;
pub mod separation;
pub mod similarity;
pub mod spatial;
pub mod trajectory;

pub use error::{Error, Result};
pub use faer;
pub use diffusion::{build_embedding, DiffusionEmbedding, DiffusionParams};
pub use field::{Direction, FieldKind, ScalarField};
pub use landmarks::{select_landmarks, LandmarkSet, Strategy};
pub use trajectory::{dynamic_distance, Flow, FlowSpec, TrajectoryDataset};
