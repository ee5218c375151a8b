//! Scenario data model, maps, controllers, collision geometry and the
//! synthetic traffic generator.

mod controller;
mod geometry;
mod map;
mod scenario;
mod synth;

pub use controller::{EgoController, ReplayController};
pub use geometry::{collision_check, rectangle_corners};
pub use map::{normalize_map, resample_polyline, MapPolylines};
pub use scenario::{centroid as scenario_centroid, AgentDims, Scenario, SceneFrame, SCENE_SCALE};
pub use synth::{synth_generate, Layout, SynthConfig};
