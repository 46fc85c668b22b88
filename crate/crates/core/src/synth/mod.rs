//! Synthetic fixtures with exact ground truth: camera paths, perturbed
//! blocks, panoramas and rendered cubemap sequences.

mod corridor;
mod scene;
mod texture;
mod trajectory;

pub use corridor::{corridor_flights, Corridor, CorridorFlights, CORRIDOR_STEP};
pub use scene::{gen_scene, perturb_block, random_sim3, SceneOptions, SyntheticScene};
pub use texture::{count_row_bands, gen_equirect, render_equirect, SphereTexture, TextureKind, Wave, CHECKER_PERIOD};
pub use trajectory::{
    gen_centers, gen_trajectory, gen_trajectory_with, lawnmower_layout, look_rotation, poses_along, TrajectoryKind,
    TrajectoryOptions,
};
