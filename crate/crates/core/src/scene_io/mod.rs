//! Data model shared by every stage, plus the file formats that carry it
//! between stages: SfM text poses, PLY point clouds and JSON manifests.

mod cloud;
mod manifest;
mod ply;
mod pose;
mod sfm_text;
mod sim3;

pub use cloud::PointCloud;
pub use manifest::{read_json, write_json, BlockManifest, FrameRange, SCHEMA_VERSION};
pub use ply::{parse_ply, read_ply, write_ply, PlyEncoding, PlyScalar, PlyWriteOptions};
pub use pose::{camera_center, CameraPose, Trajectory};
pub use sfm_text::{
    frame_index_from_name, parse_cameras_text, parse_sfm_text, read_sfm_text, write_cameras_text,
    write_sfm_text, CameraIntrinsics,
};
pub use sim3::Sim3Transform;
