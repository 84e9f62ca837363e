//! Projective and metric geometry kernels.

mod epipolar;
mod iou;
mod projection;

pub use epipolar::{epipolar_line, fundamental_matrix, point_line_distance, FundamentalMatrix, Line2D};
pub use iou::{bev_footprint, convex_clip, iou_2d, iou_3d, iou_bev, polygon_area, MIN_OVERLAP_AREA};
pub use projection::{
    box3d_corners, project_box3d, project_point, projection_matrix, transform_points, ProjectedBox, MIN_DEPTH,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("stereo baseline {0} m is too short to define epipolar geometry")]
    DegenerateBaseline(f64),
    #[error("intrinsic matrix is not invertible")]
    SingularIntrinsics,
    #[error("epipolar line is numerically null")]
    ZeroLine,
}
