use std::path::PathBuf;

/// Errors produced by the pose-estimation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("mesh line {line}: {msg}")]
    MeshParse { line: usize, msg: String },

    #[error("mesh has no triangles")]
    EmptyMesh,

    #[error("invalid camera intrinsics: {0}")]
    Intrinsics(String),

    #[error("depth image is {found_width}x{found_height}, intrinsics expect {width}x{height}")]
    DimensionMismatch { width: u32, height: u32, found_width: u32, found_height: u32 },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("detection row {row}: {msg}")]
    DetectionSchema { row: usize, msg: String },

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bounding box is empty after clamping to the image")]
    EmptyBox,

    #[error("no detections for class {0:?}")]
    NoDetections(String),

    #[error("no valid depth inside any detection of class {0:?}")]
    EmptyCrops(String),

    #[error("all particle weights are zero at iteration {0}")]
    DegenerateWeights(usize),

    #[error("object renders no pixels at this pose")]
    OffScreen,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("no correspondences within {0} m at the initial pose")]
    NoCorrespondences(f64),

    #[error("could not place object {object} after {attempts} attempts")]
    PlacementFailed { object: usize, attempts: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown mesh {0:?}")]
    UnknownMesh(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
