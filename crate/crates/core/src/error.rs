use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("void in interpolation stencil at output cell (row {row}, col {col})")]
    Void { row: usize, col: usize },

    #[error("empty statistics: {0}")]
    EmptyStatistics(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("GeoJSON error in feature {feature}: {message}")]
    GeoJson { feature: String, message: String },

    #[error("geometry error for footprint {id}: {message}")]
    Geometry { id: u64, message: String },

    #[error("empty point cloud: {0}")]
    EmptyCloud(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("could not place building {placed} of {requested} after {attempts} attempts")]
    Packing {
        placed: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("empty series: {0}")]
    Empty(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Alignment(_) => "alignment",
            Error::Shape(_) => "shape",
            Error::Void { .. } => "void",
            Error::EmptyStatistics(_) => "empty_statistics",
            Error::Format { .. } => "format",
            Error::GeoJson { .. } => "format",
            Error::Geometry { .. } => "geometry",
            Error::EmptyCloud(_) => "empty_cloud",
            Error::Coverage(_) => "coverage",
            Error::Input(_) => "input",
            Error::Divergence { .. } => "divergence",
            Error::Packing { .. } => "packing",
            Error::Empty(_) => "empty",
            Error::Io { .. } => "io",
        }
    }
}

/// Non-fatal conditions reported alongside a result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    /// Footprint has no cell center inside the raster extent.
    FootprintOutside { id: u64 },
    /// Footprint owns no cells, so its height defaults to 0.
    EmptyZone { id: u64 },
    /// Building centroid falls outside the aggregation grid.
    CentroidOutsideGrid { id: u64 },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::FootprintOutside { id } => write!(f, "footprint {id} lies outside the raster"),
            Warning::EmptyZone { id } => write!(f, "footprint {id} owns no cells; height set to 0"),
            Warning::CentroidOutsideGrid { id } => {
                write!(f, "centroid of building {id} is outside the grid")
            }
        }
    }
}
