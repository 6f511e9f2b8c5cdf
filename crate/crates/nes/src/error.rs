//! One error type for the std layer: file-format problems carry their path,
//! core pipeline errors pass through.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("{}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] nes_core::geometry::GeometryError),
    #[error(transparent)]
    Field(#[from] nes_core::fields::FieldError),
    #[error(transparent)]
    Raster(#[from] nes_core::raster::RasterError),
    #[error(transparent)]
    Volren(#[from] nes_core::volren::VolrenError),
    #[error(transparent)]
    Train(#[from] nes_core::training::TrainError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io { path: path.into(), source }
    }

    pub fn invalid(msg: impl Into<String>) -> Error {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
