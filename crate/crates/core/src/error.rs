use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    ManifestParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("not a pose file: {0}")]
    NotPoseFile(PathBuf),
    #[error("truncated file {path}: header expects {expected} values, payload holds {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("unsupported landmark count {landmarks} x {channels} in {path}")]
    UnsupportedLandmarks {
        path: PathBuf,
        landmarks: usize,
        channels: usize,
    },
    #[error("unsupported pose file version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid pose sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no clips")]
    NoClips,
    #[error("missing clip for gloss {gloss_id}, signer {signer}, view {view}")]
    MissingClip {
        gloss_id: u32,
        signer: crate::SignerId,
        view: crate::ViewAngle,
    },
    #[error("point {index} is at or behind the camera plane (depth {depth})")]
    BehindCamera { index: usize, depth: f64 },
    #[error("{path}: {source}")]
    Load {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
