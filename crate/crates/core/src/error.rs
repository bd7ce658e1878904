use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // dataset
    #[error("no label file for image `{0}`")]
    MissingLabelFile(String),
    #[error("malformed label file {path}: line {line}: {reason}")]
    MalformedLabelFile { path: PathBuf, line: usize, reason: String },
    #[error("unknown concept `{token}` in {path}")]
    UnknownConcept { token: String, path: PathBuf },
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("no category listed for image `{0}`")]
    MissingCategory(String),
    #[error("malformed categories file {path}: line {line}")]
    MalformedCategories { path: PathBuf, line: usize },
    #[error("image is {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: u32, height: u32, min: u32 },
    #[error("point ({x}, {y}) outside {width}x{height} image")]
    OutOfBounds { x: f64, y: f64, width: u32, height: u32 },

    // keypoints
    #[error("keypoint at ({x:.1}, {y:.1}) too close to the image edge for a descriptor")]
    KeypointTooCloseToEdge { x: f32, y: f32 },
    #[error("patch has no gradient energy")]
    DegenerateDescriptor,
    #[error("descriptor cache fingerprint {found:016x} does not match current parameters {expected:016x}")]
    CacheFingerprintMismatch { expected: u64, found: u64 },
    #[error("corrupt descriptor cache {path}: {reason}")]
    CorruptCache { path: PathBuf, reason: String },

    // features
    #[error("empty region")]
    EmptyRegion,
    #[error("region {width}x{height} too small, need at least 4x4")]
    RegionTooSmall { width: usize, height: usize },

    // vocabulary
    #[error("k-means needs at least {k} points, got {points}")]
    TooFewPoints { points: usize, k: usize },
    #[error("category `{0}` has no descriptors")]
    EmptyCategory(String),
    #[error("malformed vocabulary file: {0}")]
    MalformedVocabulary(String),

    // cbow
    #[error("descriptor length {found}, vocabulary expects {expected}")]
    DescriptorLengthMismatch { expected: usize, found: usize },
    #[error("half vocabularies do not form an upper/lower pair of one mode: {upper} / {lower}")]
    HalfVocabularyModeMismatch { upper: String, lower: String },
    #[error("vocabulary kind {0} cannot be used here")]
    WrongVocabularyKind(String),
    #[error("histograms built from different vocabularies")]
    MixedVocabularies,

    // annotators
    #[error("no training samples for concept {0}")]
    EmptyConcept(usize),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("SVM training needs at least two classes")]
    SingleClass,
    #[error("SMO did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("malformed model file: {0}")]
    MalformedModel(String),

    // evaluation
    #[error("{regions} labeled regions cannot fill {folds} folds")]
    TooFewRegions { regions: usize, folds: usize },
    #[error("concept {concept} has {samples} samples, fewer than {folds} folds")]
    ConceptTooSmall {
        concept: usize,
        samples: usize,
        folds: usize,
    },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("invalid feature combination `{0}`")]
    InvalidFeatureCombo(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // analysis
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("no cached keypoints for image `{0}`")]
    CacheMiss(String),
    #[error("correlation undefined for constant input")]
    ConstantInput,

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
        let context = context.into();
        move |source| Error::Io { context, source }
    }
}
