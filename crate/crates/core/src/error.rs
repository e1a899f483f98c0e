use thiserror::Error;

/// Errors raised by the numerical engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension {dim} exceeds the supported maximum {max}")]
    Size { dim: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("QR iteration did not converge after {iterations} iterations")]
    Convergence { iterations: usize },

    #[error("ill-conditioned interpolation: {0}")]
    Conditioning(String),

    #[error("degenerate parametrization: {0} is zero")]
    DegenerateParametrization(&'static str),

    #[error("genericity violated: {0}")]
    Genericity(String),

    #[error("gauge degeneracy: |gamma_{m}| = {modulus:e}")]
    GaugeDegeneracy { m: i32, modulus: f64 },

    #[error("singular evaluation point: factor {factor} vanishes ({modulus:e})")]
    Singularity { factor: String, modulus: f64 },

    #[error("sampling gave up after {0} rejected draws")]
    Sampling(usize),

    #[error("coincident roots: {0}")]
    CoincidentRoots(String),

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("Newton iteration diverged: {0}")]
    Divergence(String),

    #[error("homotopy path {path} failed at s = {s}")]
    PathFailure { path: usize, s: f64 },

    #[error("measure degeneracy: {0}")]
    MeasureDegeneracy(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn singular(factor: impl Into<String>, modulus: f64) -> Error {
    Error::Singularity {
        factor: factor.into(),
        modulus,
    }
}
