use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("point outside the Fermi chart: {0}")]
    OutOfChart(String),
    #[error("point outside the domain: {0}")]
    Domain(String),
    #[error("linear solver error: {0}")]
    Solver(String),
    #[error("level-set extraction failed: {0}")]
    Extraction(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("parity error: {0}")]
    Parity(String),
    #[error("far-field fit failed: {0}")]
    FarField(String),
    #[error("Hopf sign violated: {0}")]
    Hopf(String),
    #[error("matching inconsistency: {0}")]
    Matching(String),
    #[error("layer grid does not cover x = {0}")]
    Coverage(f64),
    #[error("lambda too large for the tube: {0}")]
    LambdaTooLarge(String),
    #[error("no radial solution: {0}")]
    NoSolution(String),
}

pub type Result<T> = std::result::Result<T, Error>;
