use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("parameter: {0}")]
    Parameter(String),

    #[error("graph: {0}")]
    Graph(String),
}

pub type Result<T> = std::result::Result<T, GeomError>;
