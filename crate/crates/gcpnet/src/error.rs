use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("non-finite activations in {context}")]
    Numeric { context: String },

    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),

    #[error(transparent)]
    Geom(#[from] geomkit::GeomError),
}

pub type Result<T> = std::result::Result<T, ModelError>;
