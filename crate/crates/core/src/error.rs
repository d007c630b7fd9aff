use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Training(String),
    #[error("{0}")]
    Simulation(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("fluid: {0}")]
    Fluid(#[from] lsp_fluid::FluidError),
    #[error("network: {0}")]
    Nn(#[from] lsp_nn::NnError),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    /// Machine-readable category.
    pub fn category(&self) -> &'static str {
        match self {
            CoreError::Usage(_) => "usage",
            CoreError::Config(_) => "config",
            CoreError::Data(_) | CoreError::Io(_) => "data",
            CoreError::Training(_) => "training",
            CoreError::Fluid(lsp_fluid::FluidError::Config(_)) => "config",
            CoreError::Simulation(_) | CoreError::Fluid(_) => "simulation",
            CoreError::Nn(e) => match e {
                lsp_nn::NnError::Config(_) => "config",
                lsp_nn::NnError::Checkpoint(_) | lsp_nn::NnError::Io(_) => "data",
                _ => "training",
            },
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "usage" => 2,
            "config" => 3,
            "data" => 4,
            "training" => 5,
            _ => 6,
        }
    }
}
