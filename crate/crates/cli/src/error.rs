use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    MissingInput(String),

    #[error("{0}")]
    Usage(String),

    #[error("selftest failed: {0}")]
    SelftestFailed(String),

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] vsalens::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingInput(_) | CliError::Core(vsalens::Error::VocabMissing(_)) => 3,
            _ => 1,
        }
    }
}

pub const CHECKPOINT_HINT: &str = "pass --checkpoint PATH or set VSALENS_CHECKPOINT to a GPT-2 small \
checkpoint in safetensors format (`model.safetensors` from the `gpt2` model repository on the \
Hugging Face hub); this tool never downloads weights itself";
