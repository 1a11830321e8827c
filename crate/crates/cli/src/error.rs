use std::fmt;

/// Process exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_VERIFICATION: i32 = 5;

/// An error that knows which exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub source: anyhow::Error,
}

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            source: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn io(context: impl fmt::Display, err: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            source: anyhow::Error::new(err).context(context.to_string()),
        }
    }

    pub fn verification(msg: impl fmt::Display) -> Self {
        Self {
            code: EXIT_VERIFICATION,
            source: anyhow::anyhow!("{msg}"),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl From<gcl_core::Error> for CliError {
    fn from(e: gcl_core::Error) -> Self {
        let code = match &e {
            gcl_core::Error::Validation(_) | gcl_core::Error::Shape { .. } => EXIT_CONFIG,
            gcl_core::Error::Io { .. } | gcl_core::Error::Parse { .. } => EXIT_IO,
            gcl_core::Error::Numerical(_) => EXIT_NUMERICAL,
        };
        // The core error already renders its cause; chaining it would repeat it.
        Self {
            code,
            source: anyhow::anyhow!("{e}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
