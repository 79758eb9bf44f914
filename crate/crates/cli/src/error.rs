use datasync::Error as CoreError;

/// Failure of a CLI stage, tagged with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("design error: {0}")]
    Design(String),
    #[error("simulation error: {0}")]
    Simulation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Io(_) => 3,
            CliError::Design(_) => 4,
            CliError::Simulation(_) => 5,
        }
    }

    /// Prefixes the message with `what`, keeping the exit code.
    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{what}: {m}")),
            CliError::Design(m) => CliError::Design(format!("{what}: {m}")),
            CliError::Simulation(m) => CliError::Simulation(format!("{what}: {m}")),
        }
    }

    pub fn io(context: &str, err: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }

    /// Classifies an error raised while collecting or loading data.
    pub fn from_data(err: CoreError) -> Self {
        match err {
            CoreError::Io(e) => CliError::Io(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }

    /// Classifies an error raised while designing controllers.
    pub fn from_design(err: CoreError) -> Self {
        match err {
            CoreError::Io(e) => CliError::Io(e.to_string()),
            e @ (CoreError::NotExciting(_)
            | CoreError::Representation { .. }
            | CoreError::OffGrid(_)
            | CoreError::Csv(_)) => CliError::Data(e.to_string()),
            e => CliError::Design(e.to_string()),
        }
    }

    /// Classifies an error raised while simulating the closed loop.
    pub fn from_simulation(err: CoreError) -> Self {
        match err {
            CoreError::Io(e) => CliError::Io(e.to_string()),
            e => CliError::Simulation(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
