use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("degenerate kernel query: {0}")]
    DegenerateQuery(String),
    #[error("simulation failure: {0}")]
    Simulation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{module}: {source}")]
    Context {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Tags an error with the pipeline stage that produced it.
    pub fn in_module(self, module: &'static str) -> Self {
        Error::Context {
            module,
            source: Box::new(self),
        }
    }

    /// The innermost error, with module tags stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 1 for infeasible constraints, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Infeasible(_) => 1,
            _ => 2,
        }
    }
}

pub(crate) trait ModuleContext<T> {
    fn module(self, module: &'static str) -> Result<T>;
}

impl<T> ModuleContext<T> for Result<T> {
    fn module(self, module: &'static str) -> Result<T> {
        self.map_err(|e| e.in_module(module))
    }
}
