use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorldError {
    #[error("grid must have at least one row and one column")]
    EmptyGrid,
    #[error("expected {expected} cells, got {got}")]
    CellCount { expected: usize, got: usize },
    #[error("robot position ({row}, {col}) is outside the grid")]
    RobotOutOfBounds { row: usize, col: usize },
    #[error("cell ({row}, {col}) is outside the grid")]
    CellOutOfBounds { row: usize, col: usize },
    #[error("robot placed on an obstacle at ({row}, {col})")]
    RobotOnObstacle { row: usize, col: usize },
    #[error("a cell holds at most 10 markers, got {0}")]
    TooManyMarkers(u8),
    #[error("observation contains {0} robot tokens, expected exactly one")]
    RobotCount(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("max_depth must be at least 2, got {0}")]
    MaxDepth(usize),
    #[error("probability `{name}` must lie in [0, 1], got {value}")]
    Probability { name: &'static str, value: f64 },
    #[error("marker count weights must have 10 non-negative entries with a positive sum")]
    MarkerWeights,
    #[error("grid dimensions must be positive")]
    GridSize,
    #[error("n_ios must be at least 1")]
    NoExamples,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("malformed example: {0}")]
    Malformed(String),
    #[error("invalid world in example: {0}")]
    World(#[from] WorldError),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corpus header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("line {line}: {source}")]
    Line { line: usize, source: CodecError },
    #[error("corpus file is empty")]
    Empty,
}
