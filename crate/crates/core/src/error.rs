use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain has no active cell")]
    EmptyDomain,
    #[error("active subgraph is disconnected ({components} components)")]
    DisconnectedDomain { components: usize },
    #[error("point ({x}, {y}) is outside the domain")]
    OutsideDomain { x: f64, y: f64 },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("measure has zero total mass")]
    ZeroMass,
    #[error("negative density {0}")]
    NegativeDensity(f64),
    #[error("negative metric value {0}")]
    NegativeMetric(f64),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("marginals are unbalanced: {left} vs {right}")]
    UnbalancedMarginals { left: f64, right: f64 },
    #[error("infinite cost between nodes {source_node} and {target}")]
    InfiniteCost { source_node: usize, target: usize },
    #[error("node {0} is unreachable")]
    UnreachableNode(usize),
    #[error("inconsistent marginals: {0}")]
    InconsistentMarginals(String),
    #[error("instance too large for brute force: {0}")]
    TooLarge(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
