//! Missing-data preprocessing: profiling, deletion, a catalogue of
//! imputers including a predictive-mean-matching hot deck with explicit
//! donor accounting, amputation-based scoring, and a small agent platform
//! that runs a per-column strategy tournament.

pub mod agent;
pub mod amputation;
pub mod imputation;
pub mod pipeline;
pub mod rng;
mod stats;
pub mod tabular;

pub use imputation::{
    impute, DonorLedger, ImputationResult, ImputeError, Strategy, StrategyConfig,
};
pub use tabular::{parse_csv, Column, ColumnKind, CsvOptions, Table, Value};

// The guide's code listings, compiled and run by `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tabular.md")]
    mod tabular {}
    #[doc = include_str!("../../../book/src/imputation.md")]
    mod imputation {}
    #[doc = include_str!("../../../book/src/ledger.md")]
    mod ledger {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/em.md")]
    mod em {}
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    mod benchmarking {}
    #[doc = include_str!("../../../book/src/agents.md")]
    mod agents {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
