//! falc: compiler and parallel runtime for a small graph-analytics DSL.
//!
//! Pipeline:
//!
//! ```text
//!   .fal source
//!        |  parse                (lexer, parser)
//!        v
//!      AST  --- sema ----------> symbol tables, access sets
//!        |  transforms           (vertex <-> edge, worklist)
//!        v
//!      AST' --- cfg -----------> barrier markings, schedule
//!        |  lower                (device placement, transfers)
//!        v
//!   ExecutionPlan -- execute --> results, cost report
//! ```

pub mod ast;
pub mod cli;
pub mod lexer;
pub mod parser;
pub mod pretty;
pub mod rng;
pub mod sema;
pub mod cfg;
pub mod gen;
pub mod graph;
pub mod lower;
pub mod oracle;
pub mod runtime;
pub mod transform;

pub use cli::run_cli;
