//! Batch front end for the `fingeo` pipeline. [`run`] parses arguments,
//! executes one subcommand and maps failures to exit codes: 0 on success,
//! 1 for usage errors, 2 for unreadable or malformed inputs and 3 when a
//! numerical stage fails. Failures are reported on stderr as one JSON
//! object per line with `code`, `stage` and `message`.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

pub mod args;
mod batch;
mod commands;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// A failed command, tagged with the stage it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: i32,
    pub stage: String,
    pub message: String,
}

impl Failure {
    pub fn usage(stage: &str, message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            stage: stage.to_string(),
            message: message.into(),
        }
    }

    pub fn from_error(stage: &str, err: &fingeo::Error) -> Self {
        Self {
            code: if err.is_input_error() { EXIT_INPUT } else { EXIT_NUMERICAL },
            stage: stage.to_string(),
            message: err.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "code": self.code, "stage": self.stage, "message": self.message }).to_string()
    }

    fn report(&self) {
        eprintln!("{}", self.to_json());
    }
}

pub(crate) trait Stage<T> {
    fn at(self, stage: &str) -> Result<T, Failure>;
}

impl<T> Stage<T> for fingeo::Result<T> {
    fn at(self, stage: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::from_error(stage, &e))
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("FINGEO_LOG", "error");
    // Repeated calls in one process keep the first logger.
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs the command line `argv` (program name first) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            Failure::usage("usage", e.render().to_string().trim_end()).report();
            return EXIT_USAGE;
        }
    };
    let result = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n as usize).build() {
            Ok(pool) => pool.install(|| commands::dispatch(cli.command)),
            Err(e) => Err(Failure::usage("usage", format!("cannot start {n} workers: {e}"))),
        },
        None => commands::dispatch(cli.command),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            f.report();
            f.code
        }
    }
}
