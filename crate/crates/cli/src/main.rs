//! `stnn` — command-line pipeline: simulate, ingest, train, eval, predict.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or model errors.

mod args;
mod commands;
mod settings;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;

/// Which exit code a failure maps to.
#[derive(Debug)]
pub enum CmdError {
    Usage(String),
    Data(String),
}

impl CmdError {
    fn usage(msg: impl Into<String>) -> Self {
        CmdError::Usage(msg.into())
    }

    fn data(msg: impl Into<String>) -> Self {
        CmdError::Data(msg.into())
    }
}

macro_rules! data_error_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CmdError {
            fn from(e: $ty) -> Self {
                CmdError::Data(e.to_string())
            }
        }
    )*};
}

data_error_from!(
    stnn_core::trips::TripsError,
    stnn_core::geobin::GeobinError,
    stnn_core::neuralnet::NnError,
    stnn_core::stnn::StnnError,
    stnn_core::baselines::BaselineError,
    stnn_core::metrics::MetricsError,
    stnn_core::synthcity::SynthError,
    stnn_core::persist::PersistError,
    std::io::Error
);

fn main() {
    let code = run(std::env::args_os());
    std::process::exit(code);
}

fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprintln!("{e}");
            return 1;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(CmdError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CmdError::Data(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}
