mod args;
mod commands;
mod files;
mod manifest;

use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

/// Anything that ends a run early, with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Run(docgraph::Error),
}

impl From<docgraph::Error> for Failure {
    fn from(e: docgraph::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<docgraph::corpus::CorpusError> for Failure {
    fn from(e: docgraph::corpus::CorpusError) -> Self {
        Failure::Run(e.into())
    }
}

impl From<docgraph::candidates::CandidateError> for Failure {
    fn from(e: docgraph::candidates::CandidateError) -> Self {
        Failure::Run(e.into())
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Run(e) if e.is_numerical() => 3,
            Failure::Run(_) => 2,
        }
    }

    fn message(&self) -> String {
        let text = match self {
            Failure::Usage(m) => m.clone(),
            Failure::Run(e) => e.to_string(),
        };
        text.replace('\n', " ")
    }
}

pub fn io_error(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |source| {
        Failure::Run(docgraph::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Index(a) => commands::index(&a),
        Command::Candidates(a) => commands::candidates(&a),
        Command::Filter(a) => commands::filter(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Linkeval(a) => commands::linkeval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
