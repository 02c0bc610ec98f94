//! `kbqa`: command-line front end for the answerability pipeline.
//!
//! Exit codes: 0 success, 1 usage error (bad flag, missing setting or
//! artifact), 2 data error (unparsable or inconsistent input files).

mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{Config, DISABLE, KEYS, SEED_ENV};

/// Marks errors that map to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

const COMPONENTS: [&str; 5] = ["retriever", "sketch", "types", "relations", "discriminator"];

fn cli() -> Command {
    let mut cmd = Command::new("kbqa")
        .about("Answerability-aware question answering over a typed knowledge base")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .global(true)
                .help("key=value settings file, applied before flags"),
        );
    for k in KEYS {
        let mut arg = Arg::new(k.name)
            .long(k.name)
            .value_name("VALUE")
            .global(true)
            .help(k.help);
        if k.name == DISABLE {
            arg = arg.action(ArgAction::Append);
        }
        cmd = cmd.arg(arg);
    }
    cmd.subcommand(
        Command::new("kb")
            .about("Knowledge base utilities")
            .subcommand_required(true)
            .subcommand(Command::new("validate").about("Load a KB and list integrity violations")),
    )
    .subcommand(
        Command::new("generate").about("Write a synthetic KB with train/dev/test question sets"),
    )
    .subcommand(Command::new("perturb").about("Apply a deletion plan and relabel a dataset"))
    .subcommand(
        Command::new("train").about("Train one scorer").arg(
            Arg::new("component")
                .required(true)
                .value_parser(COMPONENTS),
        ),
    )
    .subcommand(Command::new("tune-threshold").about("Tune the NK threshold on a dev set"))
    .subcommand(Command::new("predict").about("Run the pipeline and write JSON-lines predictions"))
    .subcommand(Command::new("evaluate").about("Score predictions against gold annotations"))
    .subcommand(Command::new("ablate").about("Compare the full pipeline with disabled components"))
}

/// Defaults, then the config file, then the seed variable, then flags.
fn effective_config(m: &ArgMatches, seed_env: Option<String>) -> Result<Config> {
    let mut c = Config::default();
    if let Some(path) = m.get_one::<String>("config") {
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("--config {path}: {e}")))?;
        c.apply_text(&text, path)?;
    }
    if let Some(seed) = seed_env {
        c.set("seed", &seed)
            .map_err(|e| usage(format!("{SEED_ENV}: {e}")))?;
    }
    for k in KEYS {
        if k.name == DISABLE {
            for v in m.get_many::<String>(DISABLE).into_iter().flatten() {
                c.set(DISABLE, v)?;
            }
        } else if let Some(v) = m.get_one::<String>(k.name) {
            c.set(k.name, v)?;
        }
    }
    c.validate()?;
    Ok(c)
}

fn run(m: &ArgMatches) -> Result<()> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    // settings given after a nested subcommand land in its matches
    let mut deepest = sub;
    while let Some((_, inner)) = deepest.subcommand() {
        deepest = inner;
    }
    let c = effective_config(deepest, std::env::var(SEED_ENV).ok())?;
    match name {
        "kb" => commands::kb_validate(&c),
        "generate" => commands::generate(&c),
        "perturb" => commands::perturb(&c),
        "train" => commands::train(&c, sub.get_one::<String>("component").expect("required")),
        "tune-threshold" => commands::tune_threshold(&c),
        "predict" => commands::predict(&c),
        "evaluate" => commands::evaluate(&c),
        "ablate" => commands::ablate(&c),
        other => Err(usage(format!("unknown command `{other}`"))),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
