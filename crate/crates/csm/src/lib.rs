//! Command line, configuration and file formats around `csm-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

use clap::{Arg, ArgMatches, Command};

use crate::config::{RunConfig, KEYS};
use crate::error::{CliError, Result};

fn with_keys(cmd: Command) -> Command {
    let cmd = cmd.arg(Arg::new("config").long("config").value_name("PATH").help("config file of `key = value` lines"));
    KEYS.iter().fold(cmd, |c, &k| c.arg(Arg::new(k).long(k).value_name("VALUE").help("overrides the config key")))
}

pub fn cli() -> Command {
    Command::new("csm")
        .about("Train, sample and evaluate concrete score models on discrete data")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_keys(Command::new("train").about("train a model and write a checkpoint")))
        .subcommand(with_keys(Command::new("sample").about("run MH chains from a checkpoint")))
        .subcommand(with_keys(Command::new("eval").about("per-sample log-likelihood of a dataset")))
        .subcommand(with_keys(Command::new("check").about("run the verification suites")))
}

/// The config file (if any) with command-line overrides applied, validated.
pub fn resolve_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => RunConfig::load(p.as_ref())?,
        None => RunConfig::default(),
    };
    for &k in KEYS {
        if let Some(v) = m.get_one::<String>(k) {
            cfg.set(k, v).map_err(|e| CliError::Config(format!("--{k}: {e}")))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (program name first) and runs the chosen command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = cli().try_get_matches_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    dispatch(&matches)
}

/// Runs the subcommand selected in `matches`.
pub fn dispatch(matches: &ArgMatches) -> Result<()> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cfg = resolve_config(sub)?;
    match name {
        "train" => commands::cmd_train(&cfg),
        "sample" => commands::cmd_sample(&cfg),
        "eval" => commands::cmd_eval(&cfg),
        "check" => commands::cmd_check(&cfg),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}
