//! `weylroots` command-line driver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use weylroots::{Category, Error};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Density,
    Expect,
    Variance,
    Smallball,
    Blocks,
    Edgeworth,
    Sumcheck,
    Lcd,
    Cw,
    Fit,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Density => "density",
            Subcommand::Expect => "expect",
            Subcommand::Variance => "variance",
            Subcommand::Smallball => "smallball",
            Subcommand::Blocks => "blocks",
            Subcommand::Edgeworth => "edgeworth",
            Subcommand::Sumcheck => "sumcheck",
            Subcommand::Lcd => "lcd",
            Subcommand::Cw => "cw",
            Subcommand::Fit => "fit",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "weylroots", version, about = "Real zeros of random Weyl polynomials")]
pub struct Cli {
    #[arg(value_enum)]
    pub subcommand: Subcommand,
    /// TOML config, or a `manifest.json` from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "WEYLROOTS_WORKERS")]
    pub workers: Option<usize>,
}

fn exit_code(cat: Category) -> u8 {
    match cat {
        Category::Config => 2,
        Category::Resource => 3,
        Category::Numerical => 4,
        Category::Acceptance => 5,
    }
}

fn category_name(cat: Category) -> &'static str {
    match cat {
        Category::Config => "config",
        Category::Resource => "resource",
        Category::Numerical => "numerical",
        Category::Acceptance => "acceptance",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> ExitCode {
    let cat = e.category();
    eprintln!("weylroots: [{}] {e}", category_name(cat));
    ExitCode::from(exit_code(cat))
}
