//! Subcommand dispatch and the flag vocabulary shared between subcommands.

mod eval;
mod generate;
mod inspect;
mod sweep;
mod train;

use clap::{Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::CliError;

#[derive(Subcommand)]
pub enum Command {
    /// Generate solver trajectories split into train/val/test files.
    Generate(generate::GenerateArgs),
    /// Train a surrogate on a generated dataset.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint on held-out test trajectories.
    Eval(eval::EvalArgs),
    /// Train the window-count series {1, 2, 4, 8, 16} and tabulate sizes.
    Sweep(sweep::SweepArgs),
    /// Summarize a mesh, trajectory, or checkpoint file.
    Inspect(inspect::InspectArgs),
}

impl Command {
    pub fn run(self) -> Result<(), CliError> {
        match self {
            Command::Generate(args) => generate::run(args),
            Command::Train(args) => train::run(args),
            Command::Eval(args) => eval::run(args),
            Command::Sweep(args) => sweep::run(args),
            Command::Inspect(args) => inspect::run(args),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdeName {
    /// Viscous Burgers.
    Burgers,
    /// FitzHugh-Nagumo reaction-diffusion.
    Fn,
    /// Gray-Scott reaction-diffusion.
    Gs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcName {
    /// Independent normal draws per node and channel.
    Gaussian,
    /// Uniform background with rectangular seed blocks.
    Blocks,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablate {
    /// Full model.
    None,
    /// Drop the cell stream from message passing.
    NoCell,
    /// Drop the feature-enhancement blocks.
    NoFe,
    /// Drop both the cell stream and the enhancement blocks.
    NoCellNoFe,
}

impl Ablate {
    pub fn cell_enabled(self) -> bool {
        matches!(self, Ablate::None | Ablate::NoFe)
    }

    pub fn fe_enabled(self) -> bool {
        matches!(self, Ablate::None | Ablate::NoCell)
    }
}
