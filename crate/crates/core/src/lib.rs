//! Remaining-useful-life prediction for multivariate run-to-failure series.
//!
//! The pipeline reads C-MAPSS style trajectories ([`cmapss`]), standardizes
//! sensors per operating regime ([`regimes`]), cuts padded and masked
//! windows with piecewise-linear targets ([`windowing`]), trains an
//! encoder-only transformer built on a small reverse-mode tape
//! ([`numerics`], [`transformer`], [`training`]) and scores predictions with
//! RMSE and the PHM08 asymmetric score ([`evaluation`]). The [`cli`] module
//! wires the stages into the `rulformer` binary.

pub mod cli;
pub mod cmapss;
pub mod evaluation;
pub mod numerics;
pub mod regimes;
pub mod seed;
pub mod training;
pub mod transformer;
pub mod windowing;

use thiserror::Error;

/// Top-level error joining the per-stage error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] cmapss::DataError),
    #[error(transparent)]
    Regime(#[from] regimes::RegimeError),
    #[error(transparent)]
    Window(#[from] windowing::WindowError),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Model(#[from] transformer::ModelError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
