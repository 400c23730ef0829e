use thiserror::Error;

use crate::attribution::AttributionError;
use crate::dataio::DataError;
use crate::ecgref::EcgError;
use crate::hrv::HrvError;
use crate::ml::MlError;
use crate::rppg::RppgError;
use crate::stats::StatsError;
use crate::synthgen::SynthError;
use crate::thermal::ThermalError;

/// Crate-wide error, one variant per module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Rppg(#[from] RppgError),
    #[error(transparent)]
    Hrv(#[from] HrvError),
    #[error(transparent)]
    Ecg(#[from] EcgError),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
