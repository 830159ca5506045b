//! Reconstruction of Langevin drift and diffusion from time series.
//!
//! The crate covers the whole analysis chain:
//!
//! * [`ingest`]: price files, log-returns and the `|r| <= k sigma` restriction;
//! * [`diagnostics`]: sliding-window variance and the Chapman–Kolmogorov Markov test;
//! * [`km`]: binned Kramers–Moyal coefficients with drift/diffusion fits;
//! * [`rolling`]: rolling-window coefficient tracks and window-size sensitivity;
//! * [`changepoint`]: binary segmentation, an exact DP oracle and breakpoint density;
//! * [`langevin`]: Euler–Maruyama simulation used as ground truth;
//! * [`pipeline`]: file formats, stage runners and reproducible run manifests.

pub mod changepoint;
pub mod diagnostics;
pub mod error;
pub mod ingest;
pub mod km;
pub mod langevin;
pub mod pipeline;
pub mod rolling;
pub mod stats;

pub use changepoint::{
    binseg, dp_optimal, impute_undefined, union_and_density, BreakpointReport, SegmentationConfig,
    Signal,
};
pub use diagnostics::{
    ck_deviation, fit_markov_length, sliding_variance, transition_matrix, MarkovConfig,
    MarkovTestResult, StationarityCurve, TransitionMatrix,
};
pub use error::{Error, Result};
pub use ingest::{clip_returns, load_prices, log_returns, PriceColumns, PriceSeries, ReturnSeries};
pub use km::{
    estimate_km, fit_diffusion, fit_drift, pawula_ratio, DiffusionFit, DriftFit, KmConfig,
    KmProfile, Orders,
};
pub use langevin::{euler_maruyama, synthetic_regime_series, LangevinModel, SimulatedPath};
pub use rolling::{
    rolling_estimate, sensitivity, CoefficientTrack, RollingConfig, SensitivityReport, SigmaMode,
};
