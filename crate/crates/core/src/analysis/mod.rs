//! Post-processing of simulated data.

pub mod bands;
pub mod decay;
pub mod edge;
pub mod fit;

pub use bands::{band_structure, ensemble_band_structure, fwhm_profile, BandData, BandOptions, FwhmPoint, FwhmProfile, WhichBand, Window};
pub use decay::{
    analytic_return, fit_decay, recurrence_return, MIN_FIT_LEN, return_from_ensemble, return_from_master, DecayFlag, DecayReport,
    ReturnProbSeries, SeriesSource, TailModel,
};
pub use edge::{edge_states_for, extract_edge_states, BandEdges, EdgeReport, EdgeSide, EdgeState, GapLabel};
