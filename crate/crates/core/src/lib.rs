//! Resonant-transmission spectroscopy of waveguide-coupled quantum
//! emitters: forward models, fitters, and a deterministic analysis
//! pipeline.
//!
//! The crate covers the full quantitative chain of a linewidth survey on
//! emitters coupled to a photonic-crystal waveguide:
//!
//! - [`wgqed`] — transmission lineshape of a waveguide-coupled two-level
//!   emitter with a coherent Fano background, the band-edge transmission
//!   envelope, and Stark-shifted charge plateaus;
//! - [`lineshape`] — dip detection and five-parameter lineshape fits;
//!   the reported width is the symmetric FWHM with the background
//!   omitted;
//! - [`lifetime`] — IRF-convolved single-exponential decay fits (Poisson
//!   MLE) and the transform-limit comparison `Gamma = gamma / 2 pi`;
//! - [`diode`] — implicit Shockley p-i-n diode with series/parallel
//!   resistance, solved without overflow at cryogenic thermal voltage;
//! - [`modulation`] — cycle-averaged fluorescence under gate modulation
//!   with low-pass-attenuated amplitude, a time-domain oracle, and the
//!   RC time-constant fit;
//! - [`geometry`] — W1 unit-cell area fractions, the limiting-distance
//!   solve, and a simplified band-edge Purcell envelope;
//! - [`pipeline`] — CSV/key-value I/O, seeded synthesis, experiment
//!   orchestration and report emission.
//!
//! Numeric kernels are generic over the scalar type via
//! [`scalar::Real`] (`f32` or `f64`); the aliases below pin the `f64`
//! instantiations that the pipeline and CLI use.

pub mod diode;
pub mod geometry;
pub mod lifetime;
pub mod lineshape;
pub mod modulation;
pub mod optimize;
pub mod pipeline;
pub mod quad;
pub mod scalar;
pub mod stats;
pub mod wgqed;

pub use scalar::Real;

/// `f64` instantiations of the domain types.
pub type EmitterModel = wgqed::EmitterModel<f64>;
pub type BandEdgeModel = wgqed::BandEdgeModel<f64>;
pub type ScanTrace = wgqed::ScanTrace<f64>;
pub type ScanMeta = wgqed::ScanMeta<f64>;
pub type DipCandidate = lineshape::DipCandidate<f64>;
pub type DipFit = lineshape::DipFit<f64>;
pub type DetectConfig = lineshape::DetectConfig<f64>;
pub type QualityGates = lineshape::QualityGates<f64>;
pub type LinewidthSummary = lineshape::LinewidthSummary<f64>;
pub type DecayHistogram = lifetime::DecayHistogram<f64>;
pub type DecayFit = lifetime::DecayFit<f64>;
pub type DiodeParams = diode::DiodeParams<f64>;
pub type IvFit = diode::IvFit<f64>;
pub type VoltageResponse = modulation::VoltageResponse<f64>;
pub type RcDrive = modulation::RcDrive<f64>;
pub type RcFit = modulation::RcFit<f64>;
pub type PcwGeometry = geometry::PcwGeometry<f64>;
pub type PurcellEnvelope = geometry::PurcellEnvelope<f64>;
