//! Location anomaly detection over cellular RAN signaling events.
//!
//! A device identity seen on two cells too far apart for the time between
//! the events, with no handover to explain it, is reported as a location
//! anomaly. The crate contains the geodesy, ingestion, trajectory indexing,
//! RTD compensation, detection and NAS pre-filter pipeline, plus a
//! deterministic fleet simulator that produces labelled test data.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`, which is what the CLI uses.

pub mod detector;
pub mod event_model;
pub mod geo;
pub mod pipeline;
pub mod rtd_comp;
pub mod scalar;
pub mod simulator;
pub mod trajectory;

pub use scalar::Scalar;

pub type GeoPoint = geo::GeoPoint<f64>;
pub type EarthModel = geo::EarthModel<f64>;
pub type CellSite = event_model::CellSite<f64>;
pub type CellCatalog = event_model::CellCatalog<f64>;
pub type EventDataset = event_model::EventDataset<f64>;
pub type Transition = trajectory::Transition<f64>;
pub type QueueSettings = rtd_comp::QueueSettings<f64>;
pub type CompensationQueue = rtd_comp::CompensationQueue<f64>;
pub type CompensationStore = rtd_comp::CompensationStore<f64>;
pub type DetectorConfig = detector::DetectorConfig<f64>;
pub type Detector = detector::Detector<f64>;
pub type AnomalyFinding = detector::AnomalyFinding<f64>;
pub type PipelineReport = pipeline::PipelineReport<f64>;

pub use event_model::{CellIdx, EventRecord, HoFailCode, ImsiId, Morphology, Plane, SignalingEvent, Trigger};
pub use pipeline::{PipelineOptions, ReportDocument};
