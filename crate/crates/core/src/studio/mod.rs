//! Curated prior samples for interactive hyper-parameter review.

mod basis;
mod dataset;
mod overview;
mod session;

pub use basis::{perturbation_basis, PerturbationBasis, EIGEN_CUTOFF};
pub use dataset::{field_length, SampleDataset, SampleRecord, DEFAULT_Q};
pub use overview::{build_overview, OverviewBin, OverviewPayload, OverviewPoint, View, MAX_BINS, RAW_POINT_LIMIT};
pub use session::{
    AuditEntry, FieldJson, HyperPatch, PosteriorPayload, RecordPayload, Session, TimeseriesPayload,
};
