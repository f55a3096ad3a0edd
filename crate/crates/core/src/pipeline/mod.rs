//! Ingestion of hydrophone data and empirical correlation statistics.

mod empirical;
mod recording;
mod snapshots;

pub use empirical::{
    empirical_correlation, empirical_radius, empirical_scintillation, ArmPooling, EmpiricalCurve, EmpiricalOptions,
    EmpiricalScintillation, RepetitionAveraging,
};
pub use recording::{
    detect_onsets, extract_coefficients, hann_coefficient, hann_window, read_recording, write_recording, Extraction,
    Recording, RecordingMeta, RECORDING_FORMAT_VERSION,
};
pub use snapshots::{read_snapshots_csv, write_snapshots_csv, Snapshot, SnapshotSet, SNAPSHOT_FORMAT_VERSION};
