//! Data ingestion and report rendering for the `expcli` binary.

pub mod data;
pub mod report;
pub mod scenario;

pub use data::{
    read_checkpoint_csv, read_responses_csv, read_transactions_csv, CheckpointRow,
    CheckpointSeries, DataError, Response, ResponseTable, VariantSeries,
};
pub use report::{Format, Report};
pub use scenario::read_scenario;

/// Process exit code for a failed command: 3 for numerical failures, 2 for everything the
/// caller can fix (bad flags, malformed files, degenerate data).
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<demlab::Error>(),
            Some(demlab::Error::Numerical(_))
        )
    });
    if numerical {
        3
    } else {
        2
    }
}
