//! Series ingestion, windowing, normalization, forecast metrics, and the
//! planted-graph generator used to check graph recovery.

mod dataset;
mod metrics;
mod recovery;
mod scaler;
mod synth;
mod window;

pub use dataset::{
    format_f64, format_row, load_csv, read_matrix_csv, write_matrix_csv, SeriesDataset,
    TIMESTAMP_COLUMN,
};
pub use metrics::{pearson, Metrics};
pub use recovery::graph_recovery_score;
pub use scaler::{Scaler, STD_FLOOR};
pub use synth::{
    synth_generate, transition_from_edges, PlantedGraphSpec, SwitchInterval, SynthOutput,
};
pub use window::{split_lengths, window_split, Splits, WindowBatch, WindowSet, SPLIT_NAMES};
