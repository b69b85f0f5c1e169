//! Corpus handling: series frames, CSV ingestion, farm graphs, windowing,
//! and synthetic regime-switching corpora for tests and CI.

pub mod csvio;
pub mod frames;
pub mod graph;
pub mod synth;

pub use csvio::{
    load_farm_meta, load_series_csv, write_farm_meta, write_series_csv, GapPolicy, GapReport,
    SeriesLayout, SeriesSchema, TimestampKind,
};
pub use frames::{
    normalize_minmax, sliding_windows, split_by_date, FarmMeta, Scaler, TimeSeriesFrame,
    WindowSample,
};
pub use graph::{build_graph, haversine_km, WindFarmGraph};
pub use synth::{gen_synthetic, RegimeKind, RegimeLabel, Segment, SynthConfig, SynthCorpus};
