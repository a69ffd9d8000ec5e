//! Synthetic needles-in-a-haystack retrieval grids.

mod grid;
mod oracle;
mod task;

pub use grid::{
    score_grid, score_row, write_grid_csv, write_heatmap_csv, CellKey, CellResult, GridResult, GridSummary, NeedlesGrid,
    Retriever,
};
pub use oracle::CopyHead;
pub use task::{make_sample, needle_start, NiahSample, TaskVocab, KEY_MARK, N_SPECIAL, PAD, QUERY_MARK};
