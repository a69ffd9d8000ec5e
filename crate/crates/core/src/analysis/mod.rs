//! Attention diagnostics over captured traces: four-segment attention mass,
//! grouping by layer kind, and entropy with optional trimming and smoothing.

mod entropy;
mod mass;
mod report;
mod spans;

pub use entropy::{
    attention_entropy, end_rows, entropy_report, entropy_row, mean_distribution, moving_average, preprocess_distribution,
    retained_range, row_entropy, EntropyMode, EntropyReport, SMOOTH_WINDOW, TAIL_FRACTION,
};
pub use mass::{aggregate_mass, attention_mass, Grouping, HeadMass, MassReport, MassRow};
pub use report::{write_distribution_csv, write_entropy_csv, write_mass_csv};
pub use spans::{Segment, SegmentSpans, BEGIN_LEN};

