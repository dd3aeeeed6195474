//! Fare-collection records to binned, normalized, windowed ridership.

mod norm;
mod records;
mod synth;
mod tensor;
mod windows;

pub use norm::{zscore_apply, zscore_fit, zscore_invert, NormStats};
pub use records::{format_timestamp, parse_records, parse_timestamp, read_records, write_records, AfcRecord, StationIndex};
pub use synth::{gen_synthetic, SynthProfile, SyntheticData};
pub use tensor::{bin_ridership, parse_hhmm, BinReport, DaySpan, RidershipTensor, ServiceCalendar, ServiceWindow};
pub(crate) use tensor::{layout_days, BinLocator};
pub use windows::{
    make_paired_windows, make_windows, split_windows, window_starts, DatasetSplit, DateRange, SplitRanges, WindowSample,
};
