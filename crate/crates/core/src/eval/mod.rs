//! Error metrics per horizon, comparison slices and the historical-average
//! baseline.

mod baseline;
mod metrics;
mod slices;

pub use baseline::{ha_baseline, ha_predictions};
pub use metrics::{evaluate, metrics, metrics_with, render_table, write_report_csv, MapeRule, Metrics, MetricsReport};
pub use slices::{slice_rush_hours, slice_top_quartile, Slice, SliceSpec, RUSH_WINDOWS};
