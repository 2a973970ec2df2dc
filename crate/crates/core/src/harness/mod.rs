//! Experiment drivers: gain alignment, frame-budget sweeps, defences,
//! configuration and reports.

pub mod align;
pub mod budget;
pub mod config;
pub mod defend;
pub mod report;

pub use align::{align_gain, align_with, AlignItem, AlignParams, AlignResult, Convergence};
pub use budget::{frame_budget_sweep, BudgetRow};
pub use config::Config;
pub use defend::{defend_random_crop, defend_resize, defended_gain, resize_bilinear, Defence};
pub use report::{attack_rows, emit_report, fmt_sig, Aggregate, ReportRow, RunReport, CSV_HEADER};
