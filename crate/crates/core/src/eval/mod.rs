//! Entity-level scoring and the low-resource experiment grid.

mod grid;
mod spans;

pub use grid::{run_experiment_grid, GridCell, GridJob, GridReport, Recipe, SizeSummary, Variant};
pub use spans::{evaluate_ids, extract_spans, span_f1, spans_to_tags, EvalReport, Score, Span, SpanSet};
