//! The interactive modeling loop: sketch, synthesize, rotate, edit, export.
//!
//! A [`Session`] holds the state of one modeling session and an append-only
//! history of the operations applied to it. Every operation is deterministic
//! under the session config, so replaying the history from scratch rebuilds
//! the same strands bit for bit.

mod infer;
mod session;
mod sketch;

pub use infer::{clamp_field, infer_o2v, infer_s2o, infer_v2v};
pub use session::{
    grow_in_view, strand_hash, Backend, EditRequest, ExportFormat, HistoryEntry, Models, Operation, Outcome, Session, SessionConfig,
    StrandSummary,
};
pub use sketch::{boundary_defaults, demo_sketch, rasterize_contour, rasterize_strokes, validate_contour, StrokeSet, CLOSE_TOL_PX};
