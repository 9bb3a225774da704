//! Trace-driven web capture.
//!
//! Curators describe a page class once as a [`trace::Trace`]; the engine
//! compiles it into an [`compiler::ActionPlan`], replays it through a
//! [`driver`] session whose traffic passes a WARC-writing [`proxy`], and
//! [`quality`] measures how much of the live resource ended up in the archive.

pub mod bench;
pub mod capture;
pub mod compiler;
pub mod driver;
pub mod fixture;
pub mod json;
pub mod proxy;
pub mod quality;
pub mod repo;
pub mod tls;
pub mod trace;
