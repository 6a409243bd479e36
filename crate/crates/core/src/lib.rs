//! Core algorithms for scoring film cues: symbolic notation, spotting,
//! visual analysis, rhythm conditioning, agent orchestration, rendering and
//! evaluation. Everything here needs only `alloc`; file and network IO
//! live in the `cuekit` crate.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod diag;
pub mod dsp;
pub mod notation;
pub mod melody;
pub mod vision;
pub mod audio;
pub mod conditioning;
pub mod metrics;
pub mod transcribe;
pub mod scheme;
pub mod render;
pub mod agents;
