//! Rhythm conditioning: click tracks, chromagrams, the prefix bundle handed
//! to a melody generator, and a deterministic stand-in generator.

mod bundle;
mod chroma;
mod click;
mod stub;

pub use bundle::{
    assemble_condition, ConditioningBundle, GeneratorBackend, GeneratorCaps, GeneratorError, PrefixPart,
};
pub use chroma::{
    chromagram, downsample_chroma, pitch_class_of, ChromaError, Chromagram, DEFAULT_CHROMA_HOP,
    DEFAULT_CHROMA_WINDOW, PITCH_CLASS_NAMES,
};
pub use click::{synthesize_click_track, synthesize_click_track_with, ClickParams};
pub use stub::{StubGenerator, StubNote};
