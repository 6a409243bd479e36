use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

const BUNDLED_REGISTRY: &str = include_str!("../../assets/instruments.json");

/// One playable instrument: its General-MIDI program, the synthesis
/// recipe that stands in for it, and its comfortable pitch range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentEntry {
    pub name: String,
    pub program: u8,
    pub recipe: String,
    pub family: String,
    pub low: u8,
    pub high: u8,
}

impl InstrumentEntry {
    pub fn in_range(&self, pitch: i32) -> bool {
        (self.low as i32..=self.high as i32).contains(&pitch)
    }

    /// Moves a pitch by whole octaves into range. Ranges narrower than an
    /// octave clamp whatever is still outside.
    pub fn fold(&self, pitch: i32) -> u8 {
        let (lo, hi) = (self.low as i32, self.high as i32);
        let mut p = pitch;
        while p < lo {
            p += 12;
        }
        while p > hi {
            p -= 12;
        }
        p.clamp(lo, hi) as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentRegistry {
    pub version: u32,
    pub instruments: Vec<InstrumentEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("registry is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("instrument '{0}' is listed twice")]
    Duplicate(String),
    #[error("instrument '{0}' has an empty or inverted pitch range")]
    BadRange(String),
}

impl InstrumentRegistry {
    pub fn bundled() -> InstrumentRegistry {
        Self::from_json(BUNDLED_REGISTRY).expect("bundled registry is valid")
    }

    pub fn from_json(text: &str) -> Result<InstrumentRegistry, RegistryError> {
        let reg: InstrumentRegistry = serde_json::from_str(text)?;
        for (i, e) in reg.instruments.iter().enumerate() {
            if reg.instruments[..i].iter().any(|o| o.name.eq_ignore_ascii_case(&e.name)) {
                return Err(RegistryError::Duplicate(e.name.clone()));
            }
            if e.low > e.high || e.high > 127 {
                return Err(RegistryError::BadRange(e.name.clone()));
            }
        }
        Ok(reg)
    }

    /// Case-insensitive lookup.
    pub fn get(&self, name: &str) -> Option<&InstrumentEntry> {
        self.instruments.iter().find(|e| e.name.eq_ignore_ascii_case(name))
    }

    /// First instrument with this General-MIDI program.
    pub fn by_program(&self, program: u8) -> Option<&InstrumentEntry> {
        self.instruments.iter().find(|e| e.program == program)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.instruments.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.instruments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instruments.is_empty()
    }
}
