use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::chroma::{ChromaError, Chromagram};
use crate::audio::{AudioError, Waveform};

/// One block of the conditioning prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefixPart {
    Rhythm,
    Description,
}

/// The conditions prepended to a melody generator's input, rhythm first.
///
/// Field order is the serialization order, so a serialized bundle always
/// lists the rhythm block before the description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningBundle {
    prefix_order: Vec<PrefixPart>,
    rhythm: Chromagram,
    description: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("description must not be empty")]
    EmptyDescription,
    #[error("prefix order must be [rhythm, description]")]
    PrefixOrder,
    #[error("invalid rhythm condition: {0}")]
    Chroma(#[from] ChromaError),
    #[error("duration must be positive and finite, got {0}")]
    BadDuration(f64),
    #[error("duration {requested} s exceeds the backend limit of {max} s")]
    TooLong { requested: f64, max: f64 },
    #[error("malformed bundle: {0}")]
    Malformed(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("generator backend failed: {0}")]
    Backend(String),
}

impl ConditioningBundle {
    pub fn rhythm(&self) -> &Chromagram {
        &self.rhythm
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn prefix_order(&self) -> &[PrefixPart] {
        &self.prefix_order
    }

    pub fn to_json(&self) -> String {
        // every field is plain data, serialization cannot fail
        serde_json::to_string(self).expect("bundle serializes")
    }

    /// Parses and re-checks the invariants a hand-written file could break.
    pub fn from_json(text: &str) -> Result<Self, GeneratorError> {
        let b: ConditioningBundle =
            serde_json::from_str(text).map_err(|e| GeneratorError::Malformed(e.to_string()))?;
        if b.prefix_order != [PrefixPart::Rhythm, PrefixPart::Description] {
            return Err(GeneratorError::PrefixOrder);
        }
        if b.description.trim().is_empty() {
            return Err(GeneratorError::EmptyDescription);
        }
        b.rhythm.validate()?;
        Ok(b)
    }
}

pub fn assemble_condition(chroma: Chromagram, description: &str) -> Result<ConditioningBundle, GeneratorError> {
    if description.trim().is_empty() {
        return Err(GeneratorError::EmptyDescription);
    }
    chroma.validate()?;
    Ok(ConditioningBundle {
        prefix_order: alloc::vec![PrefixPart::Rhythm, PrefixPart::Description],
        rhythm: chroma,
        description: description.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCaps {
    /// Longest clip the backend will produce, in seconds.
    pub max_duration: f64,
    pub sample_rate: u32,
    /// False when calls must be serialized by the caller.
    pub concurrent: bool,
}

/// A melody generator. Implementations must be deterministic: the same
/// bundle, duration and seed always give the same waveform.
pub trait GeneratorBackend: Send + Sync {
    fn capabilities(&self) -> GeneratorCaps;

    fn generate(&self, bundle: &ConditioningBundle, duration: f64, seed: u64) -> Result<Waveform, GeneratorError>;

    /// Shared argument check for implementations.
    fn check_duration(&self, duration: f64) -> Result<(), GeneratorError> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(GeneratorError::BadDuration(duration));
        }
        let max = self.capabilities().max_duration;
        if duration > max {
            return Err(GeneratorError::TooLong {
                requested: duration,
                max,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn chroma() -> Chromagram {
        let mut f = [0.0; 12];
        f[4] = 1.0;
        Chromagram {
            sample_rate: 32_000,
            window: 4096,
            hop: 2048,
            one_hot: true,
            frames: vec![f, [0.0; 12]],
            mask: vec![true, false],
        }
    }

    #[test]
    fn rhythm_precedes_description() {
        let b = assemble_condition(chroma(), "a tense chase").unwrap();
        let json = b.to_json();
        assert!(json.find("\"rhythm\"").unwrap() < json.find("\"description\"").unwrap());
        assert!(json.starts_with("{\"prefix_order\":[\"rhythm\",\"description\"]"));
        assert_eq!(ConditioningBundle::from_json(&json).unwrap(), b);
    }

    #[test]
    fn empty_description_rejected() {
        assert_eq!(assemble_condition(chroma(), "  "), Err(GeneratorError::EmptyDescription));
    }

    #[test]
    fn swapped_order_rejected() {
        let json = assemble_condition(chroma(), "x")
            .unwrap()
            .to_json()
            .replace("[\"rhythm\",\"description\"]", "[\"description\",\"rhythm\"]");
        assert_eq!(ConditioningBundle::from_json(&json), Err(GeneratorError::PrefixOrder));
    }
}
