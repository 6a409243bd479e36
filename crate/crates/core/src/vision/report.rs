//! The visual-attribute report and its fixed vocabulary.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Deserializer, Serialize};

use super::VisionError;
use crate::diag::Diagnostic;

const BUNDLED_VOCABULARY: &str = include_str!("../../assets/vocabulary.json");

/// Attribute categories in prompt order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    Setting,
    Brightness,
    ColorHue,
    Action,
    Emotion,
    ViewScale,
    Theme,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Setting,
        Category::Brightness,
        Category::ColorHue,
        Category::Action,
        Category::Emotion,
        Category::ViewScale,
        Category::Theme,
    ];

    /// JSON key, also the key used in the vocabulary file.
    pub fn key(self) -> &'static str {
        match self {
            Category::Setting => "setting",
            Category::Brightness => "brightness",
            Category::ColorHue => "color_hue",
            Category::Action => "action",
            Category::Emotion => "emotion",
            Category::ViewScale => "view_scale",
            Category::Theme => "theme",
        }
    }

    /// Name used in rendered descriptions.
    pub fn title(self) -> &'static str {
        match self {
            Category::ColorHue => "color hue",
            Category::ViewScale => "view scale",
            other => other.key(),
        }
    }
}

/// One or more labels. A bare JSON string reads as a single label.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
#[serde(transparent)]
pub struct Labels(pub Vec<String>);

impl<'de> Deserialize<'de> for Labels {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            One(String),
            Many(Vec<String>),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::One(s) => Labels(alloc::vec![s]),
            Repr::Many(v) => Labels(v),
        })
    }
}

impl<S: Into<String>> FromIterator<S> for Labels {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Labels(iter.into_iter().map(Into::into).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualReport {
    pub setting: Labels,
    pub brightness: Labels,
    pub color_hue: Labels,
    pub action: Labels,
    pub emotion: Labels,
    pub view_scale: Labels,
    pub theme: Labels,
    #[serde(default)]
    pub motion_speed: f64,
    #[serde(default)]
    pub motion_saliency: f64,
    #[serde(default)]
    pub shot_cuts: Vec<f64>,
    #[serde(default)]
    pub plot_development: String,
}

impl VisualReport {
    pub fn labels(&self, c: Category) -> &Labels {
        match c {
            Category::Setting => &self.setting,
            Category::Brightness => &self.brightness,
            Category::ColorHue => &self.color_hue,
            Category::Action => &self.action,
            Category::Emotion => &self.emotion,
            Category::ViewScale => &self.view_scale,
            Category::Theme => &self.theme,
        }
    }

    pub fn labels_mut(&mut self, c: Category) -> &mut Labels {
        match c {
            Category::Setting => &mut self.setting,
            Category::Brightness => &mut self.brightness,
            Category::ColorHue => &mut self.color_hue,
            Category::Action => &mut self.action,
            Category::Emotion => &mut self.emotion,
            Category::ViewScale => &mut self.view_scale,
            Category::Theme => &mut self.theme,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CategoryEntry {
    name: String,
    labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub version: u32,
    categories: Vec<CategoryEntry>,
}

fn normalize(s: &str) -> String {
    s.trim().to_ascii_lowercase()
}

impl Vocabulary {
    /// The vocabulary shipped with the crate.
    pub fn bundled() -> Vocabulary {
        Self::from_json(BUNDLED_VOCABULARY).expect("bundled vocabulary is valid JSON")
    }

    pub fn from_json(text: &str) -> Result<Vocabulary, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Labels of a category in their canonical spelling.
    pub fn labels(&self, c: Category) -> &[String] {
        self.categories
            .iter()
            .find(|e| e.name == c.key())
            .map(|e| e.labels.as_slice())
            .unwrap_or(&[])
    }

    /// Canonical spelling of a label, matched case-insensitively after
    /// trimming.
    pub fn canonical(&self, c: Category, label: &str) -> Option<&str> {
        let n = normalize(label);
        self.labels(c)
            .iter()
            .find(|l| normalize(l) == n)
            .map(String::as_str)
    }
}

fn is_null(label: &str) -> bool {
    normalize(label) == "null"
}

/// Checks every label against the vocabulary plus the numeric invariants.
pub fn validate_visual_report(report: &VisualReport, vocab: &Vocabulary) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for c in Category::ALL {
        let labels = &report.labels(c).0;
        if labels.is_empty() {
            out.push(Diagnostic::error(format!("{} needs at least one label", c.title())).at_path(format!("/{}", c.key())));
        }
        for (i, l) in labels.iter().enumerate() {
            if vocab.canonical(c, l).is_none() {
                out.push(
                    Diagnostic::error(format!("'{}' is not a {} label", l.trim(), c.title()))
                        .at_path(format!("/{}/{i}", c.key())),
                );
            }
        }
    }
    for (key, v) in [("motion_speed", report.motion_speed), ("motion_saliency", report.motion_saliency)] {
        if !(v >= 0.0) || !v.is_finite() {
            out.push(Diagnostic::error(format!("{key} must be a finite non-negative number")).at_path(format!("/{key}")));
        }
    }
    if report.shot_cuts.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        out.push(Diagnostic::error("shot cuts must be finite non-negative times").at_path("/shot_cuts"));
    }
    if report.shot_cuts.windows(2).any(|w| !(w[1] > w[0])) {
        out.push(Diagnostic::error("shot cuts must be strictly increasing").at_path("/shot_cuts"));
    }
    out
}

/// Renders the report as prompt text: `category: labels` pairs in fixed
/// order, null labels omitted, then the music hints verbatim.
pub fn build_description(
    report: &VisualReport,
    vocab: &Vocabulary,
    music_hints: Option<&str>,
) -> Result<String, VisionError> {
    if validate_visual_report(report, vocab).iter().any(Diagnostic::is_error) {
        return Err(VisionError::InvalidReport);
    }
    let mut parts: Vec<String> = Vec::new();
    for c in Category::ALL {
        let labels: Vec<&str> = report
            .labels(c)
            .0
            .iter()
            .filter(|l| !is_null(l))
            .filter_map(|l| vocab.canonical(c, l))
            .collect();
        if !labels.is_empty() {
            parts.push(format!("{}: {}", c.title(), labels.join(", ")));
        }
    }
    let mut text = parts.join("; ");
    if let Some(h) = music_hints.filter(|h| !h.is_empty()) {
        if !text.is_empty() {
            text.push_str(". ");
        }
        text.push_str(h);
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> VisualReport {
        serde_json::from_str(
            r#"{"setting":"road","brightness":"dark","color_hue":["blue","Gray"],"action":"run",
                "emotion":"nervous","view_scale":"long shot","theme":"thriller"}"#,
        )
        .unwrap()
    }

    #[test]
    fn vocabulary_sizes() {
        let v = Vocabulary::bundled();
        let sizes: Vec<usize> = Category::ALL.iter().map(|&c| v.labels(c).len()).collect();
        assert_eq!(sizes, alloc::vec![64, 7, 11, 50, 13, 5, 20]);
    }

    #[test]
    fn sparkly_is_rejected() {
        let mut r = report();
        r.brightness = ["sparkly"].into_iter().collect();
        let d = validate_visual_report(&r, &Vocabulary::bundled());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path.as_deref(), Some("/brightness/0"));
    }

    #[test]
    fn null_only_where_listed() {
        let v = Vocabulary::bundled();
        let mut r = report();
        for c in [Category::Setting, Category::Action, Category::Emotion, Category::Theme] {
            *r.labels_mut(c) = ["null"].into_iter().collect();
        }
        assert!(validate_visual_report(&r, &v).is_empty());
        r.view_scale = ["null"].into_iter().collect();
        assert_eq!(validate_visual_report(&r, &v).len(), 1);
    }

    #[test]
    fn unsorted_cuts_rejected() {
        let mut r = report();
        r.shot_cuts = alloc::vec![2.0, 1.0];
        assert_eq!(validate_visual_report(&r, &Vocabulary::bundled()).len(), 1);
    }

    #[test]
    fn description_uses_canonical_labels() {
        let v = Vocabulary::bundled();
        let text = build_description(&report(), &v, None).unwrap();
        assert_eq!(
            text,
            "setting: road; brightness: dark; color hue: Blue, Gray; action: run; emotion: Nervous; view scale: long shot; theme: thriller"
        );
        let hinted = build_description(&report(), &v, Some("slow waltz, strings")).unwrap();
        assert!(hinted.ends_with("slow waltz, strings"));
    }
}
