//! ABC notation: a parser and serializer for the subset documented in
//! `docs/abc-grammar.md`, plus conversion to and from [`MidiSong`].
//!
//! Durations inside this module are exact fractions of a whole note. The
//! grammar only admits power-of-two denominators, which keeps every sum
//! representable without overflow.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use num_rational::Ratio;
use thiserror::Error;

use super::{MidiNote, MidiSong, TempoChange, TimeSignature, Timeline, Track, PERCUSSION_CHANNEL};
use crate::diag::Diagnostic;
use crate::dsp::math::round;

/// A duration as a fraction of a whole note.
pub type Length = Ratio<u64>;

const MAX_DEN: u64 = 1024;
const MAX_NUM: u64 = 10_000;
const OUTPUT_TPQ: u16 = 480;
const DEFAULT_VELOCITY: u8 = 80;
const BARS_PER_LINE: usize = 4;

const LETTERS: [char; 7] = ['C', 'D', 'E', 'F', 'G', 'A', 'B'];
const NATURAL_PC: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
/// Position of each letter (C..B) in the order sharps are added: F C G D A E B.
const SHARP_ORDER: [i32; 7] = [1, 3, 5, 0, 2, 4, 6];
/// Fifths distance of each natural tonic (C..B) from C.
const LETTER_FIFTHS: [i32; 7] = [0, 2, 4, -1, 1, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Major,
    Minor,
    Dorian,
    Phrygian,
    Lydian,
    Mixolydian,
    Locrian,
}

impl Mode {
    fn offset(self) -> i32 {
        match self {
            Mode::Major => 0,
            Mode::Minor => -3,
            Mode::Dorian => -2,
            Mode::Phrygian => -4,
            Mode::Lydian => 1,
            Mode::Mixolydian => -1,
            Mode::Locrian => -5,
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            Mode::Major => "",
            Mode::Minor => "m",
            Mode::Dorian => "Dor",
            Mode::Phrygian => "Phr",
            Mode::Lydian => "Lyd",
            Mode::Mixolydian => "Mix",
            Mode::Locrian => "Loc",
        }
    }

    fn parse(s: &str) -> Option<Mode> {
        let s = s.to_ascii_lowercase();
        if s.is_empty() || s == "m" {
            return Some(if s.is_empty() { Mode::Major } else { Mode::Minor });
        }
        if s.len() < 3 {
            return None;
        }
        let table: [(&str, &str, Mode); 8] = [
            ("maj", "major", Mode::Major),
            ("ion", "ionian", Mode::Major),
            ("min", "minor", Mode::Minor),
            ("aeo", "aeolian", Mode::Minor),
            ("dor", "dorian", Mode::Dorian),
            ("phr", "phrygian", Mode::Phrygian),
            ("lyd", "lydian", Mode::Lydian),
            ("mix", "mixolydian", Mode::Mixolydian),
        ];
        for (short, long, mode) in table {
            if s.starts_with(short) && long.starts_with(s.as_str()) {
                return Some(mode);
            }
        }
        if s.starts_with("loc") && "locrian".starts_with(s.as_str()) {
            return Some(Mode::Locrian);
        }
        None
    }
}

/// A key signature: number of sharps (positive) or flats (negative) plus mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AbcKey {
    pub fifths: i8,
    pub mode: Mode,
}

impl AbcKey {
    pub fn new(fifths: i8, mode: Mode) -> Self {
        AbcKey { fifths, mode }
    }

    /// Parses the value of a `K:` field, e.g. `G`, `F#m`, `Bbmaj`, `DDor`.
    /// Trailing clef or transposition attributes are ignored.
    pub fn parse(s: &str) -> Option<AbcKey> {
        let token = s.split_whitespace().next()?;
        if token.eq_ignore_ascii_case("none") {
            return Some(AbcKey::default());
        }
        let mut chars = token.chars();
        let letter = chars.next()?.to_ascii_uppercase();
        let li = LETTERS.iter().position(|&c| c == letter)?;
        let rest = chars.as_str();
        let (acc, rest) = match rest.as_bytes().first() {
            Some(b'#') => (1, &rest[1..]),
            Some(b'b') if !rest.starts_with("bb") || rest.len() == 1 => (-1, &rest[1..]),
            _ => (0, rest),
        };
        let mode = Mode::parse(rest)?;
        let fifths = LETTER_FIFTHS[li] + 7 * acc + mode.offset();
        if !(-7..=7).contains(&fifths) {
            return None;
        }
        Some(AbcKey::new(fifths as i8, mode))
    }

    pub fn tonic_name(&self) -> String {
        let tf = self.fifths as i32 - self.mode.offset() + 1;
        let letter = ['F', 'C', 'G', 'D', 'A', 'E', 'B'][tf.rem_euclid(7) as usize];
        let acc = tf.div_euclid(7);
        let mut s = String::new();
        s.push(letter);
        for _ in 0..acc.max(0) {
            s.push('#');
        }
        for _ in 0..(-acc).max(0) {
            s.push('b');
        }
        s
    }

    /// Semitone offset the signature applies to a letter (index into C..B).
    pub fn accidental(&self, letter: usize) -> i8 {
        let f = self.fifths as i32;
        let pos = SHARP_ORDER[letter];
        if f > 0 && pos < f {
            1
        } else if f < 0 && pos >= 7 + f {
            -1
        } else {
            0
        }
    }

    /// Chooses a (letter, accidental) spelling for a pitch: diatonic notes
    /// follow the signature; other notes are sharpened in C and sharp keys
    /// and flattened in flat keys.
    fn spell(&self, pitch: u8) -> (usize, i8) {
        let p = pitch as i32;
        let pc = p.rem_euclid(12);
        for l in 0..7 {
            let a = self.accidental(l);
            let natural = p - a as i32;
            if (NATURAL_PC[l] + a as i32).rem_euclid(12) == pc && (0..=127).contains(&natural) {
                return (l, a);
            }
        }
        if let Some(l) = NATURAL_PC.iter().position(|&n| n == pc) {
            return (l, 0);
        }
        if self.fifths >= 0 {
            let l = NATURAL_PC.iter().position(|&n| n == pc - 1).unwrap_or(0);
            (l, 1)
        } else {
            let l = NATURAL_PC.iter().position(|&n| n == pc + 1).unwrap_or(0);
            (l, -1)
        }
    }
}

impl fmt::Display for AbcKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.tonic_name(), self.mode.suffix())
    }
}

/// One musical event in a voice body. Lengths are whole-note fractions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbcElement {
    Note { pitch: u8, length: Length, tie: bool },
    /// Simultaneous pitches; each carries its own tie flag.
    Chord { notes: Vec<(u8, bool)>, length: Length },
    Rest { length: Length },
    Bar,
}

impl AbcElement {
    pub fn length(&self) -> Length {
        match self {
            AbcElement::Note { length, .. }
            | AbcElement::Chord { length, .. }
            | AbcElement::Rest { length } => *length,
            AbcElement::Bar => Length::from_integer(0),
        }
    }

    fn scale(&mut self, factor: Length) {
        match self {
            AbcElement::Note { length, .. }
            | AbcElement::Chord { length, .. }
            | AbcElement::Rest { length } => *length *= factor,
            AbcElement::Bar => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbcVoice {
    pub id: String,
    pub name: Option<String>,
    pub program: Option<u8>,
    /// Raw body text of the voice, lines joined with `\n`.
    pub body: String,
    pub elements: Vec<AbcElement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AbcTempo {
    pub beat: Length,
    pub bpm: u32,
}

impl AbcTempo {
    /// Microseconds per quarter note.
    pub fn micros_per_quarter(&self) -> u32 {
        let quarters_per_beat = *self.beat.numer() as f64 * 4.0 / *self.beat.denom() as f64;
        round(60_000_000.0 / (self.bpm as f64 * quarters_per_beat)).max(1.0) as u32
    }
}

impl Default for AbcTempo {
    fn default() -> Self {
        AbcTempo {
            beat: Length::new(1, 4),
            bpm: 120,
        }
    }
}

/// A parsed tune. `text` is the source it was parsed from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbcScore {
    pub text: String,
    pub reference: u32,
    pub title: String,
    pub meter: (u8, u8),
    pub unit: Length,
    pub tempo: Option<AbcTempo>,
    pub key: AbcKey,
    pub voices: Vec<AbcVoice>,
}

/// Failure to parse or convert ABC; carries every diagnostic found.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct AbcError {
    pub diagnostics: Vec<Diagnostic>,
}

impl AbcError {
    fn single(d: Diagnostic) -> Self {
        AbcError {
            diagnostics: alloc::vec![d],
        }
    }
}

impl fmt::Display for AbcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.diagnostics.iter().find(|d| d.is_error()) {
            Some(d) => write!(f, "invalid ABC: {d}"),
            None => f.write_str("invalid ABC"),
        }
    }
}

impl AbcScore {
    /// Parses a tune, failing if any error-level diagnostic is produced.
    pub fn parse(text: &str) -> Result<AbcScore, AbcError> {
        let (score, diagnostics) = Self::parse_with_diagnostics(text);
        match score {
            Some(s) => Ok(s),
            None => Err(AbcError { diagnostics }),
        }
    }

    pub fn parse_with_diagnostics(text: &str) -> (Option<AbcScore>, Vec<Diagnostic>) {
        Parser::new(text).run()
    }

    pub fn time_signature(&self) -> TimeSignature {
        TimeSignature {
            numerator: self.meter.0,
            denominator: self.meter.1,
        }
    }
}

/// Checks ABC text. An empty result, or one holding only warnings, means
/// the text parses.
pub fn validate_abc(text: &str) -> Vec<Diagnostic> {
    AbcScore::parse_with_diagnostics(text).1
}

fn is_pow2_in_range(d: u64) -> bool {
    d.is_power_of_two() && d <= MAX_DEN
}

fn parse_fraction(s: &str) -> Option<(u64, u64)> {
    let (a, b) = s.trim().split_once('/')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn parse_meter(s: &str) -> Result<(u8, u8), String> {
    let s = s.trim();
    match s {
        "C" => return Ok((4, 4)),
        "C|" => return Ok((2, 2)),
        _ => {}
    }
    let (n, d) = parse_fraction(s).ok_or_else(|| format!("unreadable meter '{s}'"))?;
    if n == 0 || n > 64 || !d.is_power_of_two() || d > 64 {
        return Err(format!("unsupported meter '{s}'"));
    }
    Ok((n as u8, d as u8))
}

fn parse_unit(s: &str) -> Result<Length, String> {
    let (n, d) = parse_fraction(s).ok_or_else(|| format!("unreadable unit length '{}'", s.trim()))?;
    if n == 0 || n > 16 || !is_pow2_in_range(d) {
        return Err(format!("unsupported unit length '{}'", s.trim()));
    }
    Ok(Length::new(n, d))
}

fn strip_quoted(s: &str) -> String {
    let mut out = String::new();
    let mut quoted = false;
    for c in s.chars() {
        if c == '"' {
            quoted = !quoted;
        } else if !quoted {
            out.push(c);
        }
    }
    out
}

fn parse_tempo(s: &str) -> Result<(AbcTempo, bool), String> {
    let s = strip_quoted(s);
    let s = s.trim();
    let bad = || format!("unreadable tempo '{s}'");
    let bpm_ok = |b: u64| (1..=1000).contains(&b);
    match s.split_once('=') {
        Some((beat, bpm)) => {
            let (n, d) = parse_fraction(beat).ok_or_else(bad)?;
            let bpm: u64 = bpm.trim().parse().map_err(|_| bad())?;
            if n == 0 || n > 16 || !is_pow2_in_range(d) || !bpm_ok(bpm) {
                return Err(bad());
            }
            Ok((
                AbcTempo {
                    beat: Length::new(n, d),
                    bpm: bpm as u32,
                },
                false,
            ))
        }
        None => {
            let bpm: u64 = s.parse().map_err(|_| bad())?;
            if !bpm_ok(bpm) {
                return Err(bad());
            }
            Ok((
                AbcTempo {
                    beat: Length::new(1, 4),
                    bpm: bpm as u32,
                },
                true,
            ))
        }
    }
}

/// Splits `V:` field values into an id and optional `name="..."`.
fn parse_voice_field(s: &str) -> Option<(String, Option<String>)> {
    let s = s.trim();
    let id: String = s.chars().take_while(|c| !c.is_whitespace()).collect();
    if id.is_empty() {
        return None;
    }
    let name = s.find("name=").and_then(|i| {
        let rest = &s[i + 5..];
        if let Some(r) = rest.strip_prefix('"') {
            r.split_once('"').map(|(n, _)| n.to_string())
        } else {
            rest.split_whitespace().next().map(ToString::to_string)
        }
    });
    Some((id, name))
}

#[derive(Clone)]
struct VoiceState {
    key: AbcKey,
    unit: Length,
    meter: (u8, u8),
    bar_accidentals: BTreeMap<i32, i8>,
}

struct VoiceBuild {
    id: String,
    name: Option<String>,
    program: Option<u8>,
    body: Vec<String>,
    elements: Vec<AbcElement>,
    state: Option<VoiceState>,
    /// Broken-rhythm factor waiting for the next element.
    pending_factor: Option<Length>,
}

impl VoiceBuild {
    fn new(id: String, name: Option<String>) -> Self {
        VoiceBuild {
            id,
            name,
            program: None,
            body: Vec::new(),
            elements: Vec::new(),
            state: None,
            pending_factor: None,
        }
    }
}

struct Parser<'a> {
    text: &'a str,
    diags: Vec<Diagnostic>,
    reference: Option<u32>,
    title: Option<String>,
    meter: Option<(u8, u8)>,
    unit: Option<Length>,
    tempo: Option<AbcTempo>,
    key: Option<AbcKey>,
    voices: Vec<VoiceBuild>,
    current: Option<usize>,
    header_program: Option<u8>,
}

enum FieldContext {
    Header,
    Body,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            text,
            diags: Vec::new(),
            reference: None,
            title: None,
            meter: None,
            unit: None,
            tempo: None,
            key: None,
            voices: Vec::new(),
            current: None,
            header_program: None,
        }
    }

    fn error(&mut self, line: usize, col: usize, msg: impl Into<String>) {
        self.diags.push(Diagnostic::error(msg).at(line, col));
    }

    fn warn(&mut self, line: usize, col: usize, msg: impl Into<String>) {
        self.diags.push(Diagnostic::warning(msg).at(line, col));
    }

    fn run(mut self) -> (Option<AbcScore>, Vec<Diagnostic>) {
        if let Some(off) = self.text.bytes().position(|b| !b.is_ascii()) {
            let before = &self.text[..off];
            let line = before.matches('\n').count() + 1;
            let col = off - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
            self.diags.push(
                Diagnostic::error("ABC text must be pure ASCII")
                    .at(line, col)
                    .at_offset(off),
            );
            return (None, self.diags);
        }
        let mut in_header = true;
        let text = self.text;
        for (i, raw) in text.split('\n').enumerate() {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            let trimmed = line.trim_start();
            if let Some(directive) = trimmed.strip_prefix("%%") {
                self.directive(line_no, directive);
                continue;
            }
            if trimmed.starts_with('%') || trimmed.is_empty() {
                continue;
            }
            if is_field_line(line) {
                let (name, value) = (line.as_bytes()[0] as char, &line[2..]);
                if in_header {
                    if name == 'K' {
                        in_header = false;
                    }
                    self.field(line_no, name, value, FieldContext::Header);
                } else {
                    self.field(line_no, name, value, FieldContext::Body);
                }
                continue;
            }
            if in_header {
                if self.reference.is_none() {
                    self.error(line_no, 1, "tune must start with an X: header");
                    return (None, self.diags);
                }
                self.error(line_no, 1, "music before the K: header");
                in_header = false;
            }
            self.music_line(line_no, line);
        }
        self.finish()
    }

    fn directive(&mut self, line_no: usize, d: &str) {
        let mut words = d.split_whitespace();
        if words.next() == Some("MIDI") && words.next() == Some("program") {
            // `%%MIDI program [channel] N`: the last number is the program.
            let nums: Vec<&str> = words.collect();
            match nums.last().and_then(|n| n.parse::<u8>().ok()).filter(|&p| p < 128) {
                Some(p) => match self.current {
                    Some(v) => self.voices[v].program = Some(p),
                    None => self.header_program = Some(p),
                },
                None => self.error(line_no, 1, "MIDI program must be 0-127"),
            }
        } else {
            self.warn(line_no, 1, format!("directive '%%{}' ignored", d.trim()));
        }
    }

    fn header_state(&self) -> VoiceState {
        VoiceState {
            key: self.key.unwrap_or_default(),
            unit: self.unit.unwrap_or(Length::new(1, 8)),
            meter: self.meter.unwrap_or((4, 4)),
            bar_accidentals: BTreeMap::new(),
        }
    }

    fn voice_index(&mut self, id: &str, name: Option<String>) -> usize {
        match self.voices.iter().position(|v| v.id == id) {
            Some(i) => {
                if name.is_some() {
                    self.voices[i].name = name;
                }
                i
            }
            None => {
                self.voices.push(VoiceBuild::new(id.to_string(), name));
                self.voices.len() - 1
            }
        }
    }

    fn field(&mut self, line_no: usize, name: char, value: &str, ctx: FieldContext) {
        let col = 3;
        let in_body = matches!(ctx, FieldContext::Body);
        match name {
            'X' if !in_body => match value.trim().parse::<u32>() {
                Ok(x) if self.reference.is_none() => self.reference = Some(x),
                Ok(_) => self.warn(line_no, 1, "repeated X: header ignored"),
                Err(_) => self.error(line_no, col, "X: must be a non-negative integer"),
            },
            'T' => {
                if self.title.is_none() && !in_body {
                    self.title = Some(value.trim().to_string());
                }
            }
            'M' => match parse_meter(value) {
                Ok(m) => {
                    if in_body {
                        let v = self.ensure_current();
                        self.voice_state(v).meter = m;
                    } else {
                        self.meter = Some(m);
                    }
                }
                Err(e) => self.error(line_no, col, e),
            },
            'L' => match parse_unit(value) {
                Ok(u) => {
                    if in_body {
                        let v = self.ensure_current();
                        self.voice_state(v).unit = u;
                    } else {
                        self.unit = Some(u);
                    }
                }
                Err(e) => self.error(line_no, col, e),
            },
            'Q' => match parse_tempo(value) {
                Ok((t, bare)) => {
                    if bare {
                        self.warn(line_no, col, "bare Q: value read as quarter-note beats");
                    }
                    if in_body {
                        self.warn(line_no, 1, "tempo changes inside the body are ignored");
                    } else {
                        self.tempo = Some(t);
                    }
                }
                Err(e) => self.error(line_no, col, e),
            },
            'K' => match AbcKey::parse(value) {
                Some(k) => {
                    if in_body {
                        let v = self.ensure_current();
                        self.voice_state(v).key = k;
                    } else {
                        self.key = Some(k);
                        self.check_required(line_no);
                    }
                }
                None => self.error(line_no, col, format!("unreadable key '{}'", value.trim())),
            },
            'V' => match parse_voice_field(value) {
                Some((id, vname)) => {
                    let v = self.voice_index(&id, vname);
                    if in_body {
                        self.current = Some(v);
                    }
                }
                None => self.error(line_no, col, "V: needs a voice id"),
            },
            'w' | 'W' => self.warn(line_no, 1, "lyrics are ignored"),
            'A' | 'B' | 'C' | 'D' | 'F' | 'G' | 'H' | 'I' | 'N' | 'O' | 'R' | 'S' | 'Z' => {}
            _ => self.warn(line_no, 1, format!("unknown field '{name}:' ignored")),
        }
    }

    fn check_required(&mut self, line_no: usize) {
        if self.reference.is_none() {
            self.error(line_no, 1, "missing required X: header");
        }
        if self.meter.is_none() {
            self.error(line_no, 1, "missing required M: header");
        }
        if self.unit.is_none() {
            self.error(line_no, 1, "missing required L: header");
        }
    }

    fn ensure_current(&mut self) -> usize {
        if let Some(v) = self.current {
            return v;
        }
        let v = if self.voices.is_empty() {
            self.voice_index("1", None)
        } else {
            0
        };
        self.current = Some(v);
        v
    }

    fn voice_state(&mut self, v: usize) -> &mut VoiceState {
        if self.voices[v].state.is_none() {
            self.voices[v].state = Some(self.header_state());
        }
        self.voices[v].state.as_mut().unwrap_or_else(|| unreachable!())
    }

    fn music_line(&mut self, line_no: usize, line: &str) {
        let v = self.ensure_current();
        self.voice_state(v);
        self.voices[v].body.push(line.trim_end().to_string());
        let mut sc = Scanner {
            bytes: line.as_bytes(),
            pos: 0,
        };
        while let Some(c) = sc.peek() {
            let col = sc.pos + 1;
            match c {
                b' ' | b'\t' | b'`' | b'\\' | b'y' => sc.pos += 1,
                b'%' => break,
                b'|' | b':' => {
                    self.bar(v, line_no, &mut sc);
                }
                b'[' => match (sc.peek_at(1), sc.peek_at(2)) {
                    (Some(b'|'), _) => self.bar(v, line_no, &mut sc),
                    (Some(d), _) if d.is_ascii_digit() => {
                        sc.pos += 1;
                        while sc.peek().is_some_and(|d| d.is_ascii_digit() || d == b',' || d == b'-') {
                            sc.pos += 1;
                        }
                        self.warn(line_no, col, "repeat endings are played straight through");
                    }
                    (Some(l), Some(b':')) if l.is_ascii_alphabetic() => {
                        let end = line[sc.pos..].find(']').map(|i| sc.pos + i);
                        match end {
                            Some(e) => {
                                let inner = &line[sc.pos + 1..e];
                                let (name, value) = (inner.as_bytes()[0] as char, &inner[2..]);
                                self.field(line_no, name, value, FieldContext::Body);
                                // a V: inline field switches voice mid-line
                                let nv = self.ensure_current();
                                if nv != v {
                                    self.voice_state(nv);
                                    let rest = &line[e + 1..];
                                    self.music_line_tail(nv, line_no, rest, e + 1);
                                    return;
                                }
                                sc.pos = e + 1;
                            }
                            None => {
                                self.error(line_no, col, "unterminated inline field");
                                return;
                            }
                        }
                    }
                    _ => {
                        if let Some(el) = self.chord(v, line_no, &mut sc) {
                            self.push(v, line_no, col, el);
                        } else {
                            return;
                        }
                    }
                },
                b'^' | b'_' | b'=' | b'A'..=b'G' | b'a'..=b'g' => match self.note(v, line_no, &mut sc) {
                    Some((pitch, length, tie)) => self.push(v, line_no, col, AbcElement::Note { pitch, length, tie }),
                    None => return,
                },
                b'z' | b'x' => {
                    sc.pos += 1;
                    match self.length(v, line_no, &mut sc) {
                        Some(length) => self.push(v, line_no, col, AbcElement::Rest { length }),
                        None => return,
                    }
                }
                b'Z' | b'X' => {
                    sc.pos += 1;
                    let n = sc.number().unwrap_or(1);
                    if n == 0 || n > MAX_NUM {
                        self.error(line_no, col, "multi-measure rest count out of range");
                        return;
                    }
                    let (mn, md) = self.voice_state(v).meter;
                    let length = Length::new(n * mn as u64, md as u64);
                    self.push(v, line_no, col, AbcElement::Rest { length });
                }
                b'>' | b'<' => {
                    let mut n = 0u32;
                    while sc.peek() == Some(c) {
                        sc.pos += 1;
                        n += 1;
                    }
                    if n > 3 {
                        self.error(line_no, col, "broken rhythm deeper than three marks");
                        return;
                    }
                    let small = Length::new(1, 1u64 << n);
                    let big = Length::from_integer(2) - small;
                    let (prev, next) = if c == b'>' { (big, small) } else { (small, big) };
                    let vb = &mut self.voices[v];
                    match vb.elements.last_mut() {
                        Some(el) if !matches!(el, AbcElement::Bar) && vb.pending_factor.is_none() => {
                            el.scale(prev);
                            vb.pending_factor = Some(next);
                        }
                        _ => {
                            self.error(line_no, col, "broken rhythm must sit between two notes");
                            return;
                        }
                    }
                }
                b'"' => {
                    sc.pos += 1;
                    match line[sc.pos..].find('"') {
                        Some(i) => sc.pos += i + 1,
                        None => {
                            self.error(line_no, col, "unterminated annotation");
                            return;
                        }
                    }
                    self.warn(line_no, col, "chord symbols and annotations are ignored");
                }
                b'!' | b'+' => {
                    sc.pos += 1;
                    match line[sc.pos..].find(c as char) {
                        Some(i) => sc.pos += i + 1,
                        None => {
                            self.error(line_no, col, "unterminated decoration");
                            return;
                        }
                    }
                    self.warn(line_no, col, "decorations are ignored");
                }
                b'.' | b'~' | b'H' | b'L' | b'M' | b'O' | b'P' | b'S' | b'T' | b'u' | b'v' => {
                    sc.pos += 1;
                    self.warn(line_no, col, "decorations are ignored");
                }
                b'(' if sc.peek_at(1).is_some_and(|d| d.is_ascii_digit()) => {
                    self.error(line_no, col, "tuplets are not supported");
                    return;
                }
                b'(' | b')' => {
                    sc.pos += 1;
                    self.warn(line_no, col, "slurs are ignored");
                }
                b'{' => {
                    self.error(line_no, col, "grace notes are not supported");
                    return;
                }
                b'-' => {
                    self.error(line_no, col, "tie must follow a note");
                    return;
                }
                other => {
                    self.error(line_no, col, format!("unexpected character '{}'", other as char));
                    return;
                }
            }
        }
    }

    fn music_line_tail(&mut self, v: usize, line_no: usize, rest: &str, col_offset: usize) {
        let before = self.diags.len();
        self.music_line(line_no, rest);
        for d in &mut self.diags[before..] {
            if let Some(c) = d.column.as_mut() {
                *c += col_offset;
            }
        }
        let _ = v;
    }

    fn push(&mut self, v: usize, line_no: usize, col: usize, mut el: AbcElement) {
        let vb = &mut self.voices[v];
        if let Some(f) = vb.pending_factor.take() {
            el.scale(f);
        }
        if el.length() > Length::from_integer(MAX_NUM) {
            self.error(line_no, col, "note length out of range");
            return;
        }
        vb.elements.push(el);
    }

    fn bar(&mut self, v: usize, line_no: usize, sc: &mut Scanner<'_>) {
        let col = sc.pos + 1;
        let start = sc.pos;
        if sc.peek() == Some(b'[') {
            sc.pos += 1;
        }
        while sc.peek().is_some_and(|c| matches!(c, b'|' | b':' | b']')) {
            sc.pos += 1;
        }
        let token = &sc.bytes[start..sc.pos];
        if !token.contains(&b'|') && token != b"::" {
            self.error(line_no, col, "stray ':' outside a bar line");
            return;
        }
        if sc.peek().is_some_and(|d| d.is_ascii_digit()) {
            while sc.peek().is_some_and(|d| d.is_ascii_digit()) {
                sc.pos += 1;
            }
            self.warn(line_no, col, "repeat endings are played straight through");
        }
        if token.contains(&b':') {
            self.warn(line_no, col, "repeats are played once");
        }
        let vb = &mut self.voices[v];
        if vb.pending_factor.is_some() {
            vb.pending_factor = None;
            self.error(line_no, col, "broken rhythm must sit between two notes");
        }
        self.voice_state(v).bar_accidentals.clear();
        self.voices[v].elements.push(AbcElement::Bar);
    }

    /// Reads an optional length suffix and returns it in whole notes.
    fn length(&mut self, v: usize, line_no: usize, sc: &mut Scanner<'_>) -> Option<Length> {
        let col = sc.pos + 1;
        let num = match sc.number() {
            Some(n) => n,
            None if sc.peek().is_some_and(|c| c.is_ascii_digit()) => {
                self.error(line_no, col, "length numerator too large");
                return None;
            }
            None => 1,
        };
        let mut den = 1u64;
        if sc.peek() == Some(b'/') {
            sc.pos += 1;
            if sc.peek().is_some_and(|c| c.is_ascii_digit()) {
                den = match sc.number() {
                    Some(d) => d,
                    None => {
                        self.error(line_no, col, "length denominator too large");
                        return None;
                    }
                };
            } else {
                den = 2;
                while sc.peek() == Some(b'/') && den < MAX_DEN {
                    sc.pos += 1;
                    den *= 2;
                }
            }
        }
        if num == 0 || num > MAX_NUM {
            self.error(line_no, col, "note length out of range");
            return None;
        }
        if !is_pow2_in_range(den) {
            self.error(line_no, col, "length denominators must be powers of two up to 1024");
            return None;
        }
        let unit = self.voice_state(v).unit;
        Some(unit * Length::new(num, den))
    }

    fn pitch(&mut self, v: usize, line_no: usize, sc: &mut Scanner<'_>) -> Option<u8> {
        let col = sc.pos + 1;
        let mut explicit: Option<i8> = None;
        match sc.peek() {
            Some(b'^') => {
                sc.pos += 1;
                explicit = Some(if sc.peek() == Some(b'^') {
                    sc.pos += 1;
                    2
                } else {
                    1
                });
            }
            Some(b'_') => {
                sc.pos += 1;
                explicit = Some(if sc.peek() == Some(b'_') {
                    sc.pos += 1;
                    -2
                } else {
                    -1
                });
            }
            Some(b'=') => {
                sc.pos += 1;
                explicit = Some(0);
            }
            _ => {}
        }
        let c = match sc.peek() {
            Some(c @ (b'A'..=b'G' | b'a'..=b'g')) => c,
            _ => {
                self.error(line_no, col, "accidental must be followed by a note letter");
                return None;
            }
        };
        sc.pos += 1;
        let upper = c.to_ascii_uppercase() as char;
        let li = LETTERS.iter().position(|&l| l == upper).unwrap_or(0);
        let mut natural = 60 + NATURAL_PC[li] + if c.is_ascii_lowercase() { 12 } else { 0 };
        while let Some(m) = sc.peek() {
            match m {
                b',' => natural -= 12,
                b'\'' => natural += 12,
                _ => break,
            }
            sc.pos += 1;
        }
        let st = self.voice_state(v);
        let acc = match explicit {
            Some(a) => {
                st.bar_accidentals.insert(natural, a);
                a
            }
            None => st
                .bar_accidentals
                .get(&natural)
                .copied()
                .unwrap_or_else(|| st.key.accidental(li)),
        };
        let pitch = natural + acc as i32;
        if !(0..=127).contains(&pitch) {
            self.error(line_no, col, "pitch outside the MIDI range");
            return None;
        }
        Some(pitch as u8)
    }

    fn note(&mut self, v: usize, line_no: usize, sc: &mut Scanner<'_>) -> Option<(u8, Length, bool)> {
        let pitch = self.pitch(v, line_no, sc)?;
        let length = self.length(v, line_no, sc)?;
        let tie = sc.eat(b'-');
        Some((pitch, length, tie))
    }

    fn chord(&mut self, v: usize, line_no: usize, sc: &mut Scanner<'_>) -> Option<AbcElement> {
        let col = sc.pos + 1;
        sc.pos += 1;
        let mut notes: Vec<(u8, bool)> = Vec::new();
        let mut first_len: Option<Length> = None;
        loop {
            match sc.peek() {
                Some(b']') => {
                    sc.pos += 1;
                    break;
                }
                Some(b'^' | b'_' | b'=' | b'A'..=b'G' | b'a'..=b'g') => {
                    let (p, len, tie) = self.note(v, line_no, sc)?;
                    match first_len {
                        None => first_len = Some(len),
                        Some(l) if l != len => {
                            self.warn(line_no, col, "chord notes of unequal length take the first length")
                        }
                        _ => {}
                    }
                    if let Some(existing) = notes.iter_mut().find(|n| n.0 == p) {
                        existing.1 |= tie;
                        self.warn(line_no, col, "repeated pitch in chord merged");
                    } else {
                        notes.push((p, tie));
                    }
                }
                Some(b' ') => sc.pos += 1,
                _ => {
                    self.error(line_no, col, "unterminated or malformed chord");
                    return None;
                }
            }
        }
        let Some(first) = first_len else {
            self.error(line_no, col, "empty chord");
            return None;
        };
        let unit = self.voice_state(v).unit;
        let outer = self.length(v, line_no, sc)? / unit;
        if sc.eat(b'-') {
            for n in &mut notes {
                n.1 = true;
            }
        }
        let length = first * outer;
        Some(if notes.len() == 1 {
            AbcElement::Note {
                pitch: notes[0].0,
                length,
                tie: notes[0].1,
            }
        } else {
            AbcElement::Chord { notes, length }
        })
    }

    fn finish(mut self) -> (Option<AbcScore>, Vec<Diagnostic>) {
        if self.key.is_none() {
            if self.reference.is_none() {
                self.error(1, 1, "missing required X: header");
            }
            self.error(1, 1, "missing required K: header");
        }
        if self.voices.is_empty() {
            self.error(1, 1, "tune has no voice body");
        }
        for vb in &self.voices {
            if vb.pending_factor.is_some() {
                self.diags
                    .push(Diagnostic::error(format!("voice {}: broken rhythm at end of body", vb.id)));
            }
        }
        if self.diags.iter().any(Diagnostic::is_error) {
            return (None, self.diags);
        }
        let header_program = self.header_program;
        let voices = self
            .voices
            .into_iter()
            .map(|vb| AbcVoice {
                id: vb.id,
                name: vb.name,
                program: vb.program.or(header_program),
                body: vb.body.join("\n"),
                elements: vb.elements,
            })
            .collect();
        let score = AbcScore {
            text: self.text.to_string(),
            reference: self.reference.unwrap_or(1),
            title: self.title.unwrap_or_default(),
            meter: self.meter.unwrap_or((4, 4)),
            unit: self.unit.unwrap_or(Length::new(1, 8)),
            tempo: self.tempo,
            key: self.key.unwrap_or_default(),
            voices,
        };
        (Some(score), self.diags)
    }
}

fn is_field_line(line: &str) -> bool {
    let b = line.as_bytes();
    b.len() >= 2 && b[0].is_ascii_alphabetic() && b[1] == b':' && !(b[0] == b'|')
}

struct Scanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Scanner<'_> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn peek_at(&self, k: usize) -> Option<u8> {
        self.bytes.get(self.pos + k).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    /// Reads a run of digits. Returns `None` (leaving the cursor on the
    /// digits) if there are none or the value exceeds `MAX_NUM`.
    fn number(&mut self) -> Option<u64> {
        let start = self.pos;
        let mut v: u64 = 0;
        while let Some(d) = self.peek().filter(u8::is_ascii_digit) {
            v = v.saturating_mul(10).saturating_add((d - b'0') as u64);
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        if v > MAX_NUM {
            self.pos = start;
            return None;
        }
        Some(v)
    }
}

/// Options for [`midi_to_abc`].
#[derive(Debug, Clone, PartialEq)]
pub struct AbcOptions {
    /// Quantization grid as a whole-note fraction: 1/4, 1/8, 1/16 or 1/32.
    pub quantum: Length,
    /// Value written to `L:`.
    pub unit: Length,
    pub key: AbcKey,
    pub title: String,
    pub reference: u32,
}

impl Default for AbcOptions {
    fn default() -> Self {
        AbcOptions {
            quantum: Length::new(1, 16),
            unit: Length::new(1, 8),
            key: AbcKey::default(),
            title: "Untitled".to_string(),
            reference: 1,
        }
    }
}

/// Result of [`midi_to_abc`]: the score plus lossy-conversion warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct AbcConversion {
    pub score: AbcScore,
    pub warnings: Vec<Diagnostic>,
}

fn ascii_clean(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii() && !c.is_ascii_control() && c != '"' { c } else { '?' })
        .collect()
}

fn length_suffix(rel: Length) -> String {
    let (n, d) = (*rel.numer(), *rel.denom());
    match (n, d) {
        (1, 1) => String::new(),
        (n, 1) => format!("{n}"),
        (1, 2) => "/".to_string(),
        (1, d) => format!("/{d}"),
        (n, d) => format!("{n}/{d}"),
    }
}

/// Tracks bar-local accidentals while writing so that every note reads
/// back to the intended pitch.
struct Speller {
    key: AbcKey,
    bar: BTreeMap<i32, i8>,
}

impl Speller {
    fn pitch_text(&mut self, pitch: u8) -> String {
        let (li, acc) = self.key.spell(pitch);
        let natural = pitch as i32 - acc as i32;
        let effective = self
            .bar
            .get(&natural)
            .copied()
            .unwrap_or_else(|| self.key.accidental(li));
        let mut s = String::new();
        if effective != acc {
            s.push_str(match acc {
                2 => "^^",
                1 => "^",
                0 => "=",
                -1 => "_",
                _ => "__",
            });
            self.bar.insert(natural, acc);
        }
        let octave = natural.div_euclid(12);
        if octave >= 6 {
            s.push(LETTERS[li].to_ascii_lowercase());
            for _ in 6..octave {
                s.push('\'');
            }
        } else {
            s.push(LETTERS[li]);
            for _ in octave..5 {
                s.push(',');
            }
        }
        s
    }
}

/// A quantized voice event: start and length in whole notes.
struct Event {
    start: Length,
    length: Length,
    pitches: Vec<u8>,
}

fn quantize_track(
    song: &MidiSong,
    tl: &Timeline,
    track: &Track,
    quantum: Length,
    warnings: &mut Vec<Diagnostic>,
) -> Vec<Event> {
    let tpq = song.ticks_per_quarter as f64;
    let q_whole = *quantum.numer() as f64 / *quantum.denom() as f64;
    let to_quanta = |seconds: f64| -> f64 { tl.tick(seconds) as f64 / (4.0 * tpq) / q_whole };
    let mut raw: Vec<(u64, u64, u8)> = track
        .notes
        .iter()
        .map(|n| {
            let on = round(to_quanta(n.onset)).max(0.0) as u64;
            let dur_exact = to_quanta(n.offset()) - to_quanta(n.onset);
            (on, super::quanta_at_least_one(dur_exact, 1.0), n.pitch)
        })
        .collect();
    raw.sort_by_key(|r| (r.0, r.2));

    let mut groups: Vec<(u64, u64, Vec<u8>)> = Vec::new();
    for (on, dur, pitch) in raw {
        match groups.last_mut() {
            Some(g) if g.0 == on => {
                if g.1 != dur {
                    warnings.push(Diagnostic::warning(format!(
                        "track {}: chord at quantum {on} has unequal durations; using the longest",
                        track.index
                    )));
                    g.1 = g.1.max(dur);
                }
                if g.2.contains(&pitch) {
                    warnings.push(Diagnostic::warning(format!(
                        "track {}: duplicate pitch {pitch} at quantum {on} merged",
                        track.index
                    )));
                } else {
                    g.2.push(pitch);
                }
            }
            _ => groups.push((on, dur, alloc::vec![pitch])),
        }
    }
    for i in 1..groups.len() {
        let next_on = groups[i].0;
        let prev = &mut groups[i - 1];
        if prev.0 + prev.1 > next_on {
            warnings.push(Diagnostic::warning(format!(
                "track {}: overlapping note at quantum {} truncated by a later onset",
                track.index, prev.0
            )));
            prev.1 = next_on - prev.0;
        }
    }
    groups
        .into_iter()
        .map(|(on, dur, pitches)| Event {
            start: quantum * on,
            length: quantum * dur,
            pitches,
        })
        .collect()
}

struct BodyWriter {
    unit: Length,
    measure: Length,
    speller: Speller,
    pos: Length,
    bars_on_line: usize,
    line: String,
    lines: Vec<String>,
}

impl BodyWriter {
    fn token(&mut self, t: &str) {
        if !self.line.is_empty() && !self.line.ends_with(' ') {
            self.line.push(' ');
        }
        self.line.push_str(t);
    }

    /// Writes one piece, which never crosses a barline.
    fn piece(&mut self, pitches: &[u8], length: Length, tie: bool) {
        let suffix = length_suffix(length / self.unit);
        let mut t = String::new();
        match pitches {
            [] => t.push('z'),
            [p] => t.push_str(&self.speller.pitch_text(*p)),
            ps => {
                t.push('[');
                for p in ps {
                    t.push_str(&self.speller.pitch_text(*p));
                }
                t.push(']');
            }
        }
        t.push_str(&suffix);
        if tie {
            t.push('-');
        }
        self.token(&t);
    }

    fn event(&mut self, pitches: &[u8], mut length: Length) {
        while length > Length::from_integer(0) {
            let bar_end = self.next_bar();
            let room = bar_end - self.pos;
            let piece = if length < room { length } else { room };
            length -= piece;
            self.piece(pitches, piece, !pitches.is_empty() && length > Length::from_integer(0));
            self.pos += piece;
            if self.pos == bar_end {
                self.barline();
            }
        }
    }

    fn next_bar(&self) -> Length {
        let k = (self.pos / self.measure).floor() + Length::from_integer(1);
        k * self.measure
    }

    fn barline(&mut self) {
        self.token("|");
        self.speller.bar.clear();
        self.bars_on_line += 1;
        if self.bars_on_line == BARS_PER_LINE {
            self.lines.push(core::mem::take(&mut self.line));
            self.bars_on_line = 0;
        }
    }

    fn finish(mut self) -> Vec<String> {
        let ends_on_bar = self.line.ends_with('|') || (self.line.is_empty() && !self.lines.is_empty());
        if ends_on_bar {
            if self.line.is_empty() {
                self.line = self.lines.pop().unwrap_or_default();
            }
            self.line.push(']');
        }
        if !self.line.is_empty() {
            self.lines.push(self.line);
        }
        self.lines
    }
}

/// Serializes a song as ABC: one voice per track, durations quantized to
/// `opts.quantum`, barlines from the song's time signature. Tempo changes
/// are flattened to the initial tempo.
pub fn midi_to_abc(song: &MidiSong, opts: &AbcOptions) -> Result<AbcConversion, AbcError> {
    if song.tracks.is_empty() {
        return Err(AbcError::single(Diagnostic::error("song has no tracks")));
    }
    let q = opts.quantum;
    if *q.numer() != 1 || ![4, 8, 16, 32].contains(q.denom()) {
        return Err(AbcError::single(Diagnostic::error("quantum must be 1/4, 1/8, 1/16 or 1/32")));
    }
    if *opts.unit.numer() == 0 || !is_pow2_in_range(*opts.unit.denom()) {
        return Err(AbcError::single(Diagnostic::error("unit length must have a power-of-two denominator")));
    }
    let ts = song.time_signature;
    if ts.numerator == 0 || ts.numerator > 64 || !ts.denominator.is_power_of_two() || ts.denominator > 64 {
        return Err(AbcError::single(Diagnostic::error(format!(
            "time signature {}/{} cannot be written as ABC",
            ts.numerator, ts.denominator
        ))));
    }
    let mut warnings = Vec::new();
    let distinct_tempos = song
        .tempo_map
        .windows(2)
        .any(|w| w[0].micros_per_quarter != w[1].micros_per_quarter);
    if distinct_tempos {
        warnings.push(Diagnostic::warning("tempo changes flattened to the initial tempo"));
    }
    let us = song.initial_tempo().max(1) as f64;
    let bpm_exact = 60_000_000.0 / us;
    let bpm = round(bpm_exact).clamp(1.0, 1000.0) as u32;
    if bpm as f64 != bpm_exact {
        warnings.push(Diagnostic::warning(format!(
            "tempo {bpm_exact:.3} BPM rounded to {bpm}"
        )));
    }

    let tl = Timeline::new(&song.tempo_map, song.ticks_per_quarter);
    let measure = Length::new(ts.numerator as u64, ts.denominator as u64);
    let events: Vec<Vec<Event>> = song
        .tracks
        .iter()
        .map(|t| quantize_track(song, &tl, t, q, &mut warnings))
        .collect();
    let song_end = events
        .iter()
        .filter_map(|e| e.last().map(|l| l.start + l.length))
        .max()
        .unwrap_or(measure);

    let mut text = String::new();
    let _ = writeln!(text, "X:{}", opts.reference);
    let _ = writeln!(text, "T:{}", ascii_clean(&opts.title));
    let _ = writeln!(text, "M:{}/{}", ts.numerator, ts.denominator);
    let _ = writeln!(text, "L:{}/{}", opts.unit.numer(), opts.unit.denom());
    let _ = writeln!(text, "Q:1/4={bpm}");
    let _ = writeln!(text, "K:{}", opts.key);
    for (track, evs) in song.tracks.iter().zip(&events) {
        let _ = write!(text, "V:{}", track.index + 1);
        if !track.name.is_empty() {
            let _ = write!(text, " name=\"{}\"", ascii_clean(&track.name));
        }
        text.push('\n');
        let _ = writeln!(text, "%%MIDI program {}", track.program & 0x7f);
        let mut w = BodyWriter {
            unit: opts.unit,
            measure,
            speller: Speller {
                key: opts.key,
                bar: BTreeMap::new(),
            },
            pos: Length::from_integer(0),
            bars_on_line: 0,
            line: String::new(),
            lines: Vec::new(),
        };
        for e in evs {
            if e.start > w.pos {
                let gap = e.start - w.pos;
                w.event(&[], gap);
            }
            w.event(&e.pitches, e.length);
        }
        if evs.is_empty() {
            // an empty track still needs a body; rest through the song
            let bars = (song_end / measure).ceil().max(Length::from_integer(1));
            w.event(&[], bars * measure);
        }
        for line in w.finish() {
            text.push_str(&line);
            text.push('\n');
        }
    }
    let score = AbcScore::parse(&text)?;
    Ok(AbcConversion { score, warnings })
}

fn whole_to_ticks(len: Length) -> u64 {
    let ticks_per_whole = 4 * OUTPUT_TPQ as u128;
    let n = *len.numer() as u128 * ticks_per_whole;
    let d = *len.denom() as u128;
    ((n + d / 2) / d).min(u64::MAX as u128) as u64
}

/// Converts a parsed score to a song at 480 ticks per quarter. Each voice
/// becomes a track; tied notes merge; the channel skips percussion.
pub fn abc_to_midi(score: &AbcScore) -> Result<MidiSong, AbcError> {
    if score.voices.is_empty() {
        return Err(AbcError::single(Diagnostic::error("score has no voices")));
    }
    let tempo = score.tempo.unwrap_or_default();
    let tempo_map = alloc::vec![TempoChange {
        tick: 0,
        micros_per_quarter: tempo.micros_per_quarter(),
    }];
    let tl = Timeline::new(&tempo_map, OUTPUT_TPQ);
    let mut tracks = Vec::with_capacity(score.voices.len());
    for (i, voice) in score.voices.iter().enumerate() {
        let mut channel = i as u8 % 15;
        if channel >= PERCUSSION_CHANNEL {
            channel += 1;
        }
        let mut pos = Length::from_integer(0);
        // pitch -> (start, end) of a note whose tie is still open
        let mut open: BTreeMap<u8, (Length, Length)> = BTreeMap::new();
        let mut spans: Vec<(Length, Length, u8)> = Vec::new();
        for el in &voice.elements {
            let len = el.length();
            let sounding: Vec<(u8, bool)> = match el {
                AbcElement::Note { pitch, tie, .. } => alloc::vec![(*pitch, *tie)],
                AbcElement::Chord { notes, .. } => notes.clone(),
                AbcElement::Rest { .. } => Vec::new(),
                AbcElement::Bar => continue,
            };
            // ties only reach the next sounding element
            let carried = core::mem::take(&mut open);
            for (&p, &(s, e)) in &carried {
                if !sounding.iter().any(|n| n.0 == p) {
                    spans.push((s, e, p));
                }
            }
            for (p, tie) in sounding {
                let start = match carried.get(&p) {
                    Some(&(s, e)) if e == pos => s,
                    Some(&(s, e)) => {
                        spans.push((s, e, p));
                        pos
                    }
                    None => pos,
                };
                if tie {
                    open.insert(p, (start, pos + len));
                } else {
                    spans.push((start, pos + len, p));
                }
            }
            pos += len;
        }
        for (p, (s, e)) in open {
            spans.push((s, e, p));
        }
        let notes = spans
            .into_iter()
            .filter_map(|(s, e, p)| {
                let (on, off) = (whole_to_ticks(s), whole_to_ticks(e));
                (off > on).then(|| {
                    let onset = tl.seconds(on);
                    MidiNote::new(onset, tl.seconds(off) - onset, p, DEFAULT_VELOCITY)
                })
            })
            .collect();
        let mut track = Track::new(i, voice.program.unwrap_or(0), channel, notes);
        track.name = voice.name.clone().unwrap_or_else(|| voice.id.clone());
        tracks.push(track);
    }
    Ok(MidiSong::with_timing(
        tracks,
        OUTPUT_TPQ,
        tempo_map,
        score.time_signature(),
    ))
}
