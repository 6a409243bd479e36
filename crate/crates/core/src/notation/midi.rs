//! Standard MIDI File reader (formats 0 and 1) and format-1 writer.

use alloc::collections::BTreeMap;
use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use super::{
    MidiNote, MidiSong, SongError, TempoChange, TimeSignature, Timeline, Track,
    DEFAULT_MICROS_PER_QUARTER,
};
use crate::diag::Diagnostic;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MidiErrorKind {
    BadHeader,
    UnsupportedFormat(u16),
    SmpteDivision,
    Truncated,
    RunningStatus,
    BadDataByte(u8),
    BadStatus(u8),
    BadVarLen,
    ZeroTempo,
    NoTracks,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("midi parse error at byte {offset}: {kind:?}")]
pub struct MidiError {
    pub offset: usize,
    pub kind: MidiErrorKind,
}

impl MidiError {
    fn new(offset: usize, kind: MidiErrorKind) -> Self {
        MidiError { offset, kind }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WriteError {
    #[error("invalid song: {0}")]
    Invalid(#[from] SongError),
    #[error("track {track}: tick {tick} is beyond the representable range")]
    TickOutOfRange { track: usize, tick: u64 },
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    /// absolute offset of `data[0]` in the file, for error reporting
    base: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, kind: MidiErrorKind) -> MidiError {
        MidiError::new(self.base + self.pos, kind)
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| self.err(MidiErrorKind::Truncated))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| self.err(MidiErrorKind::Truncated))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn var_len(&mut self) -> Result<u32, MidiError> {
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(self.err(MidiErrorKind::BadVarLen))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.data.len()
    }
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

#[derive(Debug, Clone, Copy)]
enum Event {
    On { channel: u8, pitch: u8, velocity: u8 },
    Off { channel: u8, pitch: u8 },
    Program { channel: u8, program: u8 },
    Other { channel: u8 },
}

#[derive(Default)]
struct RawTrack {
    name: String,
    events: Vec<(u64, Event)>,
    end_tick: u64,
}

#[derive(Default)]
struct Globals {
    tempos: Vec<(u64, u32)>,
    time_signature: Option<TimeSignature>,
}

fn parse_track(
    data: &[u8],
    base: usize,
    globals: &mut Globals,
    diags: &mut Vec<Diagnostic>,
) -> Result<RawTrack, MidiError> {
    let mut cur = Cursor { data, pos: 0, base };
    let mut track = RawTrack::default();
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    while !cur.at_end() {
        let delta = cur.var_len()?;
        tick = tick.saturating_add(delta as u64);
        let first = cur.u8()?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            match running {
                Some(s) => {
                    cur.pos -= 1;
                    s
                }
                None => return Err(MidiError::new(base + cur.pos - 1, MidiErrorKind::RunningStatus)),
            }
        };
        match status {
            0x80..=0xef => {
                running = Some(status);
                let channel = status & 0x0f;
                let n = if matches!(status & 0xf0, 0xc0 | 0xd0) { 1 } else { 2 };
                let at = cur.pos;
                let bytes = cur.take(n)?;
                if let Some(&bad) = bytes.iter().find(|b| **b & 0x80 != 0) {
                    return Err(MidiError::new(base + at, MidiErrorKind::BadDataByte(bad)));
                }
                let ev = match status & 0xf0 {
                    0x90 if bytes[1] > 0 => Event::On {
                        channel,
                        pitch: bytes[0],
                        velocity: bytes[1],
                    },
                    0x90 | 0x80 => Event::Off {
                        channel,
                        pitch: bytes[0],
                    },
                    0xc0 => Event::Program {
                        channel,
                        program: bytes[0],
                    },
                    _ => Event::Other { channel },
                };
                track.events.push((tick, ev));
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = cur.var_len()?;
                // sysex payload kept opaque
                cur.take(len as usize)?;
            }
            0xff => {
                running = None;
                let kind = cur.u8()?;
                let len = cur.var_len()?;
                let at = cur.pos;
                let payload = cur.take(len as usize)?;
                match kind {
                    0x2f => {
                        track.end_tick = tick;
                        return Ok(track);
                    }
                    0x03 => {
                        track.name = payload
                            .iter()
                            .map(|&b| if b.is_ascii() { b as char } else { '?' })
                            .collect();
                    }
                    0x51 if payload.len() >= 3 => {
                        let us = u32::from_be_bytes([0, payload[0], payload[1], payload[2]]);
                        if us == 0 {
                            return Err(MidiError::new(base + at, MidiErrorKind::ZeroTempo));
                        }
                        globals.tempos.push((tick, us));
                    }
                    0x58 if payload.len() >= 2 => {
                        if payload[1] > 7 || payload[0] == 0 {
                            diags.push(
                                Diagnostic::warning("ignored invalid time signature")
                                    .at_offset(base + at),
                            );
                        } else if globals.time_signature.is_none() {
                            globals.time_signature = Some(TimeSignature {
                                numerator: payload[0],
                                denominator: 1u8 << payload[1],
                            });
                        }
                    }
                    _ => {}
                }
            }
            other => return Err(MidiError::new(base + cur.pos - 1, MidiErrorKind::BadStatus(other))),
        }
        track.end_tick = tick;
    }
    Ok(track)
}

/// Parses a Standard MIDI File, discarding diagnostics.
pub fn parse_midi(bytes: &[u8]) -> Result<MidiSong, MidiError> {
    parse_midi_with_diagnostics(bytes).map(|(song, _)| song)
}

/// Parses a Standard MIDI File. Recoverable oddities (orphan note-ons,
/// stray note-offs, zero-length notes) become warnings.
pub fn parse_midi_with_diagnostics(bytes: &[u8]) -> Result<(MidiSong, Vec<Diagnostic>), MidiError> {
    let mut diags = Vec::new();
    if bytes.len() < 14 || &bytes[0..4] != b"MThd" {
        return Err(MidiError::new(0, MidiErrorKind::BadHeader));
    }
    let header_len = be_u32(&bytes[4..8]) as usize;
    if header_len < 6 {
        return Err(MidiError::new(4, MidiErrorKind::BadHeader));
    }
    let format = be_u16(&bytes[8..10]);
    if format > 1 {
        return Err(MidiError::new(8, MidiErrorKind::UnsupportedFormat(format)));
    }
    let division = be_u16(&bytes[12..14]);
    if division & 0x8000 != 0 {
        return Err(MidiError::new(12, MidiErrorKind::SmpteDivision));
    }
    if division == 0 {
        return Err(MidiError::new(12, MidiErrorKind::BadHeader));
    }
    let mut pos = 8usize
        .checked_add(header_len)
        .filter(|&p| p <= bytes.len())
        .ok_or(MidiError::new(4, MidiErrorKind::Truncated))?;

    let mut globals = Globals::default();
    let mut raw_tracks = Vec::new();
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(MidiError::new(pos, MidiErrorKind::Truncated));
        }
        let kind = &bytes[pos..pos + 4];
        let len = be_u32(&bytes[pos + 4..pos + 8]) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or(MidiError::new(pos + 4, MidiErrorKind::Truncated))?;
        if kind == b"MTrk" {
            raw_tracks.push(parse_track(&bytes[start..end], start, &mut globals, &mut diags)?);
        }
        pos = end;
    }
    if raw_tracks.is_empty() {
        return Err(MidiError::new(pos, MidiErrorKind::NoTracks));
    }

    let mut tempos = globals.tempos;
    tempos.sort_by_key(|t| t.0);
    let mut tempo_map: Vec<TempoChange> = Vec::new();
    for (tick, us) in tempos {
        let tick = u32::try_from(tick).unwrap_or(u32::MAX);
        match tempo_map.last_mut() {
            Some(last) if last.tick == tick => last.micros_per_quarter = us,
            _ => tempo_map.push(TempoChange {
                tick,
                micros_per_quarter: us,
            }),
        }
    }
    if tempo_map.first().map(|t| t.tick != 0).unwrap_or(true) {
        tempo_map.insert(
            0,
            TempoChange {
                tick: 0,
                micros_per_quarter: DEFAULT_MICROS_PER_QUARTER,
            },
        );
    }
    let timeline = Timeline::new(&tempo_map, division);

    let groups: Vec<RawTrack> = if format == 0 {
        split_by_channel(raw_tracks)
    } else {
        raw_tracks
    };
    let tracks = groups
        .iter()
        .enumerate()
        .map(|(i, raw)| build_track(i, raw, &timeline, &mut diags))
        .collect();
    let song = MidiSong::with_timing(
        tracks,
        division,
        tempo_map,
        globals.time_signature.unwrap_or_default(),
    );
    Ok((song, diags))
}

fn split_by_channel(raw: Vec<RawTrack>) -> Vec<RawTrack> {
    let mut out: Vec<RawTrack> = Vec::new();
    for t in raw {
        let mut order: Vec<u8> = Vec::new();
        let mut by_channel: BTreeMap<u8, RawTrack> = BTreeMap::new();
        for &(tick, ev) in &t.events {
            let ch = match ev {
                Event::On { channel, .. }
                | Event::Off { channel, .. }
                | Event::Program { channel, .. }
                | Event::Other { channel } => channel,
            };
            let entry = by_channel.entry(ch).or_insert_with(|| {
                order.push(ch);
                RawTrack {
                    name: t.name.clone(),
                    events: Vec::new(),
                    end_tick: t.end_tick,
                }
            });
            entry.events.push((tick, ev));
        }
        let has_notes = |r: &RawTrack| r.events.iter().any(|e| matches!(e.1, Event::On { .. }));
        let mut any = false;
        for ch in order {
            let r = by_channel.remove(&ch).unwrap_or_default();
            if has_notes(&r) {
                any = true;
                out.push(r);
            }
        }
        if !any {
            out.push(RawTrack {
                name: t.name,
                events: t.events,
                end_tick: t.end_tick,
            });
        }
    }
    out
}

fn build_track(index: usize, raw: &RawTrack, tl: &Timeline, diags: &mut Vec<Diagnostic>) -> Track {
    let mut channel = None;
    let mut program = None;
    let mut open: BTreeMap<(u8, u8), VecDeque<(u64, u8)>> = BTreeMap::new();
    let mut notes = Vec::new();
    let close = |on: u64, off: u64, pitch: u8, vel: u8, notes: &mut Vec<MidiNote>, diags: &mut Vec<Diagnostic>| {
        if off <= on {
            diags.push(Diagnostic::warning(format!(
                "track {index}: zero-length note {pitch} at tick {on} dropped"
            )));
            return;
        }
        let onset = tl.seconds(on);
        notes.push(MidiNote {
            onset,
            duration: tl.seconds(off) - onset,
            pitch,
            velocity: vel,
        });
    };
    for &(tick, ev) in &raw.events {
        match ev {
            Event::On {
                channel: ch,
                pitch,
                velocity,
            } => {
                channel.get_or_insert(ch);
                open.entry((ch, pitch)).or_default().push_back((tick, velocity));
            }
            Event::Off { channel: ch, pitch } => {
                channel.get_or_insert(ch);
                match open.get_mut(&(ch, pitch)).and_then(VecDeque::pop_front) {
                    Some((on, vel)) => close(on, tick, pitch, vel, &mut notes, diags),
                    None => diags.push(Diagnostic::warning(format!(
                        "track {index}: note-off for {pitch} at tick {tick} without note-on"
                    ))),
                }
            }
            Event::Program { channel: ch, program: p } => {
                channel.get_or_insert(ch);
                program.get_or_insert(p);
            }
            Event::Other { channel: ch } => {
                channel.get_or_insert(ch);
            }
        }
    }
    for ((_, pitch), pending) in open {
        for (on, vel) in pending {
            diags.push(Diagnostic::warning(format!(
                "track {index}: note {pitch} from tick {on} closed at end of track"
            )));
            close(on, raw.end_tick, pitch, vel, &mut notes, diags);
        }
    }
    let mut t = Track::new(index, program.unwrap_or(0), channel.unwrap_or(0), notes);
    t.name = raw.name.clone();
    t
}

fn push_var_len(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let more = if i > 0 { 0x80 } else { 0 };
        out.push(buf[i] | more);
    }
}

const MAX_DELTA: u64 = 0x0fff_ffff;

/// Serializes a song as a format-1 Standard MIDI File. Tempo and meter
/// events ride on the first track; every [`Track`] becomes one chunk.
pub fn write_midi(song: &MidiSong) -> Result<Vec<u8>, WriteError> {
    song.validate()?;
    let tl = Timeline::new(&song.tempo_map, song.ticks_per_quarter);
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(song.tracks.len() as u16).to_be_bytes());
    out.extend_from_slice(&song.ticks_per_quarter.to_be_bytes());

    for (ti, track) in song.tracks.iter().enumerate() {
        // (tick, priority, payload); meta < program < note-off < note-on
        let mut events: Vec<(u64, u8, u8, Vec<u8>)> = Vec::new();
        if !track.name.is_empty() {
            let name: Vec<u8> = track.name.bytes().filter(u8::is_ascii).collect();
            let mut e = alloc::vec![0xff, 0x03];
            push_var_len(&mut e, name.len() as u32);
            e.extend_from_slice(&name);
            events.push((0, 0, 0, e));
        }
        if ti == 0 {
            let ts = song.time_signature;
            let dd = ts.denominator.trailing_zeros() as u8;
            events.push((0, 0, 1, alloc::vec![0xff, 0x58, 0x04, ts.numerator, dd, 24, 8]));
            for t in &song.tempo_map {
                let b = t.micros_per_quarter.to_be_bytes();
                events.push((t.tick as u64, 0, 2, alloc::vec![0xff, 0x51, 0x03, b[1], b[2], b[3]]));
            }
        }
        let ch = track.channel & 0x0f;
        events.push((0, 1, 0, alloc::vec![0xc0 | ch, track.program & 0x7f]));
        for n in &track.notes {
            let on = tl.tick(n.onset);
            let off = tl.tick(n.offset()).max(on + 1);
            if off > u32::MAX as u64 {
                return Err(WriteError::TickOutOfRange { track: ti, tick: off });
            }
            events.push((off, 2, n.pitch, alloc::vec![0x80 | ch, n.pitch & 0x7f, 0]));
            events.push((on, 3, n.pitch, alloc::vec![0x90 | ch, n.pitch & 0x7f, n.velocity & 0x7f]));
        }
        events.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));

        let mut body = Vec::new();
        let mut last = 0u64;
        for (tick, _, _, payload) in &events {
            let delta = tick - last;
            if delta > MAX_DELTA {
                return Err(WriteError::TickOutOfRange { track: ti, tick: *tick });
            }
            push_var_len(&mut body, delta as u32);
            body.extend_from_slice(payload);
            last = *tick;
        }
        body.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn chunk(kind: &[u8], body: &[u8]) -> Vec<u8> {
        let mut v = kind.to_vec();
        v.extend_from_slice(&(body.len() as u32).to_be_bytes());
        v.extend_from_slice(body);
        v
    }

    fn header(format: u16, ntrks: u16, division: u16) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&format.to_be_bytes());
        b.extend_from_slice(&ntrks.to_be_bytes());
        b.extend_from_slice(&division.to_be_bytes());
        chunk(b"MThd", &b)
    }

    #[test]
    fn single_quarter_note_at_120_bpm() {
        let mut f = header(0, 1, 480);
        let body = [
            0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, // 500000 us
            0x00, 0x90, 60, 100, //
            0x83, 0x60, 0x80, 60, 0, // delta 480
            0x00, 0xff, 0x2f, 0x00,
        ];
        f.extend(chunk(b"MTrk", &body));
        let song = parse_midi(&f).unwrap();
        assert_eq!(song.tracks.len(), 1);
        let n = song.tracks[0].notes[0];
        assert_eq!((n.onset, n.duration, n.pitch, n.velocity), (0.0, 0.5, 60, 100));
        assert_eq!(song.duration, 0.5);
    }

    #[test]
    fn empty_track_chunk() {
        let mut f = header(1, 1, 480);
        f.extend(chunk(b"MTrk", &[0x00, 0xff, 0x2f, 0x00]));
        let song = parse_midi(&f).unwrap();
        assert_eq!(song.tracks.len(), 1);
        assert!(song.tracks[0].notes.is_empty());
        assert_eq!(song.duration, 0.0);
    }

    #[test]
    fn running_status_and_velocity_zero_off() {
        let mut f = header(0, 1, 96);
        let body = [0x00, 0x90, 60, 80, 0x60, 60, 0, 0x00, 64, 70, 0x60, 64, 0, 0x00, 0xff, 0x2f, 0x00];
        f.extend(chunk(b"MTrk", &body));
        let song = parse_midi(&f).unwrap();
        let pitches: Vec<u8> = song.tracks[0].notes.iter().map(|n| n.pitch).collect();
        assert_eq!(pitches, vec![60, 64]);
    }

    #[test]
    fn data_byte_without_status_is_error() {
        let mut f = header(0, 1, 96);
        f.extend(chunk(b"MTrk", &[0x00, 60, 80]));
        let err = parse_midi(&f).unwrap_err();
        assert_eq!(err.kind, MidiErrorKind::RunningStatus);
        assert_eq!(err.offset, 23);
    }

    #[test]
    fn truncated_chunk_reports_offset() {
        let mut f = header(0, 1, 96);
        f.extend_from_slice(b"MTrk");
        f.extend_from_slice(&100u32.to_be_bytes());
        f.extend_from_slice(&[0x00, 0x90]);
        let err = parse_midi(&f).unwrap_err();
        assert_eq!(err.kind, MidiErrorKind::Truncated);
        assert_eq!(err.offset, 18);
    }

    #[test]
    fn bad_header() {
        assert_eq!(parse_midi(b"RIFF0000000000").unwrap_err().kind, MidiErrorKind::BadHeader);
        assert_eq!(parse_midi(&[]).unwrap_err().offset, 0);
    }

    #[test]
    fn orphan_note_closed_with_diagnostic() {
        let mut f = header(0, 1, 480);
        f.extend(chunk(b"MTrk", &[0x00, 0x90, 60, 80, 0x83, 0x60, 0xff, 0x2f, 0x00]));
        let (song, diags) = parse_midi_with_diagnostics(&f).unwrap();
        assert_eq!(song.tracks[0].notes[0].duration, 0.5);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("closed at end of track"));
    }

    #[test]
    fn format_zero_splits_channels() {
        let mut f = header(0, 1, 480);
        let body = [
            0x00, 0xc0, 40, 0x00, 0xc1, 33, //
            0x00, 0x90, 72, 90, 0x00, 0x91, 36, 90, //
            0x83, 0x60, 0x80, 72, 0, 0x00, 0x81, 36, 0, //
            0x00, 0xff, 0x2f, 0x00,
        ];
        f.extend(chunk(b"MTrk", &body));
        let song = parse_midi(&f).unwrap();
        assert_eq!(song.tracks.len(), 2);
        assert_eq!((song.tracks[0].program, song.tracks[0].notes[0].pitch), (40, 72));
        assert_eq!((song.tracks[1].channel, song.tracks[1].program), (1, 33));
    }

    #[test]
    fn write_then_parse_single_note() {
        let song = MidiSong::new(vec![Track::new(0, 0, 0, vec![MidiNote::new(0.25, 0.5, 61, 77)])]);
        let back = parse_midi(&write_midi(&song).unwrap()).unwrap();
        assert_eq!(back, song);
    }

    #[test]
    fn write_empty_song_is_parseable() {
        let song = MidiSong::new(vec![Track::new(0, 0, 0, vec![])]);
        let back = parse_midi(&write_midi(&song).unwrap()).unwrap();
        assert_eq!(back.tracks.len(), 1);
        assert_eq!(back.note_count(), 0);
    }

    #[test]
    fn write_rejects_out_of_range_ticks() {
        let song = MidiSong::new(vec![Track::new(0, 0, 0, vec![MidiNote::new(1.0e7, 1.0, 60, 90)])]);
        assert!(matches!(write_midi(&song), Err(WriteError::TickOutOfRange { .. })));
    }

    #[test]
    fn var_len_encoding() {
        for (v, bytes) in [(0u32, vec![0x00]), (0x7f, vec![0x7f]), (0x80, vec![0x81, 0x00]), (0x0fff_ffff, vec![0xff, 0xff, 0xff, 0x7f])] {
            let mut out = Vec::new();
            push_var_len(&mut out, v);
            assert_eq!(out, bytes);
            let mut c = Cursor { data: &out, pos: 0, base: 0 };
            assert_eq!(c.var_len().unwrap(), v);
        }
    }
}
