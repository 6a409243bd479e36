#![allow(dead_code)]

use cuekit_core::notation::{midi_to_abc, AbcOptions, AbcScore, MidiNote, MidiSong, Track};
use cuekit_core::vision::{Labels, VisualReport};

/// Two voices over four 4/4 measures at 120 BPM: a C major tune with a
/// repeated figure over a half-note bass.
pub fn fixture_song() -> MidiSong {
    let tune = [60, 64, 67, 64, 65, 69, 67, 65, 64, 67, 72, 67, 65, 62, 59, 60];
    let melody = tune
        .iter()
        .enumerate()
        .map(|(i, p)| MidiNote::new(i as f64 * 0.5, 0.5, *p, 90))
        .collect();
    let bass = [48, 43, 41, 43, 48, 45, 43, 48]
        .iter()
        .enumerate()
        .map(|(i, p)| MidiNote::new(i as f64, 1.0, *p, 70))
        .collect();
    MidiSong::new(vec![Track::new(0, 0, 0, melody), Track::new(1, 32, 1, bass)])
}

pub fn fixture_score() -> AbcScore {
    midi_to_abc(&fixture_song(), &AbcOptions::default()).unwrap().score
}

pub fn fixture_report() -> VisualReport {
    let l = |s: &str| Labels(vec![s.to_string()]);
    VisualReport {
        setting: l("road"),
        brightness: l("somber"),
        color_hue: l("Blue"),
        action: l("run"),
        emotion: l("Sad"),
        view_scale: l("long shot"),
        theme: l("drama"),
        motion_speed: 0.4,
        motion_saliency: 0.2,
        shot_cuts: vec![2.0, 5.5],
        plot_development: "a chase that ends in loss".to_string(),
    }
}

// Seeded generators and brute-force oracles shared by the suites and the
// acceptance run.

use cuekit_core::conditioning::Chromagram;
use cuekit_core::metrics::{DbEnvelope, ImpulseTrain};
use cuekit_core::notation::{TempoChange, TimeSignature};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.0.next_u64() % (hi - lo + 1)
    }

    pub fn bytes(&mut self, n: usize) -> Vec<u8> {
        let mut v = vec![0; n];
        self.0.fill_bytes(&mut v);
        v
    }
}

/// Up to `max_tracks` tracks and `max_notes` notes at arbitrary real
/// times inside `span` seconds. Notes may overlap freely.
pub fn random_song(rng: &mut Rng, max_tracks: u64, max_notes: u64, span: f64) -> MidiSong {
    let tracks = rng.int(1, max_tracks) as usize;
    let notes = rng.int(tracks as u64, max_notes) as usize;
    let mut per: Vec<Vec<MidiNote>> = vec![Vec::new(); tracks];
    for i in 0..notes {
        let onset = rng.range(0.0, span * 0.95);
        let dur = rng.range(0.01, (span - onset).min(4.0));
        per[i % tracks].push(MidiNote::new(onset, dur, rng.int(36, 96) as u8, rng.int(1, 127) as u8));
    }
    let tracks = per
        .into_iter()
        .enumerate()
        .map(|(i, n)| Track::new(i, (rng.int(0, 111)) as u8, (i % 9) as u8, n))
        .collect();
    MidiSong::new(tracks)
}

/// Notes whose onsets and offsets fall on whole ticks, with no two
/// notes of the same pitch overlapping within a track.
pub fn tick_aligned_song(rng: &mut Rng) -> MidiSong {
    let tpq = [96u16, 240, 480, 960][rng.int(0, 3) as usize];
    let tempo = TempoChange {
        tick: 0,
        micros_per_quarter: rng.int(300_000, 1_000_000) as u32,
    };
    let sig = TimeSignature {
        numerator: [2u8, 3, 4, 6][rng.int(0, 3) as usize],
        denominator: 4,
    };
    let skeleton = MidiSong::with_timing(vec![Track::new(0, 0, 0, vec![])], tpq, vec![tempo], sig);
    let tracks = (0..rng.int(1, 4) as usize)
        .map(|i| {
            let mut busy_until = [0u64; 128];
            let mut notes = Vec::new();
            for _ in 0..rng.int(0, 40) {
                let pitch = rng.int(21, 108) as usize;
                let start = rng.int(0, 16 * tpq as u64);
                if start < busy_until[pitch] {
                    continue;
                }
                let len = rng.int(1, 4 * tpq as u64);
                busy_until[pitch] = start + len;
                let onset = skeleton.tick_to_seconds(start);
                let dur = skeleton.tick_to_seconds(start + len) - onset;
                notes.push(MidiNote::new(onset, dur, pitch as u8, rng.int(1, 127) as u8));
            }
            Track::new(i, rng.int(0, 127) as u8, if i == 0 { 0 } else { (i + 1) as u8 }, notes)
        })
        .collect();
    MidiSong::with_timing(tracks, tpq, vec![tempo], sig)
}

/// Monophonic voices on a sixteenth grid at 120 BPM in 4/4, so the ABC
/// conversion has nothing to round.
pub fn quantized_song(rng: &mut Rng) -> MidiSong {
    let q = 0.125;
    let tracks = (0..rng.int(1, 3) as usize)
        .map(|i| {
            let mut t = rng.int(0, 8);
            let mut notes = Vec::new();
            for _ in 0..rng.int(1, 30) {
                let len = rng.int(1, 12);
                notes.push(MidiNote::new(t as f64 * q, len as f64 * q, rng.int(40, 90) as u8, 90));
                t += len + rng.int(0, 4);
            }
            Track::new(i, (i * 8) as u8, i as u8, notes)
        })
        .collect();
    MidiSong::new(tracks)
}

/// A single line with gaps between notes of 0.12 to 0.8 seconds.
pub fn monophonic_line(rng: &mut Rng) -> Vec<MidiNote> {
    let mut t = rng.range(0.05, 0.5);
    let mut notes = Vec::new();
    for _ in 0..rng.int(4, 24) {
        let ioi = rng.range(0.12, 0.8);
        notes.push(MidiNote::new(t, ioi * rng.range(0.3, 1.0), rng.int(48, 84) as u8, 100));
        t += ioi;
    }
    notes
}

/// Covered fraction of `[0, total)` counted on a 1 ms grid by cell centres.
pub fn coverage_on_grid(notes: &[&MidiNote], total: f64) -> f64 {
    let cells = (total * 1000.0).round() as usize;
    let mut hit = vec![false; cells];
    for n in notes {
        let lo = ((n.onset * 1000.0) - 0.5).ceil().max(0.0) as usize;
        let hi = ((n.offset() * 1000.0) - 0.5).ceil().max(0.0) as usize;
        for c in hit.iter_mut().take(hi.min(cells)).skip(lo) {
            *c = true;
        }
    }
    hit.iter().filter(|h| **h).count() as f64 / cells as f64
}

/// Correlation at every lag by direct summation over all index pairs.
pub fn xcorr_oracle(x: &ImpulseTrain, y: &ImpulseTrain, kmax: i64) -> Vec<f64> {
    (-kmax..=kmax)
        .map(|k| {
            let mut acc = 0.0;
            for t in 0..x.values.len() {
                for u in 0..y.values.len() {
                    if u as i64 - t as i64 == k {
                        acc += x.values[t] as f64 * y.values[u] as f64;
                    }
                }
            }
            acc
        })
        .collect()
}

fn cos_sim(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
    let na = a.iter().map(|p| p * p).sum::<f64>().sqrt();
    let nb = b.iter().map(|q| q * q).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Diversity from first principles: segment means per piece, then every
/// ordered pair of distinct pieces, halved.
pub fn diversity_oracle(set: &[Chromagram], segment_seconds: f64) -> f64 {
    let means = |c: &Chromagram| -> Vec<Vec<f64>> {
        let per = ((segment_seconds * c.sample_rate as f64 / c.hop as f64).round() as usize).max(1);
        let mut out = Vec::new();
        let mut s = 0;
        while s < c.frames.len() {
            let e = (s + per).min(c.frames.len());
            out.push((0..12).map(|b| (s..e).map(|k| c.frames[k][b]).sum::<f64>() / (e - s) as f64).collect());
            s = e;
        }
        out
    };
    let segs: Vec<Vec<Vec<f64>>> = set.iter().map(means).collect();
    let n = set.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let m = segs[i].len().min(segs[j].len());
                sum += (0..m).map(|s| cos_sim(&segs[i][s], &segs[j][s])).sum::<f64>() / m as f64;
            }
        }
    }
    (1.0 - sum / (n * (n - 1)) as f64).clamp(0.0, 1.0)
}

pub fn dynamic_oracle(a: &DbEnvelope, b: &DbEnvelope) -> f64 {
    let n = a.values.len().min(b.values.len()).saturating_sub(1);
    let da: Vec<f64> = (0..n).map(|i| a.values[i + 1] - a.values[i]).collect();
    let db: Vec<f64> = (0..n).map(|i| b.values[i + 1] - b.values[i]).collect();
    (1.0 - cos_sim(&da, &db)).clamp(0.0, 2.0)
}

pub fn random_chromagram(rng: &mut Rng, frames: usize) -> Chromagram {
    Chromagram {
        sample_rate: 32_000,
        window: 4096,
        hop: 2048,
        one_hot: false,
        frames: (0..frames).map(|_| std::array::from_fn(|_| rng.unit())).collect(),
        mask: vec![true; frames],
    }
}

pub fn random_train(rng: &mut Rng, len: usize, density: f64) -> ImpulseTrain {
    ImpulseTrain {
        grid_rate: 100.0,
        values: (0..len).map(|_| (rng.unit() < density) as u8).collect(),
    }
}
