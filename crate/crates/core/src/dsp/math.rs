//! Thin wrappers over `libm` so the crate stays `no_std`.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}
#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}
#[inline]
pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}
#[inline]
pub fn log10(x: f64) -> f64 {
    libm::log10(x)
}
#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}
#[inline]
pub fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}
#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}
#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}
#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// Decibels to linear amplitude.
#[inline]
pub fn db_to_gain(db: f64) -> f64 {
    pow(10.0, db / 20.0)
}

/// Linear amplitude to decibels, floored at `floor_db`.
#[inline]
pub fn gain_to_db(gain: f64, floor_db: f64) -> f64 {
    if gain <= 0.0 {
        return floor_db;
    }
    let db = 20.0 * log10(gain);
    if db < floor_db {
        floor_db
    } else {
        db
    }
}

/// Equal-tempered frequency of a MIDI pitch, A4 = 440 Hz.
#[inline]
pub fn midi_to_hz(pitch: f64) -> f64 {
    440.0 * pow(2.0, (pitch - 69.0) / 12.0)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    sqrt(var)
}
