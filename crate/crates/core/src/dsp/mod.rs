pub mod fft;
pub mod math;
pub mod onset;
