//! Sensor specifications, data-rate arithmetic and synthetic signal generation.
//!
//! The four on-wheel sensors are modeled after the prototype hardware: an
//! acoustic module (AM) sampling the tire cavity at 32 kHz, a 6-DoF inertial
//! measurement unit (IMU) at 562.5 Hz, a combined temperature/pressure module
//! (TP) at 5 Hz and the battery state-of-charge monitor (BSoC) at 1 Hz.
//! Signal generation is a deterministic stand-in for the physical MEMS
//! hardware: same seed and config, bit-identical sample stream.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Tick;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("no sensors")]
    NoSensors,
    #[error("invalid sensor spec: {0}")]
    InvalidSpec(String),
}

/// Identifies one of the four wheel sensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorId {
    Am,
    Imu,
    Tp,
    Bsoc,
}

impl SensorId {
    pub const ALL: [SensorId; 4] = [SensorId::Am, SensorId::Imu, SensorId::Tp, SensorId::Bsoc];

    pub fn name(self) -> &'static str {
        match self {
            SensorId::Am => "AM",
            SensorId::Imu => "IMU",
            SensorId::Tp => "TP",
            SensorId::Bsoc => "BSoC",
        }
    }

    /// Wire code used in message encoding.
    pub fn code(self) -> u8 {
        match self {
            SensorId::Am => 0,
            SensorId::Imu => 1,
            SensorId::Tp => 2,
            SensorId::Bsoc => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<SensorId> {
        match code {
            0 => Some(SensorId::Am),
            1 => Some(SensorId::Imu),
            2 => Some(SensorId::Tp),
            3 => Some(SensorId::Bsoc),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self.code() as usize
    }
}

impl std::fmt::Display for SensorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-sensor precision / rate / channel description.
///
/// The sample rate is stored in millihertz so fractional rates (the IMU runs
/// at 562.5 Hz) stay exact in all tick arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorSpec {
    pub id: SensorId,
    /// Bits per channel sample.
    pub precision_bits: u16,
    /// Sample rate in millihertz (562.5 Hz == 562_500).
    pub rate_millihertz: u64,
    /// Channels per sample frame (AM=1, IMU=6, TP=2, BSoC=1).
    pub channels: u16,
}

impl SensorSpec {
    pub fn new(
        id: SensorId,
        precision_bits: u16,
        rate_millihertz: u64,
        channels: u16,
    ) -> Result<SensorSpec, SensorError> {
        if precision_bits == 0 || precision_bits > 32 {
            return Err(SensorError::InvalidSpec("precision must be 1..=32 bits".into()));
        }
        if rate_millihertz == 0 {
            return Err(SensorError::InvalidSpec("sample rate must be > 0".into()));
        }
        if channels == 0 {
            return Err(SensorError::InvalidSpec("channels must be >= 1".into()));
        }
        Ok(SensorSpec { id, precision_bits, rate_millihertz, channels })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.rate_millihertz as f64 / 1000.0
    }

    /// Derived data rate in bit/s: precision x sample rate x channels, exact.
    pub fn data_rate_bps(&self) -> f64 {
        let millibits = self.precision_bits as u128
            * self.channels as u128
            * self.rate_millihertz as u128;
        millibits as f64 / 1000.0
    }

    /// Whole sample frames produced strictly before tick `t` when sampling
    /// starts at tick 0. Floor arithmetic over exact integers, so totals over
    /// any horizon telescope without drift.
    pub fn frames_before(&self, t: Tick) -> u64 {
        (t as u128 * self.rate_millihertz as u128 / 1_000_000) as u64
    }

    /// Bytes occupied by one channel value on the wire (values are packed in
    /// whole little-endian bytes; the 12-bit BSoC value rides a 16-bit field
    /// with the top four bits zero).
    pub fn value_width_bytes(&self) -> usize {
        (self.precision_bits as usize).div_ceil(8)
    }

    /// Inclusive range of representable sample values. BSoC is an unsigned
    /// ADC count; the other sensors are signed. Values are stored as `i32`,
    /// which bounds the unsigned case.
    pub fn sample_range(&self) -> (i64, i64) {
        let bits = self.precision_bits as u32;
        match self.id {
            SensorId::Bsoc => (0, ((1i64 << bits) - 1).min(i32::MAX as i64)),
            _ => (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1),
        }
    }
}

/// The four sensors with the prototype's precision and sample-rate values.
pub fn paper_sensors() -> [SensorSpec; 4] {
    [
        SensorSpec { id: SensorId::Am, precision_bits: 32, rate_millihertz: 32_000_000, channels: 1 },
        SensorSpec { id: SensorId::Imu, precision_bits: 16, rate_millihertz: 562_500, channels: 6 },
        SensorSpec { id: SensorId::Tp, precision_bits: 32, rate_millihertz: 5_000, channels: 2 },
        SensorSpec { id: SensorId::Bsoc, precision_bits: 12, rate_millihertz: 1_000, channels: 1 },
    ]
}

/// Look up the paper spec for one sensor.
pub fn spec_for(id: SensorId) -> SensorSpec {
    paper_sensors()[id.index()]
}

/// Sum of per-sensor data rates, in kbit/s.
pub fn total_required_rate_kbps(specs: &[SensorSpec]) -> Result<f64, SensorError> {
    if specs.is_empty() {
        return Err(SensorError::NoSensors);
    }
    Ok(specs.iter().map(|s| s.data_rate_bps()).sum::<f64>() / 1000.0)
}

// ---------------------------------------------------------------------------
// Signal synthesis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AmProfile {
    /// Dominant tone injected into the acoustic signal, Hz.
    pub tone_hz: f64,
    /// Tone amplitude as a fraction of full scale.
    pub amplitude: f64,
    /// Uniform noise floor as a fraction of full scale.
    pub noise_floor: f64,
}

impl Default for AmProfile {
    fn default() -> Self {
        AmProfile { tone_hz: 225.0, amplitude: 0.5, noise_floor: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ImuProfile {
    /// Wheel rotation frequency, Hz.
    pub wheel_speed_hz: f64,
    /// Vertical load on the wheel, N. Scales the oscillating accelerations.
    pub vertical_load_n: f64,
}

impl Default for ImuProfile {
    fn default() -> Self {
        ImuProfile { wheel_speed_hz: 13.9, vertical_load_n: 5256.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TpProfile {
    pub pressure_bar: f64,
    pub temp_c: f64,
}

impl Default for TpProfile {
    fn default() -> Self {
        TpProfile { pressure_bar: 2.5, temp_c: 35.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BsocProfile {
    /// Divider output at recording start, mV.
    pub start_mv: f64,
    /// Linear drain, mV per second.
    pub drain_mv_per_s: f64,
}

impl Default for BsocProfile {
    fn default() -> Self {
        BsocProfile { start_mv: 1850.0, drain_mv_per_s: 0.02 }
    }
}

/// Configuration for the synthetic signal generators.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SignalConfig {
    pub seed: u64,
    #[serde(default)]
    pub am: AmProfile,
    #[serde(default)]
    pub imu: ImuProfile,
    #[serde(default)]
    pub tp: TpProfile,
    #[serde(default)]
    pub bsoc: BsocProfile,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            seed: 1,
            am: AmProfile::default(),
            imu: ImuProfile::default(),
            tp: TpProfile::default(),
            bsoc: BsocProfile::default(),
        }
    }
}

/// A batch of whole sample frames covering one generation window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBatch {
    /// Index of the first frame in the batch (frames count from tick 0).
    pub first_frame: u64,
    /// Channel values, `frames * channels` entries, frame-major.
    pub values: Vec<i32>,
    channels: u16,
}

impl SampleBatch {
    pub fn frames(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.values.len() / self.channels as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

const ADC_REF_MV: f64 = 3300.0;
const IMU_GRAVITY_COUNTS: f64 = 1092.0; // 1 g at the +-30 g accelerometer scale

/// Deterministic sample source for one sensor.
///
/// The generator owns a seeded RNG stream; calling `generate` over the same
/// window sequence with the same seed always yields the same values.
pub struct SignalGenerator {
    spec: SensorSpec,
    cfg: SignalConfig,
    rng: ChaCha8Rng,
}

impl SignalGenerator {
    pub fn new(spec: SensorSpec, cfg: &SignalConfig) -> SignalGenerator {
        // Separate stream per sensor so one sensor's draw count cannot
        // perturb another's.
        let tag = 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(spec.id.code() as u64 + 1);
        SignalGenerator { spec, cfg: *cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ tag) }
    }

    pub fn spec(&self) -> &SensorSpec {
        &self.spec
    }

    /// Generate the whole frames whose indices fall in `[from_tick, to_tick)`.
    /// A window shorter than one sample period yields an empty batch.
    pub fn generate(&mut self, from_tick: Tick, to_tick: Tick) -> SampleBatch {
        let first = self.spec.frames_before(from_tick);
        let last = self.spec.frames_before(to_tick.max(from_tick));
        let channels = self.spec.channels;
        let mut values = Vec::with_capacity(((last - first) as usize) * channels as usize);
        for frame in first..last {
            let t_s = frame as f64 * 1000.0 / self.spec.rate_millihertz as f64;
            self.frame_values(t_s, &mut values);
        }
        let batch = SampleBatch { first_frame: first, values, channels };
        debug_assert!(self.batch_in_range(&batch));
        batch
    }

    fn batch_in_range(&self, batch: &SampleBatch) -> bool {
        let (lo, hi) = self.spec.sample_range();
        batch.values.iter().all(|&v| (v as i64) >= lo && (v as i64) <= hi)
    }

    fn frame_values(&mut self, t_s: f64, out: &mut Vec<i32>) {
        let (lo, hi) = self.spec.sample_range();
        let clamp = |v: f64| -> i32 { (v.round() as i64).clamp(lo, hi) as i32 };
        match self.spec.id {
            SensorId::Am => {
                let p = &self.cfg.am;
                let full = hi as f64;
                let tone = p.amplitude * (std::f64::consts::TAU * p.tone_hz * t_s).sin();
                let noise = p.noise_floor * self.rng.gen_range(-1.0..1.0);
                out.push(clamp((tone + noise).clamp(-1.0, 1.0) * full));
            }
            SensorId::Imu => {
                let p = &self.cfg.imu;
                let phase = std::f64::consts::TAU * p.wheel_speed_hz * t_s;
                // Oscillating accelerations scale with vertical load; gyro z
                // carries the wheel speed. All channels get a little noise.
                let accel_amp = IMU_GRAVITY_COUNTS * 2.0 * (p.vertical_load_n / 9198.0);
                let gyro_z = 8.2 * p.wheel_speed_hz * 360.0;
                let mut noisy = |v: f64| {
                    let n: f64 = self.rng.gen_range(-8.0..8.0);
                    clamp(v + n)
                };
                out.push(noisy(accel_amp * phase.sin()));
                out.push(noisy(accel_amp * phase.cos()));
                out.push(noisy(IMU_GRAVITY_COUNTS));
                out.push(noisy(0.0));
                out.push(noisy(0.0));
                out.push(noisy(gyro_z));
            }
            SensorId::Tp => {
                let p = &self.cfg.tp;
                // Pressure in tenths of millibar, temperature in centi-degC.
                let pressure = p.pressure_bar * 10_000.0 + self.rng.gen_range(-5.0..5.0);
                let temp = p.temp_c * 100.0 + self.rng.gen_range(-10.0..10.0);
                out.push(clamp(pressure));
                out.push(clamp(temp));
            }
            SensorId::Bsoc => {
                let p = &self.cfg.bsoc;
                let mv = p.start_mv - p.drain_mv_per_s * t_s;
                out.push(clamp(mv / ADC_REF_MV * 4095.0));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_rates_match_sensor_table() {
        let [am, imu, tp, bsoc] = paper_sensors();
        assert_eq!(am.data_rate_bps(), 1_024_000.0);
        assert_eq!(imu.data_rate_bps(), 54_000.0);
        assert_eq!(tp.data_rate_bps(), 320.0);
        assert_eq!(bsoc.data_rate_bps(), 12.0);
    }

    #[test]
    fn degenerate_rate_is_one_bit_per_second() {
        let s = SensorSpec::new(SensorId::Am, 1, 1_000, 1).unwrap();
        assert_eq!(s.data_rate_bps(), 1.0);
    }

    #[test]
    fn total_rate_sums_to_requirement() {
        let total = total_required_rate_kbps(&paper_sensors()).unwrap();
        assert!((total - 1078.332).abs() < 1e-9, "got {total}");
    }

    #[test]
    fn total_rate_single_and_additive() {
        let am = spec_for(SensorId::Am);
        assert_eq!(total_required_rate_kbps(&[am]).unwrap(), 1024.0);
        let bsoc = spec_for(SensorId::Bsoc);
        let two = total_required_rate_kbps(&[bsoc, bsoc]).unwrap();
        assert!((two - 0.024).abs() < 1e-12);
    }

    #[test]
    fn total_rate_rejects_empty_list() {
        assert_eq!(total_required_rate_kbps(&[]), Err(SensorError::NoSensors));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(SensorSpec::new(SensorId::Am, 0, 1000, 1).is_err());
        assert!(SensorSpec::new(SensorId::Am, 8, 0, 1).is_err());
        assert!(SensorSpec::new(SensorId::Am, 8, 1000, 0).is_err());
    }

    #[test]
    fn am_window_holds_224_samples() {
        let mut g = SignalGenerator::new(spec_for(SensorId::Am), &SignalConfig::default());
        let batch = g.generate(0, 7);
        assert_eq!(batch.frames(), 224);
    }

    /// Independent oracle for the floor-accumulated batch sizes:
    /// `floor(k * frames_per_window) - floor((k-1) * frames_per_window)`.
    fn batch_size_oracle(rate_mhz: u64, window_ms: u64, k: u64) -> u64 {
        let frames = |t: u64| t as u128 * rate_mhz as u128 / 1_000_000;
        (frames(k * window_ms) - frames((k - 1) * window_ms)) as u64
    }

    #[test]
    fn imu_batches_follow_floor_accumulator() {
        let spec = spec_for(SensorId::Imu);
        let mut g = SignalGenerator::new(spec, &SignalConfig::default());
        let mut sizes = Vec::new();
        for k in 1..=100u64 {
            let batch = g.generate((k - 1) * 10, k * 10);
            assert_eq!(batch.frames() as u64, batch_size_oracle(spec.rate_millihertz, 10, k));
            sizes.push(batch.frames());
        }
        // Frozen from the oracle: the cycle averages 5.625 frames per window.
        assert_eq!(&sizes[..8], &[5, 6, 5, 6, 6, 5, 6, 6]);
        let total: usize = sizes.iter().sum();
        assert_eq!(total as u64, spec.frames_before(1000));
        assert_eq!(total, 562); // 562.5 frames in 1 s, floored
    }

    #[test]
    fn same_seed_same_stream() {
        for id in SensorId::ALL {
            let cfg = SignalConfig { seed: 42, ..SignalConfig::default() };
            let mut a = SignalGenerator::new(spec_for(id), &cfg);
            let mut b = SignalGenerator::new(spec_for(id), &cfg);
            for k in 0..20u64 {
                assert_eq!(a.generate(k * 10, (k + 1) * 10), b.generate(k * 10, (k + 1) * 10));
            }
        }
    }

    #[test]
    fn short_window_yields_empty_batch() {
        let mut g = SignalGenerator::new(spec_for(SensorId::Bsoc), &SignalConfig::default());
        assert!(g.generate(0, 999).is_empty());
        assert_eq!(g.generate(999, 1001).frames(), 1);
    }

    #[test]
    fn bsoc_samples_are_unsigned_12_bit() {
        let (lo, hi) = spec_for(SensorId::Bsoc).sample_range();
        assert_eq!((lo, hi), (0, 4095));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// No drift: frames over [0, T) equal floor(T x rate) for any
            /// window partition.
            #[test]
            fn no_drift(rate_mhz in 1u64..100_000_000, horizon in 1u64..5000, window in 1u64..500) {
                let spec = SensorSpec::new(SensorId::Am, 16, rate_mhz, 1).unwrap();
                let mut g = SignalGenerator::new(spec, &SignalConfig::default());
                let mut total = 0u64;
                let mut t = 0;
                while t < horizon {
                    let next = (t + window).min(horizon);
                    total += g.generate(t, next).frames() as u64;
                    t = next;
                }
                prop_assert_eq!(total, spec.frames_before(horizon));
            }

            /// Generated values always fit the sensor's precision.
            #[test]
            fn samples_fit_precision(seed in any::<u64>(), idx in 0usize..4, from in 0u64..10_000) {
                let id = SensorId::ALL[idx];
                let spec = spec_for(id);
                let cfg = SignalConfig { seed, ..SignalConfig::default() };
                let mut g = SignalGenerator::new(spec, &cfg);
                let batch = g.generate(from, from + 20);
                let (lo, hi) = spec.sample_range();
                for &v in &batch.values {
                    prop_assert!((v as i64) >= lo && (v as i64) <= hi);
                }
            }
        }
    }
}
