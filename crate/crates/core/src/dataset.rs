//! Labeled `(2, 32)` I/Q records.
//!
//! The generator stands in for over-the-air captures: a fixed LoRa-like
//! up-chirp segment is distorted by a per-transmitter hardware profile
//! (gain, phase, carrier offset, I/Q imbalance, thermal noise). Rogue
//! records are produced from the legitimate ones by [`crate::spoof`].
//!
//! Dataset file layout (all little-endian):
//!
//! ```text
//! "LORAIQ01"  version:u32  reserved:u32  count:u64
//! count x { 64 x f32 (I row, then Q row)   device:u8   authenticity:u8 }
//! ```

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spoof::{self, RogueTransform};
use crate::tensor::Tensor;

/// Samples per record (I/Q pairs).
pub const SAMPLE_LEN: usize = 32;
/// Real values per record.
pub const IQ_LEN: usize = 2 * SAMPLE_LEN;
pub const INPUT_SHAPE: [usize; 2] = [2, SAMPLE_LEN];

pub const FILE_MAGIC: &[u8; 8] = b"LORAIQ01";
pub const FILE_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;
const RECORD_LEN: usize = IQ_LEN * 4 + 2;

/// One record: row 0 holds the in-phase samples, row 1 the quadrature samples.
///
/// Values are kept at `f32` precision so records survive the dataset file
/// unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqSample {
    iq: [f64; IQ_LEN],
}

impl IqSample {
    /// Builds a record, rounding every value to `f32` precision.
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.len() != IQ_LEN {
            return Err(Error::Shape(format!(
                "I/Q record needs {IQ_LEN} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite I/Q value".into()));
        }
        let mut iq = [0.0; IQ_LEN];
        for (dst, v) in iq.iter_mut().zip(values) {
            *dst = f64::from(*v as f32);
        }
        Ok(Self { iq })
    }

    pub fn from_complex(samples: &[Complex64]) -> Result<Self> {
        if samples.len() != SAMPLE_LEN {
            return Err(Error::Shape(format!(
                "I/Q record needs {SAMPLE_LEN} complex samples, got {}",
                samples.len()
            )));
        }
        let mut values = [0.0; IQ_LEN];
        for (t, s) in samples.iter().enumerate() {
            values[t] = s.re;
            values[SAMPLE_LEN + t] = s.im;
        }
        Self::new(&values)
    }

    pub fn values(&self) -> &[f64; IQ_LEN] {
        &self.iq
    }

    pub fn in_phase(&self) -> &[f64] {
        &self.iq[..SAMPLE_LEN]
    }

    pub fn quadrature(&self) -> &[f64] {
        &self.iq[SAMPLE_LEN..]
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.in_phase()
            .iter()
            .zip(self.quadrature())
            .map(|(&i, &q)| Complex64::new(i, q))
            .collect()
    }

    /// Mean of `value^2` over the 64 components.
    pub fn power(&self) -> f64 {
        self.iq.iter().map(|v| v * v).sum::<f64>() / IQ_LEN as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Device {
    Device1,
    Device2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Authenticity {
    Legitimate,
    Rogue,
}

impl Device {
    pub const ALL: [Device; 2] = [Device::Device1, Device::Device2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl Authenticity {
    pub const ALL: [Authenticity; 2] = [Authenticity::Legitimate, Authenticity::Rogue];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// The two classification tasks over the same records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Task 1: Device 1 vs Device 2.
    Device,
    /// Task 2: legitimate vs rogue.
    Authenticity,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Device, Task::Authenticity];

    pub fn name(self) -> &'static str {
        match self {
            Task::Device => "task1",
            Task::Authenticity => "task2",
        }
    }

    pub fn class_names(self) -> [&'static str; 2] {
        match self {
            Task::Device => ["device1", "device2"],
            Task::Authenticity => ["legitimate", "rogue"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub sample: IqSample,
    pub device: Device,
    pub authenticity: Authenticity,
}

impl LabeledSample {
    pub fn label(&self, task: Task) -> usize {
        match task {
            Task::Device => self.device.index(),
            Task::Authenticity => self.authenticity.index(),
        }
    }

    fn cell(&self) -> usize {
        self.device.index() * 2 + self.authenticity.index()
    }
}

/// Hardware impairments of one transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub gain_db: f64,
    pub phase_offset_rad: f64,
    /// Carrier-frequency offset in radians per sample.
    pub cfo_norm: f64,
    /// Multiplier applied to the Q arm.
    pub iq_gain_imbalance: f64,
    pub snr_db: f64,
}

impl DeviceProfile {
    pub fn device1() -> Self {
        Self {
            gain_db: 0.0,
            phase_offset_rad: 0.0,
            cfo_norm: 0.01,
            iq_gain_imbalance: 1.02,
            snr_db: 20.0,
        }
    }

    pub fn device2() -> Self {
        Self {
            gain_db: -1.0,
            phase_offset_rad: 0.2,
            cfo_norm: -0.015,
            iq_gain_imbalance: 0.98,
            snr_db: 20.0,
        }
    }

    /// Profile that leaves a chirp untouched (noise aside).
    pub fn identity() -> Self {
        Self {
            gain_db: 0.0,
            phase_offset_rad: 0.0,
            cfo_norm: 0.0,
            iq_gain_imbalance: 1.0,
            snr_db: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.gain_db,
            self.phase_offset_rad,
            self.cfo_norm,
            self.iq_gain_imbalance,
            self.snr_db,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("device profile values must be finite".into()));
        }
        if self.iq_gain_imbalance <= 0.0 {
            return Err(Error::Config("iq_gain_imbalance must be > 0".into()));
        }
        Ok(())
    }
}

/// One linear up-chirp segment with phase `pi * (t^2 / n - t)`.
pub fn synth_chirp(n_samples: usize) -> Vec<Complex64> {
    let n = n_samples as f64;
    (0..n_samples)
        .map(|t| {
            let t = t as f64;
            Complex64::from_polar(1.0, PI * (t * t / n - t))
        })
        .collect()
}

/// Distort a chirp with a transmitter profile. `noise` supplies the thermal
/// noise stream; `None` produces the noiseless record.
pub fn apply_device_profile(
    chirp: &[Complex64],
    profile: &DeviceProfile,
    noise: Option<&mut Rng>,
) -> Result<IqSample> {
    IqSample::from_complex(&distort(chirp, profile, noise)?)
}

/// Full-precision form of [`apply_device_profile`].
pub fn distort(
    chirp: &[Complex64],
    profile: &DeviceProfile,
    noise: Option<&mut Rng>,
) -> Result<Vec<Complex64>> {
    profile.validate()?;
    if chirp.len() != SAMPLE_LEN {
        return Err(Error::Shape(format!(
            "chirp must have {SAMPLE_LEN} samples, got {}",
            chirp.len()
        )));
    }
    let gain = 10f64.powf(profile.gain_db / 20.0);
    let mut out: Vec<Complex64> = chirp
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let rot =
                Complex64::from_polar(gain, profile.phase_offset_rad + profile.cfo_norm * t as f64);
            let v = s * rot;
            Complex64::new(v.re, v.im * profile.iq_gain_imbalance)
        })
        .collect();
    if let Some(rng) = noise {
        // Noise power is set relative to the nominal signal power gain^2.
        let sigma = (gain * gain / 10f64.powf(profile.snr_db / 10.0) / 2.0).sqrt();
        for v in &mut out {
            v.re += sigma * rng.normal();
            v.im += sigma * rng.normal();
        }
    }
    Ok(out)
}

/// Everything that determines a generated dataset apart from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub devices: [DeviceProfile; 2],
    pub rogues: [RogueTransform; 2],
    pub n_total: usize,
    pub kde_bandwidth: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            devices: [DeviceProfile::device1(), DeviceProfile::device2()],
            rogues: [RogueTransform::rogue1(), RogueTransform::rogue2()],
            n_total: 5000,
            kde_bandwidth: spoof::DEFAULT_BANDWIDTH,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_total == 0 || !self.n_total.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "n_total = {} must be a positive multiple of 4",
                self.n_total
            )));
        }
        if !(self.kde_bandwidth > 0.0 && self.kde_bandwidth.is_finite()) {
            return Err(Error::Config("kde_bandwidth must be > 0".into()));
        }
        for p in &self.devices {
            p.validate()?;
        }
        for r in &self.rogues {
            r.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetMeta {
    /// Generator config hash; `None` for loaded or converted data.
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    /// Record counts indexed by `[device][authenticity]`.
    pub counts: [[usize; 2]; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    meta: DatasetMeta,
}

fn count_cells(samples: &[LabeledSample]) -> [[usize; 2]; 2] {
    let mut counts = [[0; 2]; 2];
    for s in samples {
        counts[s.device.index()][s.authenticity.index()] += 1;
    }
    counts
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>) -> Self {
        let counts = count_cells(&samples);
        Self {
            samples,
            meta: DatasetMeta {
                counts,
                ..DatasetMeta::default()
            },
        }
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    /// Records where the samples came from; counts stay tied to the contents.
    pub fn set_provenance(&mut self, config_hash: Option<String>, seed: Option<u64>) {
        self.meta.config_hash = config_hash;
        self.meta.seed = seed;
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn counts(&self) -> [[usize; 2]; 2] {
        self.meta.counts
    }

    /// Records as a `(n, 2, 32)` tensor.
    pub fn inputs(&self) -> Tensor {
        let data = self
            .samples
            .iter()
            .flat_map(|s| s.sample.values().iter().copied())
            .collect();
        Tensor::new(vec![self.samples.len(), 2, SAMPLE_LEN], data).expect("fixed record size")
    }

    pub fn labels(&self, task: Task) -> Vec<usize> {
        self.samples.iter().map(|s| s.label(task)).collect()
    }

    pub fn filter(&self, keep: impl Fn(&LabeledSample) -> bool) -> Dataset {
        Dataset::new(self.samples.iter().filter(|s| keep(s)).copied().collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset::new(indices.iter().map(|&i| self.samples[i]).collect())
    }

    /// Concatenation of two datasets (provenance metadata is dropped).
    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        Dataset::new(samples)
    }

    /// Largest absolute component over all records.
    pub fn max_abs(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.sample.values().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.samples.len() * RECORD_LEN);
        buf.extend_from_slice(FILE_MAGIC);
        buf.extend_from_slice(&FILE_VERSION.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        for s in &self.samples {
            for v in s.sample.values() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            buf.push(s.device.index() as u8);
            buf.push(s.authenticity.index() as u8);
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "dataset file truncated: {} bytes",
                bytes.len()
            )));
        }
        if &bytes[..8] != FILE_MAGIC {
            return Err(Error::Format(format!(
                "bad dataset magic {:?}",
                String::from_utf8_lossy(&bytes[..8])
            )));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FILE_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {version}"
            )));
        }
        let count = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
        let body = &bytes[HEADER_LEN..];
        let expected = (count as u128) * RECORD_LEN as u128;
        if body.len() as u128 != expected {
            return Err(Error::Format(format!(
                "header declares {count} records ({expected} bytes) but body has {} bytes",
                body.len()
            )));
        }
        let mut samples = Vec::with_capacity(count as usize);
        for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
            let values: Vec<f64> = rec[..IQ_LEN * 4]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            let sample =
                IqSample::new(&values).map_err(|e| Error::Format(format!("record {i}: {e}")))?;
            let device = Device::from_index(rec[IQ_LEN * 4] as usize).ok_or_else(|| {
                Error::Format(format!("record {i}: bad device label {}", rec[IQ_LEN * 4]))
            })?;
            let authenticity =
                Authenticity::from_index(rec[IQ_LEN * 4 + 1] as usize).ok_or_else(|| {
                    Error::Format(format!(
                        "record {i}: bad authenticity label {}",
                        rec[IQ_LEN * 4 + 1]
                    ))
                })?;
            samples.push(LabeledSample {
                sample,
                device,
                authenticity,
            });
        }
        Ok(Dataset::new(samples))
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, ds.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::decode(&bytes)
}

/// Convert a stream of interleaved `I, Q` little-endian `f32` values, 32
/// pairs per record, into records sharing one pair of labels.
pub fn from_raw_f32(
    bytes: &[u8],
    device: Device,
    authenticity: Authenticity,
) -> Result<Vec<LabeledSample>> {
    let record_bytes = IQ_LEN * 4;
    if !bytes.len().is_multiple_of(record_bytes) {
        return Err(Error::Format(format!(
            "raw stream of {} bytes is not a whole number of {record_bytes}-byte records",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(record_bytes)
        .map(|rec| {
            let pairs: Vec<Complex64> = rec
                .chunks_exact(8)
                .map(|p| {
                    let i = f32::from_le_bytes(p[..4].try_into().expect("4 bytes"));
                    let q = f32::from_le_bytes(p[4..].try_into().expect("4 bytes"));
                    Complex64::new(f64::from(i), f64::from(q))
                })
                .collect();
            Ok(LabeledSample {
                sample: IqSample::from_complex(&pairs)?,
                device,
                authenticity,
            })
        })
        .collect()
}

/// Legitimate records only: `per_device` noisy chirps for each profile.
pub fn generate_legitimate(
    cfg: &DatasetConfig,
    per_device: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    let chirp = synth_chirp(SAMPLE_LEN);
    let mut samples = Vec::with_capacity(2 * per_device);
    for device in Device::ALL {
        let mut rng = Rng::substream(seed, &format!("legit-{}", device.index() + 1));
        for _ in 0..per_device {
            let sample =
                apply_device_profile(&chirp, &cfg.devices[device.index()], Some(&mut rng))?;
            samples.push(LabeledSample {
                sample,
                device,
                authenticity: Authenticity::Legitimate,
            });
        }
    }
    Ok(samples)
}

/// Balanced dataset: `n_total / 4` records in each (device, authenticity)
/// cell, rogue cells spoofed from the legitimate ones.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let per_cell = cfg.n_total / 4;
    let legit = generate_legitimate(cfg, per_cell, seed)?;
    let rogue = spoof::spoof_rogues(&legit, cfg, per_cell, seed)?;
    let mut samples = legit;
    samples.extend(rogue);
    let mut ds = Dataset::new(samples);
    ds.meta.config_hash = Some(cfg.hash());
    ds.meta.seed = Some(seed);
    Ok(ds)
}

/// Seeded stratified split: each (device, authenticity) cell contributes
/// `round(n_cell * train_frac)` records to the training side.
pub fn split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_frac} outside (0, 1)"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut cells: [Vec<usize>; 4] = Default::default();
    for (i, s) in ds.samples.iter().enumerate() {
        cells[s.cell()].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for cell in &mut cells {
        rng.shuffle(cell);
        let n_train = (cell.len() as f64 * train_frac).round() as usize;
        train.extend_from_slice(&cell[..n_train]);
        test.extend_from_slice(&cell[n_train..]);
    }
    rng.shuffle(&mut train);
    rng.shuffle(&mut test);
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Mean of `value^2` over every component of every record.
pub fn mean_signal_power(ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Data("mean signal power of an empty dataset".into()));
    }
    Ok(ds.samples.iter().map(|s| s.sample.power()).sum::<f64>() / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(values: &[f64]) -> LabeledSample {
        LabeledSample {
            sample: IqSample::new(values).unwrap(),
            device: Device::Device1,
            authenticity: Authenticity::Legitimate,
        }
    }

    #[test]
    fn chirp_is_unit_modulus_and_starts_at_one() {
        let chirp = synth_chirp(32);
        assert!(chirp.iter().all(|s| (s.norm() - 1.0).abs() < 1e-12));
        assert_eq!(chirp[0], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn chirp_frequency_increases() {
        // Per-sample phase steps span (-pi, pi), so arg() needs no unwrapping.
        let chirp = synth_chirp(32);
        let freqs: Vec<f64> = chirp
            .windows(2)
            .map(|w| (w[1] * w[0].conj()).arg())
            .collect();
        assert!(freqs.windows(2).all(|f| f[1] > f[0]), "{freqs:?}");
    }

    #[test]
    fn identity_profile_reproduces_chirp() {
        let chirp = synth_chirp(32);
        let s = apply_device_profile(&chirp, &DeviceProfile::identity(), None).unwrap();
        let expected = IqSample::from_complex(&chirp).unwrap();
        assert_eq!(s, expected);
    }

    #[test]
    fn gain_scales_power_per_element() {
        let chirp = synth_chirp(32);
        let base = distort(&chirp, &DeviceProfile::identity(), None).unwrap();
        let ratios_at = |gain_db: f64| -> Vec<(f64, f64)> {
            let profile = DeviceProfile {
                gain_db,
                ..DeviceProfile::identity()
            };
            let s = distort(&chirp, &profile, None).unwrap();
            s.iter()
                .zip(&base)
                .flat_map(|(a, b)| [(a.re * a.re, b.re * b.re), (a.im * a.im, b.im * b.im)])
                .filter(|(_, b)| *b > 1e-6)
                .collect()
        };
        for (a, b) in ratios_at(20.0 * 2f64.log10()) {
            assert!((a / b - 4.0).abs() < 1e-9);
        }
        // 6.0206 dB is 4x only to about 1e-7.
        let nominal = 10f64.powf(0.60206);
        for (a, b) in ratios_at(6.0206) {
            assert!((a / b - nominal).abs() < 1e-9);
            assert!((a / b - 4.0).abs() < 1e-7);
        }
    }

    #[test]
    fn noise_is_seeded() {
        let chirp = synth_chirp(32);
        let p = DeviceProfile::device1();
        let a = apply_device_profile(&chirp, &p, Some(&mut Rng::new(5))).unwrap();
        let b = apply_device_profile(&chirp, &p, Some(&mut Rng::new(5))).unwrap();
        let c = apply_device_profile(&chirp, &p, Some(&mut Rng::new(6))).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn chirp_power_is_half_per_component() {
        let chirp = synth_chirp(32);
        let s = apply_device_profile(&chirp, &DeviceProfile::identity(), None).unwrap();
        let ds = Dataset::new(vec![LabeledSample {
            sample: s,
            device: Device::Device2,
            authenticity: Authenticity::Rogue,
        }]);
        assert!((mean_signal_power(&ds).unwrap() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn power_of_ones_and_scaling() {
        let ones = Dataset::new(vec![labeled(&[1.0; IQ_LEN]); 3]);
        assert_eq!(mean_signal_power(&ones).unwrap(), 1.0);
        let twos = Dataset::new(vec![labeled(&[2.0; IQ_LEN]); 3]);
        assert_eq!(mean_signal_power(&twos).unwrap(), 4.0);
        assert!(mean_signal_power(&Dataset::new(vec![])).is_err());
    }

    #[test]
    fn generation_rejects_indivisible_totals() {
        let cfg = DatasetConfig {
            n_total: 10,
            ..DatasetConfig::default()
        };
        assert!(matches!(generate_dataset(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn small_generation_is_balanced() {
        let cfg = DatasetConfig {
            n_total: 8,
            ..DatasetConfig::default()
        };
        let ds = generate_dataset(&cfg, 3).unwrap();
        assert_eq!(ds.counts(), [[2, 2], [2, 2]]);
        assert_eq!(ds.meta().seed, Some(3));
    }

    #[test]
    fn decode_rejects_bad_files() {
        let ds = Dataset::new(vec![labeled(&[0.5; IQ_LEN]); 2]);
        let mut bytes = ds.encode();
        assert!(matches!(
            Dataset::decode(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            Dataset::decode(&bytes[..10]),
            Err(Error::Format(_))
        ));
        let label_at = HEADER_LEN + IQ_LEN * 4;
        bytes[label_at] = 7;
        assert!(matches!(Dataset::decode(&bytes), Err(Error::Format(_))));
        let mut bytes = ds.encode();
        bytes[16] = 3; // count mismatch
        assert!(matches!(Dataset::decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn raw_converter_deinterleaves() {
        let mut raw = Vec::new();
        for t in 0..SAMPLE_LEN {
            raw.extend_from_slice(&(t as f32).to_le_bytes());
            raw.extend_from_slice(&(-(t as f32)).to_le_bytes());
        }
        let recs = from_raw_f32(&raw, Device::Device2, Authenticity::Rogue).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].sample.in_phase()[5], 5.0);
        assert_eq!(recs[0].sample.quadrature()[5], -5.0);
        assert_eq!(recs[0].device, Device::Device2);
        assert!(from_raw_f32(
            &raw[..raw.len() - 4],
            Device::Device1,
            Authenticity::Legitimate
        )
        .is_err());
    }
}
