//! Rogue-signal spoofing with a Gaussian kernel density estimate, and the
//! Jensen-Shannon divergence used to score how closely spoofed
//! constellations track the legitimate ones.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dataset::{Authenticity, DatasetConfig, Device, IqSample, LabeledSample};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_BANDWIDTH: f64 = 1e-3;

/// Gaussian KDE with a product kernel of per-dimension bandwidth `h`:
/// `f(x) = (1/n) sum_i prod_d N((x_d - x_{i,d}) / h) / h`.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    points: Vec<f64>,
    dim: usize,
    bandwidth: f64,
}

impl KdeModel {
    /// Fit on arbitrary-dimensional points (all of the same length).
    pub fn fit(points: &[Vec<f64>], bandwidth: f64) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::Data("KDE fit on an empty sample set".into()))?;
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!(
                "KDE bandwidth must be > 0, got {bandwidth}"
            )));
        }
        let dim = first.len();
        if dim == 0 {
            return Err(Error::Shape(
                "KDE points must have at least one dimension".into(),
            ));
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::Shape(format!(
                    "KDE point of length {} among {dim}-d points",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite KDE point".into()));
            }
            flat.extend_from_slice(p);
        }
        Ok(Self {
            points: flat,
            dim,
            bandwidth,
        })
    }

    pub fn n(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Natural log of the density, computed with log-sum-exp so that
    /// high-dimensional evaluations do not underflow.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "{}-d query for a {}-d KDE",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite KDE query".into()));
        }
        let h = self.bandwidth;
        let log_norm = -(self.dim as f64) * (h.ln() + 0.5 * (2.0 * PI).ln());
        let exps: Vec<f64> = self
            .points
            .chunks_exact(self.dim)
            .map(|p| {
                let sq: f64 = p.iter().zip(x).map(|(a, b)| (b - a) * (b - a)).sum();
                -0.5 * sq / (h * h)
            })
            .collect();
        let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = exps.iter().map(|e| (e - max).exp()).sum();
        Ok(log_norm + max + sum.ln() - (self.n() as f64).ln())
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_pdf(x)?.exp())
    }

    /// Exact draw: a uniformly chosen observation plus `N(0, h^2)` noise in every dimension.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let i = rng.index(self.n());
        self.point(i)
            .iter()
            .map(|v| v + self.bandwidth * rng.normal())
            .collect()
    }
}

/// Fit the 64-dimensional KDE over flattened I/Q records.
pub fn kde_fit(samples: &[IqSample], bandwidth: f64) -> Result<KdeModel> {
    let points: Vec<Vec<f64>> = samples.iter().map(|s| s.values().to_vec()).collect();
    KdeModel::fit(&points, bandwidth)
}

/// Power and phase deviation of a rogue transmitter relative to the device it imitates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RogueTransform {
    pub gain_offset_db: f64,
    /// Half-width of the uniform phase deviation.
    pub phase_max_rad: f64,
}

impl RogueTransform {
    /// Rogue 1 transmits more than 2 dB away from Device 1.
    pub fn rogue1() -> Self {
        Self {
            gain_offset_db: 2.5,
            phase_max_rad: PI / 30.0,
        }
    }

    /// Rogue 2 stays within 1 dB of Device 2.
    pub fn rogue2() -> Self {
        Self {
            gain_offset_db: 0.5,
            phase_max_rad: PI / 30.0,
        }
    }

    pub fn identity() -> Self {
        Self {
            gain_offset_db: 0.0,
            phase_max_rad: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gain_offset_db.is_finite()
            || !(self.phase_max_rad >= 0.0 && self.phase_max_rad.is_finite())
        {
            return Err(Error::Config(format!("invalid rogue transform {self:?}")));
        }
        Ok(())
    }

    /// Draw a phase in `[-phase_max, phase_max]` and apply it with the gain offset.
    pub fn apply(&self, x: &IqSample, rng: &mut Rng) -> Result<IqSample> {
        let theta = if self.phase_max_rad > 0.0 {
            rng.uniform_range(-self.phase_max_rad, self.phase_max_rad)
        } else {
            0.0
        };
        scale_and_rotate(x, self.gain_offset_db, theta)
    }
}

/// `x * 10^(gain_db/20)` rotated by `theta`:
/// `I' = I cos - Q sin`, `Q' = I sin + Q cos`.
pub fn scale_and_rotate(x: &IqSample, gain_db: f64, theta: f64) -> Result<IqSample> {
    let g = 10f64.powf(gain_db / 20.0);
    let (sin, cos) = theta.sin_cos();
    let mut values = [0.0; 64];
    let (i_out, q_out) = values.split_at_mut(32);
    for (t, (&i, &q)) in x.in_phase().iter().zip(x.quadrature()).enumerate() {
        i_out[t] = g * (i * cos - q * sin);
        q_out[t] = g * (i * sin + q * cos);
    }
    IqSample::new(&values)
}

pub fn rogue_transform(x: &IqSample, t: &RogueTransform, rng: &mut Rng) -> Result<IqSample> {
    t.apply(x, rng)
}

/// Rogue records for both devices: KDE fitted on each device's legitimate
/// records, sampled, then offset in power and phase.
pub fn spoof_rogues(
    legit: &[LabeledSample],
    cfg: &DatasetConfig,
    per_device: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::with_capacity(2 * per_device);
    for device in Device::ALL {
        let observed: Vec<IqSample> = legit
            .iter()
            .filter(|s| s.device == device && s.authenticity == Authenticity::Legitimate)
            .map(|s| s.sample)
            .collect();
        let model = kde_fit(&observed, cfg.kde_bandwidth)
            .map_err(|e| Error::Data(format!("spoofing {device:?}: {e}")))?;
        let mut kde_rng = Rng::substream(seed, &format!("kde-{}", device.index() + 1));
        let mut rogue_rng = Rng::substream(seed, &format!("rogue-{}", device.index() + 1));
        let transform = cfg.rogues[device.index()];
        for _ in 0..per_device {
            let draw = IqSample::new(&model.sample(&mut kde_rng))?;
            out.push(LabeledSample {
                sample: transform.apply(&draw, &mut rogue_rng)?,
                device,
                authenticity: Authenticity::Rogue,
            });
        }
    }
    Ok(out)
}

/// KDE draws (without rogue deviations) for fidelity scoring.
pub fn kde_draws(model: &KdeModel, n: usize, rng: &mut Rng) -> Result<Vec<IqSample>> {
    (0..n).map(|_| IqSample::new(&model.sample(rng))).collect()
}

/// Binning of the I/Q plane used to turn constellations into distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {
    pub bins_i: usize,
    pub bins_q: usize,
    /// Added to every bin before normalization.
    pub epsilon: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bins_i: 64,
            bins_q: 64,
            epsilon: 1e-12,
        }
    }
}

/// 2-D histogram of pooled `(I, Q)` points over a fixed rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub i_range: (f64, f64),
    pub q_range: (f64, f64),
    pub bins_i: usize,
    pub bins_q: usize,
    pub counts: Vec<u64>,
    pub epsilon: f64,
}

impl Histogram2D {
    pub fn new(cfg: &HistogramConfig, i_range: (f64, f64), q_range: (f64, f64)) -> Self {
        Self {
            i_range,
            q_range,
            bins_i: cfg.bins_i,
            bins_q: cfg.bins_q,
            counts: vec![0; cfg.bins_i * cfg.bins_q],
            epsilon: cfg.epsilon,
        }
    }

    fn bin(value: f64, (lo, hi): (f64, f64), bins: usize) -> usize {
        let pos = ((value - lo) / (hi - lo) * bins as f64).floor();
        (pos.max(0.0) as usize).min(bins - 1)
    }

    pub fn add(&mut self, i: f64, q: f64) {
        let bi = Self::bin(i, self.i_range, self.bins_i);
        let bq = Self::bin(q, self.q_range, self.bins_q);
        self.counts[bi * self.bins_q + bq] += 1;
    }

    pub fn add_samples(&mut self, samples: &[IqSample]) {
        for s in samples {
            for (&i, &q) in s.in_phase().iter().zip(s.quadrature()) {
                self.add(i, q);
            }
        }
    }

    /// Smoothed probabilities, summing to 1.
    pub fn normalized(&self) -> Vec<f64> {
        let total =
            self.counts.iter().sum::<u64>() as f64 + self.epsilon * self.counts.len() as f64;
        self.counts
            .iter()
            .map(|&c| (c as f64 + self.epsilon) / total)
            .collect()
    }
}

/// `KL(p || q)` in bits.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).log2())
        .sum()
}

/// `JSD(p, q) = (KL(p || m) + KL(q || m)) / 2` with `m = (p + q) / 2`, in bits.
pub fn jsd_from_distributions(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let value = 0.5 * (kl_divergence(p, &m) + kl_divergence(q, &m));
    value.clamp(0.0, 1.0)
}

fn joint_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Jensen-Shannon divergence (base 2, in `[0, 1]`) between the pooled
/// constellations of two record sets, binned over their joint range.
pub fn jsd(p_samples: &[IqSample], q_samples: &[IqSample], cfg: &HistogramConfig) -> Result<f64> {
    if p_samples.is_empty() || q_samples.is_empty() {
        return Err(Error::Data("JSD needs two non-empty sample sets".into()));
    }
    if cfg.bins_i == 0 || cfg.bins_q == 0 || cfg.epsilon.is_nan() || cfg.epsilon < 0.0 {
        return Err(Error::Config(format!("invalid histogram config {cfg:?}")));
    }
    let all = || p_samples.iter().chain(q_samples);
    let i_range = joint_range(all().flat_map(|s| s.in_phase().iter().copied()));
    let q_range = joint_range(all().flat_map(|s| s.quadrature().iter().copied()));
    let mut hp = Histogram2D::new(cfg, i_range, q_range);
    hp.add_samples(p_samples);
    let mut hq = Histogram2D::new(cfg, i_range, q_range);
    hq.add_samples(q_samples);
    Ok(jsd_from_distributions(&hp.normalized(), &hq.normalized()))
}
