//! Preprocessing of raw multivariate records: zero-phase Butterworth
//! filtering, boundary trimming, upward zero-crossing detection and cycle
//! alignment.

use std::collections::HashSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One subject's record, stored channel-major: `channels[j][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MultivariateSeries<S> {
    pub subject_id: String,
    pub channels: Vec<Vec<S>>,
    pub sample_rate_hz: f64,
    pub dim_names: Vec<String>,
}

impl<S: Scalar> MultivariateSeries<S> {
    pub fn new(
        subject_id: impl Into<String>,
        channels: Vec<Vec<S>>,
        sample_rate_hz: f64,
        dim_names: Vec<String>,
    ) -> Result<Self> {
        let series = Self {
            subject_id: subject_id.into(),
            channels,
            sample_rate_hz,
            dim_names,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::InvalidArgument("series has no dimensions".into()));
        }
        if self.dim_names.len() != self.channels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} dimension names for {} channels",
                self.dim_names.len(),
                self.channels.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &self.dim_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate dimension name {name:?}"
                )));
            }
        }
        let len = self.channels[0].len();
        if len < 2 {
            return Err(Error::InsufficientData(format!(
                "series has {len} frames, need at least 2"
            )));
        }
        for (j, ch) in self.channels.iter().enumerate() {
            if ch.len() != len {
                return Err(Error::InvalidArgument(format!(
                    "channel {j} has {} frames, expected {len}",
                    ch.len()
                )));
            }
            if ch.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "channel {j} contains non-finite values"
                )));
            }
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.channels[0].len()
    }

    pub fn n_dims(&self) -> usize {
        self.channels.len()
    }

    pub fn dim_index(&self, name: &str) -> Option<usize> {
        self.dim_names.iter().position(|n| n == name)
    }

    /// Keeps frames `start..end`.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.n_frames() || end < start + 2 {
            return Err(Error::InsufficientData(format!(
                "cannot keep frames {start}..{end} of a {}-frame series",
                self.n_frames()
            )));
        }
        Ok(Self {
            subject_id: self.subject_id.clone(),
            channels: self
                .channels
                .iter()
                .map(|c| c[start..end].to_vec())
                .collect(),
            sample_rate_hz: self.sample_rate_hz,
            dim_names: self.dim_names.clone(),
        })
    }

    /// Applies `f` to every channel.
    pub fn map_channels<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&[S]) -> Result<Vec<S>>,
    {
        let channels = self
            .channels
            .iter()
            .map(|c| f(c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            self.subject_id.clone(),
            channels,
            self.sample_rate_hz,
            self.dim_names.clone(),
        )
    }
}

/// A series cropped to start on a cycle boundary, with its estimated period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct AlignedSeries<S> {
    pub series: MultivariateSeries<S>,
    pub period_frames: f64,
    pub alignment_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass { cutoff_hz: f64 },
    Bandpass { low_hz: f64, high_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad<S> {
    b: [S; 3],
    // a[0] is 1
    a1: S,
    a2: S,
}

impl<S: Scalar> Biquad<S> {
    fn dc_gain(&self) -> S {
        (self.b[0] + self.b[1] + self.b[2]) / (S::one() + self.a1 + self.a2)
    }

    /// Transposed direct-form II state for a constant unit input at steady state.
    fn unit_step_state(&self) -> [S; 2] {
        let g = self.dc_gain();
        [g - self.b[0], self.b[2] - self.a2 * g]
    }
}

/// Butterworth IIR filter held as a cascade of second-order sections.
#[derive(Debug, Clone)]
pub struct Butterworth<S> {
    sections: Vec<Biquad<S>>,
    order: usize,
    digital_order: usize,
    max_pole_radius: f64,
    sample_rate_hz: f64,
}

impl<S: Scalar> Butterworth<S> {
    /// Designs the digital filter from the analog prototype of the given
    /// order through the bilinear transform with frequency pre-warping.
    /// A band-pass design has twice the prototype order.
    pub fn design(kind: FilterKind, sample_rate_hz: f64, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument(
                "filter order must be positive".into(),
            ));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        let nyquist = sample_rate_hz / 2.0;
        let check = |f: f64| {
            if f > 0.0 && f < nyquist {
                Ok(())
            } else {
                Err(Error::InvalidFrequency(format!(
                    "{f} Hz is outside (0, {nyquist}) Hz"
                )))
            }
        };
        let fs2 = 2.0 * sample_rate_hz;
        let warp = |f: f64| fs2 * (PI * f / sample_rate_hz).tan();

        let n = order as i64;
        let prototype: Vec<Complex64> = (0..order as i64)
            .map(|i| {
                let m = -n + 1 + 2 * i;
                -Complex64::from_polar(1.0, PI * m as f64 / (2.0 * n as f64))
            })
            .collect();

        let (analog_zeros, analog_poles, analog_gain, digital_zeros) = match kind {
            FilterKind::Lowpass { cutoff_hz } => {
                check(cutoff_hz)?;
                let wc = warp(cutoff_hz);
                let poles: Vec<Complex64> = prototype.iter().map(|p| p * wc).collect();
                (Vec::new(), poles, wc.powi(order as i32), vec![-1.0; order])
            }
            FilterKind::Bandpass { low_hz, high_hz } => {
                check(low_hz)?;
                check(high_hz)?;
                if low_hz >= high_hz {
                    return Err(Error::InvalidFrequency(format!(
                        "band edges must satisfy low < high, got {low_hz} and {high_hz}"
                    )));
                }
                let (wl, wh) = (warp(low_hz), warp(high_hz));
                let bw = wh - wl;
                let w0 = (wl * wh).sqrt();
                let mut poles = Vec::with_capacity(2 * order);
                for p in &prototype {
                    let half = p * (bw / 2.0);
                    let disc = (half * half - w0 * w0).sqrt();
                    poles.push(half + disc);
                    poles.push(half - disc);
                }
                let zeros = vec![Complex64::new(0.0, 0.0); order];
                // s = 0 maps to z = 1, the zeros at infinity to z = -1
                let dz = (0..2 * order)
                    .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
                    .collect();
                (zeros, poles, bw.powi(order as i32), dz)
            }
        };

        let fs2c = Complex64::new(fs2, 0.0);
        let num: Complex64 = analog_zeros.iter().map(|z| fs2c - z).product();
        let den: Complex64 = analog_poles.iter().map(|p| fs2c - p).product();
        let gain = analog_gain * (num / den).re;
        let digital_poles: Vec<Complex64> = analog_poles
            .iter()
            .map(|p| (fs2c + p) / (fs2c - p))
            .collect();

        let sections = pair_into_sections(&digital_poles, &digital_zeros, gain);
        Ok(Self {
            sections: sections
                .into_iter()
                .map(|(b, a)| Biquad {
                    b: [S::lit(b[0]), S::lit(b[1]), S::lit(b[2])],
                    a1: S::lit(a[0]),
                    a2: S::lit(a[1]),
                })
                .collect(),
            order,
            digital_order: digital_poles.len(),
            max_pole_radius: digital_poles.iter().map(|p| p.norm()).fold(0.0, f64::max),
            sample_rate_hz,
        })
    }

    pub fn digital_order(&self) -> usize {
        self.digital_order
    }

    /// Reflective padding applied at each end by [`Self::filtfilt`]: three times the order.
    pub fn pad_len(&self) -> usize {
        3 * self.order
    }

    /// Samples needed for the slowest pole to decay by a factor of 1000.
    pub fn decay_len(&self) -> usize {
        let r = self.max_pole_radius;
        if r <= 0.0 {
            return 1;
        }
        ((1e-3f64).ln() / r.ln()).ceil().max(1.0) as usize
    }

    /// Single-pass magnitude response `|H(e^{iω})|` at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let zi = Complex64::from_polar(1.0, -w);
        let zi2 = zi * zi;
        self.sections
            .iter()
            .map(|s| {
                let num = s.b[0].as_f64() + zi * s.b[1].as_f64() + zi2 * s.b[2].as_f64();
                let den = 1.0 + zi * s.a1.as_f64() + zi2 * s.a2.as_f64();
                (num / den).norm()
            })
            .product()
    }

    /// Causal single pass from a zero state.
    pub fn filter(&self, x: &[S]) -> Vec<S> {
        self.run(x, None)
    }

    /// Causal single pass started at the steady state of a constant input `x[0]`.
    pub fn filter_steady(&self, x: &[S]) -> Vec<S> {
        let Some(&x0) = x.first() else {
            return Vec::new();
        };
        let mut state = Vec::with_capacity(self.sections.len());
        let mut scale = S::one();
        for sec in &self.sections {
            let zi = sec.unit_step_state();
            state.push([zi[0] * scale * x0, zi[1] * scale * x0]);
            scale *= sec.dc_gain();
        }
        self.run(x, Some(&state))
    }

    /// Transposed direct form II cascade from the given per-section state.
    fn run(&self, x: &[S], state: Option<&[[S; 2]]>) -> Vec<S> {
        let mut out = x.to_vec();
        for (idx, sec) in self.sections.iter().enumerate() {
            let [mut z1, mut z2] = state.map_or([S::zero(); 2], |st| st[idx]);
            for v in out.iter_mut() {
                let input = *v;
                let y = sec.b[0] * input + z1;
                z1 = sec.b[1] * input - sec.a1 * y + z2;
                z2 = sec.b[2] * input - sec.a2 * y;
                *v = y;
            }
        }
        out
    }

    /// Zero-phase forward-backward filtering.
    ///
    /// Both ends are extended by odd reflection over [`Self::pad_len`] samples
    /// and each pass starts from the steady state of its first sample.
    /// Forward-first and backward-first orderings are averaged.
    pub fn filtfilt(&self, x: &[S]) -> Result<Vec<S>> {
        let n = x.len();
        let pad = self.pad_len();
        if n <= pad {
            return Err(Error::InsufficientData(format!(
                "zero-phase filtering needs more than {pad} samples, got {n}"
            )));
        }
        let two = S::lit(2.0);
        let (first, last) = (x[0], x[n - 1]);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|j| two * first - x[j]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|j| two * last - x[n - 1 - j]));
        Ok(self.filtfilt_extended(&ext, pad, n))
    }

    /// Zero-phase filtering with both ends extended by whole periods of
    /// `period` samples copied from the record itself. For a periodic input
    /// the extension continues the signal, so edge transients vanish.
    /// Falls back to [`Self::filtfilt`] when the record holds less than two periods.
    pub fn filtfilt_periodic(&self, x: &[S], period: usize) -> Result<Vec<S>> {
        let n = x.len();
        let mut cycles = if period == 0 {
            0
        } else {
            self.decay_len().div_ceil(period)
        };
        while cycles > 0 && cycles * period >= n {
            cycles -= 1;
        }
        if cycles == 0 {
            return self.filtfilt(x);
        }
        let pad = cycles * period;
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|j| x[j.div_ceil(period) * period - j]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|j| x[n - 1 + j - j.div_ceil(period) * period]));
        Ok(self.filtfilt_extended(&ext, pad, n))
    }

    /// Mean of the forward-backward and backward-forward passes over the
    /// extended record, which makes the result exactly symmetric under time
    /// reversal.
    fn filtfilt_extended(&self, ext: &[S], pad: usize, n: usize) -> Vec<S> {
        let forward_first = self.forward_backward(ext);
        let mut rev = ext.to_vec();
        rev.reverse();
        let mut backward_first = self.forward_backward(&rev);
        backward_first.reverse();
        let half = S::lit(0.5);
        forward_first[pad..pad + n]
            .iter()
            .zip(&backward_first[pad..pad + n])
            .map(|(&a, &b)| (a + b) * half)
            .collect()
    }

    fn forward_backward(&self, x: &[S]) -> Vec<S> {
        let mut y = self.filter_steady(x);
        y.reverse();
        let mut y = self.filter_steady(&y);
        y.reverse();
        y
    }
}

type Section = ([f64; 3], [f64; 2]);

fn pair_into_sections(poles: &[Complex64], zeros: &[f64], gain: f64) -> Vec<Section> {
    let scale = poles.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let tol = 1e-10 * scale;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > tol).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= tol)
        .map(|p| p.re)
        .collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(|a, b| a.total_cmp(b));

    let mut denominators: Vec<[f64; 2]> = complex
        .iter()
        .map(|p| [-2.0 * p.re, p.norm_sqr()])
        .collect();
    for pair in real.chunks(2) {
        match pair {
            [p, q] => denominators.push([-(p + q), p * q]),
            [p] => denominators.push([-p, 0.0]),
            _ => unreachable!(),
        }
    }

    let mut zeros = zeros.iter().copied();
    denominators
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let order = if a[1] == 0.0 { 1 } else { 2 };
            let mut b = [1.0, 0.0, 0.0];
            let z1 = zeros.next().unwrap_or(-1.0);
            if order == 1 {
                b[1] = -z1;
            } else {
                let z2 = zeros.next().unwrap_or(-1.0);
                b[1] = -(z1 + z2);
                b[2] = z1 * z2;
            }
            if i == 0 {
                b.iter_mut().for_each(|v| *v *= gain);
            }
            (b, a)
        })
        .collect()
}

/// Zero-phase Butterworth filtering of one sequence.
pub fn butterworth_filter<S: Scalar>(
    x: &[S],
    sample_rate_hz: f64,
    kind: FilterKind,
    order: usize,
) -> Result<Vec<S>> {
    Butterworth::design(kind, sample_rate_hz, order)?.filtfilt(x)
}

/// Number of frames removed at each end for a trim of `trim_seconds`.
pub fn trim_frames(trim_seconds: f64, sample_rate_hz: f64) -> usize {
    // the nudge keeps k/fs seconds from flooring to k - 1 frames
    (trim_seconds * sample_rate_hz + 1e-9).floor() as usize
}

/// Drops `⌊trim_seconds · fs⌋` frames from both ends.
pub fn trim_boundaries<S: Scalar>(
    series: &MultivariateSeries<S>,
    trim_seconds: f64,
) -> Result<MultivariateSeries<S>> {
    if !(trim_seconds >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "negative trim {trim_seconds}"
        )));
    }
    let t = series.n_frames();
    if 2.0 * trim_seconds * series.sample_rate_hz >= t as f64 {
        return Err(Error::InsufficientData(format!(
            "trimming {trim_seconds} s at each end of a {t}-frame record leaves nothing"
        )));
    }
    let k = trim_frames(trim_seconds, series.sample_rate_hz);
    series.slice_frames(k, t - k)
}

/// Upward zero crossings of the band-passed signal and the mean gap between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleDetection {
    pub crossings: Vec<usize>,
    pub period_frames: f64,
}

pub const CYCLE_BAND_HZ: (f64, f64) = (0.1, 1.0);
pub const CYCLE_FILTER_ORDER: usize = 2;

/// Band-pass used to find cycle boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleBand {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
}

impl Default for CycleBand {
    fn default() -> Self {
        Self {
            low_hz: CYCLE_BAND_HZ.0,
            high_hz: CYCLE_BAND_HZ.1,
            order: CYCLE_FILTER_ORDER,
        }
    }
}

/// Upward crossings of an already filtered sequence.
///
/// Frame `t ≥ 1` is a crossing when `f(t-1) < 0 ≤ f(t)`. Frame 0 is one when
/// `f(0) ≥ 0` and the linear extrapolation `2f(0) - f(1)` is negative.
/// Values within `tol` of zero count as exactly zero.
pub fn upward_crossings<S: Scalar>(filtered: &[S], tol: S) -> Vec<usize> {
    let snap = |v: S| if v.abs() <= tol { S::zero() } else { v };
    let f: Vec<S> = filtered.iter().map(|&v| snap(v)).collect();
    let mut out = Vec::new();
    if f.len() >= 2 && f[0] >= S::zero() && f[0] + f[0] - f[1] < S::zero() {
        out.push(0);
    }
    out.extend((1..f.len()).filter(|&t| f[t - 1] < S::zero() && f[t] >= S::zero()));
    out
}

/// Least-squares linear trend removed from `x`.
pub fn detrend<S: Scalar>(x: &[S]) -> Vec<S> {
    let n = x.len();
    if n < 2 {
        return vec![S::zero(); n];
    }
    let nf = S::from_usize_lossy(n);
    let t_mean = S::from_usize_lossy(n - 1) / S::lit(2.0);
    let x_mean = x.iter().copied().sum::<S>() / nf;
    let (mut sxy, mut sxx) = (S::zero(), S::zero());
    for (t, &v) in x.iter().enumerate() {
        let dt = S::from_usize_lossy(t) - t_mean;
        sxy += dt * (v - x_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    x.iter()
        .enumerate()
        .map(|(t, &v)| v - x_mean - slope * (S::from_usize_lossy(t) - t_mean))
        .collect()
}

/// Band-passes `x` (0.1 to 1 Hz, order 2, zero phase) and locates cycle starts.
///
/// The record is detrended (the band-pass blocks constants and ramps
/// anyway). A first reflective-padded pass gives a rough period, and the
/// crossings are then read off a second pass whose edges are extended by
/// whole rough periods, which keeps edge crossings within a frame or two.
pub fn detect_cycles<S: Scalar>(x: &[S], sample_rate_hz: f64) -> Result<CycleDetection> {
    detect_cycles_in_band(x, sample_rate_hz, CycleBand::default())
}

/// [`detect_cycles`] with a caller-chosen band-pass.
pub fn detect_cycles_in_band<S: Scalar>(
    x: &[S],
    sample_rate_hz: f64,
    band: CycleBand,
) -> Result<CycleDetection> {
    let filter = Butterworth::design(
        FilterKind::Bandpass {
            low_hz: band.low_hz,
            high_hz: band.high_hz,
        },
        sample_rate_hz,
        band.order,
    )?;
    let scale = x.iter().fold(S::zero(), |m, v| m.max(v.abs()));
    let tol = S::epsilon().sqrt() * S::lit(0.01) * scale;
    let detrended = detrend(x);

    let rough = upward_crossings(&filter.filtfilt(&detrended)?, tol);
    if rough.len() < 2 {
        return Err(Error::NoPeriod);
    }
    let rough_period = mean_gap(&rough).round() as usize;
    let crossings = upward_crossings(&filter.filtfilt_periodic(&detrended, rough_period)?, tol);
    if crossings.len() < 2 {
        return Err(Error::NoPeriod);
    }
    let period_frames = mean_gap(&crossings);
    Ok(CycleDetection {
        crossings,
        period_frames,
    })
}

fn mean_gap(crossings: &[usize]) -> f64 {
    (crossings[crossings.len() - 1] - crossings[0]) as f64 / (crossings.len() - 1) as f64
}

/// Fraction of a period within which a first crossing near one full period
/// is read as a cycle start hidden at frame 0.
pub const EDGE_MARGIN: f64 = 0.05;

/// Crops every channel so that frame 0 is a cycle start of `alignment_dim`.
///
/// Cropping changes the filter's boundary conditions, so detection is
/// repeated on the cropped record. It stops once the first crossing is at
/// frame 0, or at least `(1 - EDGE_MARGIN)` periods in (the start is then
/// at frame 0 but masked by the edge). The result is a fixed point, so
/// aligning it again is a no-op.
pub fn align_to_cycle_start<S: Scalar>(
    series: &MultivariateSeries<S>,
    alignment_dim: usize,
) -> Result<AlignedSeries<S>> {
    align_to_cycle_start_in_band(series, alignment_dim, CycleBand::default())
}

/// [`align_to_cycle_start`] with a caller-chosen band-pass.
pub fn align_to_cycle_start_in_band<S: Scalar>(
    series: &MultivariateSeries<S>,
    alignment_dim: usize,
    band: CycleBand,
) -> Result<AlignedSeries<S>> {
    if alignment_dim >= series.n_dims() {
        return Err(Error::InvalidArgument(format!(
            "alignment dimension {alignment_dim} out of range for {} dimensions",
            series.n_dims()
        )));
    }
    let mut current = series.clone();
    loop {
        let det = detect_cycles_in_band(
            &current.channels[alignment_dim],
            current.sample_rate_hz,
            band,
        )?;
        let first = det.crossings[0];
        if first == 0 || first as f64 >= det.period_frames * (1.0 - EDGE_MARGIN) {
            return Ok(AlignedSeries {
                series: current,
                period_frames: det.period_frames,
                alignment_dim,
            });
        }
        current = current.slice_frames(first, current.n_frames())?;
    }
}
