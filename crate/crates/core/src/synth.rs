//! Labeled synthetic ventilation waveforms.
//!
//! Each breath is an inspiratory lobe (flow `>= 0`, starting at exactly 0)
//! followed by an expiratory lobe (flow `< 0`). Noise never flips the sign of
//! a phase, so a concatenated record has exactly one negative-to-non-negative
//! flow crossing per breath and the ground-truth annotations coincide with
//! what zero-crossing segmentation finds.
//!
//! Shapes per class:
//!
//! - Spontaneous: half-sine inspiration, pressure stays near PEEP with a small
//!   dip while the patient inhales.
//! - Mechanical: pressure rises to PIP together with flow onset, holds a
//!   rounded-square plateau and relaxes to PEEP during expiration.
//! - Triggered: a weak patient-effort flow ramp, then the ventilator rise
//!   delayed by `trigger_lead_ms`.
//! - Artefact: short, low-amplitude flow oscillation around zero with
//!   band-limited noise on both channels.
//! - Unclassifiable: a random convex mixture of two of the other shapes.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform_io::{
    AnnotationEntry, AnnotationSet, BreathClass, WaveformError, WaveformRecord,
    DEFAULT_SAMPLE_RATE_HZ,
};

/// Values are rounded to this step so CSV output is compact and exact.
const QUANTUM: f64 = 1e-4;
/// Expiratory flow is never closer to zero than this.
const EXPIRATORY_FLOOR: f64 = -QUANTUM;
/// Lead-in and lead-out around the breath train.
const EDGE_MS: f64 = 200.0;
/// Patient-effort flow before a triggered breath, as a fraction of peak flow.
const TRIGGER_EFFORT: f64 = 0.15;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Waveform(#[from] WaveformError),
}

/// Parameters of one generated breath.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreathTemplate {
    pub class: BreathClass,
    pub duration_ms: f64,
    pub sample_rate_hz: f64,
    /// Peak inspiratory flow, mL/s.
    pub peak_flow: f64,
    /// mbar
    pub peep: f64,
    /// mbar
    pub pip: f64,
    /// Ventilator delay after flow onset; only used by triggered breaths.
    pub trigger_lead_ms: f64,
    /// Share of the breath spent inspiring.
    pub inspiratory_fraction: f64,
    pub noise_sd: f64,
}

impl BreathTemplate {
    pub fn samples(&self) -> usize {
        (self.duration_ms * self.sample_rate_hz / 1000.0).round() as usize
    }

    fn inspiratory_samples(&self) -> usize {
        let n = self.samples();
        ((n as f64 * self.inspiratory_fraction).round() as usize).clamp(1, n - 1)
    }

    pub fn trigger_lead_samples(&self) -> usize {
        (self.trigger_lead_ms * self.sample_rate_hz / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::InvalidTemplate(m));
        let finite = [
            self.duration_ms,
            self.sample_rate_hz,
            self.peak_flow,
            self.peep,
            self.pip,
            self.trigger_lead_ms,
            self.inspiratory_fraction,
            self.noise_sd,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("non-finite parameter".into());
        }
        if self.duration_ms <= 0.0 || self.sample_rate_hz <= 0.0 {
            return fail("duration and sample rate must be positive".into());
        }
        if self.samples() < 2 {
            return fail(format!("{} ms is shorter than two samples", self.duration_ms));
        }
        if self.peak_flow <= 0.0 {
            return fail(format!("peak_flow must be positive, got {}", self.peak_flow));
        }
        if !(self.inspiratory_fraction > 0.0 && self.inspiratory_fraction < 1.0) {
            return fail(format!(
                "inspiratory_fraction must lie in (0, 1), got {}",
                self.inspiratory_fraction
            ));
        }
        if self.noise_sd < 0.0 || self.trigger_lead_ms < 0.0 {
            return fail("noise_sd and trigger_lead_ms must be non-negative".into());
        }
        let ventilated = matches!(
            self.class,
            BreathClass::Mechanical | BreathClass::Triggered | BreathClass::Unclassifiable
        );
        if ventilated && self.pip < self.peep {
            return fail(format!("pip {} is below peep {}", self.pip, self.peep));
        }
        if self.class == BreathClass::Triggered
            && self.trigger_lead_samples() + 1 >= self.inspiratory_samples()
        {
            return fail(format!(
                "trigger lead of {} ms does not fit the inspiration",
                self.trigger_lead_ms
            ));
        }
        Ok(())
    }
}

/// Moving-average filtered Gaussian noise with standard deviation `sd`.
fn band_limited(n: usize, sd: f64, width: usize, rng: &mut impl Rng) -> Vec<f64> {
    if sd == 0.0 || n == 0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, sd).expect("sd is finite and positive");
    let white: Vec<f64> = (0..n + width).map(|_| normal.sample(rng)).collect();
    let scale = (width as f64).sqrt() / width as f64;
    (0..n)
        .map(|i| white[i..i + width].iter().sum::<f64>() * scale)
        .collect()
}

/// Half-sine inspiration of `n_insp` samples followed by an exponentially
/// decaying expiration that returns the inspired volume.
fn flow_shape(n: usize, n_insp: usize, peak: f64) -> Vec<f64> {
    let n_exp = n - n_insp;
    let tau = (n_exp as f64 / 4.0).max(0.5);
    let inspired: f64 = (0..n_insp)
        .map(|i| (PI * i as f64 / n_insp as f64).sin())
        .sum::<f64>()
        * peak;
    let decay: f64 = (0..n_exp).map(|j| (-(j as f64) / tau).exp()).sum();
    let amp = inspired / decay;
    (0..n)
        .map(|i| {
            if i < n_insp {
                peak * (PI * i as f64 / n_insp as f64).sin()
            } else {
                -amp * (-((i - n_insp) as f64) / tau).exp()
            }
        })
        .collect()
}

/// Ventilator pressure: raised-cosine rise starting at `onset`, PIP plateau to
/// the end of inspiration, exponential relaxation to PEEP afterwards.
fn ventilator_pressure(t: &BreathTemplate, n: usize, n_insp: usize, onset: usize) -> Vec<f64> {
    let delta = t.pip - t.peep;
    let rise = ((n_insp - onset) / 3).max(1);
    let tau = ((n - n_insp) as f64 / 6.0).max(0.5);
    (0..n)
        .map(|i| {
            let level = if i < onset {
                0.0
            } else if i < onset + rise {
                0.5 * (1.0 - (PI * (i - onset + 1) as f64 / rise as f64).cos())
            } else if i < n_insp {
                1.0
            } else {
                (-((i - n_insp + 1) as f64) / tau).exp()
            };
            t.peep + delta * level
        })
        .collect()
}

/// Noise-free morphology of a single class, except for artefacts whose
/// irregularity is part of the shape.
fn shape(
    class: BreathClass,
    t: &BreathTemplate,
    n: usize,
    n_insp: usize,
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<f64>) {
    match class {
        BreathClass::Spontaneous => {
            let flow = flow_shape(n, n_insp, t.peak_flow);
            let dip = rng.random_range(0.2..=1.0);
            let n_exp = n - n_insp;
            let pressure = (0..n)
                .map(|i| {
                    if i < n_insp {
                        t.peep - dip * (PI * i as f64 / n_insp as f64).sin()
                    } else {
                        t.peep + 0.3 * dip * (PI * (i - n_insp) as f64 / n_exp as f64).sin()
                    }
                })
                .collect();
            (flow, pressure)
        }
        BreathClass::Mechanical => (
            flow_shape(n, n_insp, t.peak_flow),
            ventilator_pressure(t, n, n_insp, 0),
        ),
        BreathClass::Triggered => {
            let lead = t.trigger_lead_samples().min(n_insp.saturating_sub(2));
            let mut flow = flow_shape(n, n_insp, t.peak_flow);
            let span = (n_insp - lead) as f64;
            for (i, f) in flow.iter_mut().enumerate().take(n_insp) {
                *f = if i < lead {
                    t.peak_flow * TRIGGER_EFFORT * i as f64 / lead as f64
                } else {
                    let u = (i - lead) as f64 / span;
                    t.peak_flow * (TRIGGER_EFFORT * (1.0 - u) + (1.0 - TRIGGER_EFFORT) * (PI * u).sin())
                };
            }
            (flow, ventilator_pressure(t, n, n_insp, lead))
        }
        BreathClass::Artefact => {
            let wobble = band_limited(n, 0.5 * t.peak_flow, 5, rng);
            let flow = flow_shape(n, n_insp, t.peak_flow)
                .into_iter()
                .zip(wobble)
                .map(|(f, w)| f + w)
                .collect();
            let pressure = band_limited(n, 0.4, 9, rng)
                .into_iter()
                .map(|w| t.peep + w)
                .collect();
            (flow, pressure)
        }
        BreathClass::Unclassifiable => {
            let pool = [
                BreathClass::Spontaneous,
                BreathClass::Mechanical,
                BreathClass::Triggered,
                BreathClass::Artefact,
            ];
            let a = rng.random_range(0..pool.len());
            let b = (a + rng.random_range(1..pool.len())) % pool.len();
            let w = rng.random_range(0.3..=0.7);
            let (fa, pa) = shape(pool[a], t, n, n_insp, rng);
            let (fb, pb) = shape(pool[b], t, n, n_insp, rng);
            let mix = |x: Vec<f64>, y: Vec<f64>| -> Vec<f64> {
                x.iter().zip(&y).map(|(x, y)| w * x + (1.0 - w) * y).collect()
            };
            (mix(fa, fb), mix(pa, pb))
        }
    }
}

fn quantize(v: f64) -> f64 {
    (v / QUANTUM).round() * QUANTUM
}

/// Generates one breath. Flow is `>= 0` on the inspiratory samples (with
/// `flow[0] == 0` before noise) and `< 0` on the expiratory ones.
pub fn generate_breath(
    template: &BreathTemplate,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>), SynthError> {
    template.validate()?;
    let n = template.samples();
    let n_insp = template.inspiratory_samples();
    let (mut flow, mut pressure) = shape(template.class, template, n, n_insp, rng);
    if template.noise_sd > 0.0 {
        let normal = Normal::new(0.0, template.noise_sd).expect("validated noise sd");
        for v in flow.iter_mut().chain(pressure.iter_mut()) {
            *v += normal.sample(rng);
        }
    }
    for (i, f) in flow.iter_mut().enumerate() {
        let q = quantize(*f);
        *f = if i < n_insp { q.max(0.0) } else { q.min(EXPIRATORY_FLOOR) };
    }
    for p in &mut pressure {
        *p = quantize(*p);
    }
    Ok((flow, pressure))
}

/// Inclusive `[low, high]` range of a drawn parameter.
pub type Range = [f64; 2];

fn draw(range: Range, rng: &mut impl Rng) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

/// Parameter ranges for one class. Fields missing from a profile table fall
/// back to the breath defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassRanges {
    pub duration_ms: Range,
    pub peak_flow: Range,
    pub pip: Range,
    pub trigger_lead_ms: Range,
    pub inspiratory_fraction: Range,
    pub noise_sd: Range,
}

impl Default for ClassRanges {
    fn default() -> Self {
        Self {
            duration_ms: [500.0, 2500.0],
            peak_flow: [20.0, 60.0],
            pip: [15.0, 25.0],
            trigger_lead_ms: [100.0, 200.0],
            inspiratory_fraction: [0.3, 0.45],
            noise_sd: [0.0, 0.3],
        }
    }
}

impl ClassRanges {
    pub fn artefact() -> Self {
        Self {
            duration_ms: [300.0, 1000.0],
            peak_flow: [2.0, 8.0],
            ..Self::default()
        }
    }

    fn validate(&self, class: BreathClass) -> Result<(), SynthError> {
        let named = [
            ("duration_ms", self.duration_ms),
            ("peak_flow", self.peak_flow),
            ("pip", self.pip),
            ("trigger_lead_ms", self.trigger_lead_ms),
            ("inspiratory_fraction", self.inspiratory_fraction),
            ("noise_sd", self.noise_sd),
        ];
        for (name, [lo, hi]) in named {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(SynthError::InvalidProfile(format!(
                    "{class}.{name}: [{lo}, {hi}] is not a range"
                )));
            }
        }
        Ok(())
    }
}

/// Per-class probabilities of a generated breath.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassMix {
    pub artefact: f64,
    pub spontaneous: f64,
    pub mechanical: f64,
    pub triggered: f64,
    pub unclassifiable: f64,
}

impl Default for ClassMix {
    fn default() -> Self {
        Self {
            artefact: 0.1,
            spontaneous: 0.3,
            mechanical: 0.3,
            triggered: 0.25,
            unclassifiable: 0.05,
        }
    }
}

impl ClassMix {
    pub fn one_hot(class: BreathClass) -> Self {
        let mut p = [0.0; BreathClass::COUNT];
        p[class.index()] = 1.0;
        Self::from_array(p)
    }

    pub fn from_array(p: [f64; BreathClass::COUNT]) -> Self {
        Self {
            artefact: p[0],
            spontaneous: p[1],
            mechanical: p[2],
            triggered: p[3],
            unclassifiable: p[4],
        }
    }

    /// Probabilities indexed by class code.
    pub fn as_array(&self) -> [f64; BreathClass::COUNT] {
        [
            self.artefact,
            self.spontaneous,
            self.mechanical,
            self.triggered,
            self.unclassifiable,
        ]
    }
}

/// Everything needed to generate one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordProfile {
    pub record_id: String,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub breaths_per_minute: f64,
    /// Drawn once per record.
    pub peep: Range,
    pub class_mix: ClassMix,
    pub artefact: ClassRanges,
    pub spontaneous: ClassRanges,
    pub mechanical: ClassRanges,
    pub triggered: ClassRanges,
    pub unclassifiable: ClassRanges,
}

impl Default for RecordProfile {
    fn default() -> Self {
        Self {
            record_id: "synth".into(),
            seed: 0,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            breaths_per_minute: 40.0,
            peep: [4.0, 6.0],
            class_mix: ClassMix::default(),
            artefact: ClassRanges::artefact(),
            spontaneous: ClassRanges::default(),
            mechanical: ClassRanges::default(),
            triggered: ClassRanges::default(),
            unclassifiable: ClassRanges::default(),
        }
    }
}

impl RecordProfile {
    pub fn ranges(&self, class: BreathClass) -> &ClassRanges {
        match class {
            BreathClass::Artefact => &self.artefact,
            BreathClass::Spontaneous => &self.spontaneous,
            BreathClass::Mechanical => &self.mechanical,
            BreathClass::Triggered => &self.triggered,
            BreathClass::Unclassifiable => &self.unclassifiable,
        }
    }

    pub fn ranges_mut(&mut self, class: BreathClass) -> &mut ClassRanges {
        match class {
            BreathClass::Artefact => &mut self.artefact,
            BreathClass::Spontaneous => &mut self.spontaneous,
            BreathClass::Mechanical => &mut self.mechanical,
            BreathClass::Triggered => &mut self.triggered,
            BreathClass::Unclassifiable => &mut self.unclassifiable,
        }
    }

    /// Sets every class's noise range.
    pub fn with_noise(mut self, noise_sd: Range) -> Self {
        for c in BreathClass::ALL {
            self.ranges_mut(c).noise_sd = noise_sd;
        }
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::InvalidProfile(m));
        let mix = self.class_mix.as_array();
        if mix.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return fail(format!("class_mix entries must be non-negative, got {mix:?}"));
        }
        let total: f64 = mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return fail(format!("class_mix sums to {total}, expected 1"));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return fail(format!("sample_rate_hz must be positive, got {}", self.sample_rate_hz));
        }
        if !(self.breaths_per_minute > 0.0 && self.breaths_per_minute.is_finite()) {
            return fail(format!(
                "breaths_per_minute must be positive, got {}",
                self.breaths_per_minute
            ));
        }
        if !(self.peep[0].is_finite() && self.peep[0] <= self.peep[1]) {
            return fail(format!("peep: {:?} is not a range", self.peep));
        }
        for c in BreathClass::ALL {
            self.ranges(c).validate(c)?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let profile: Self = toml::from_str(text).map_err(|e| SynthError::Config {
            path: "<profile>".into(),
            message: e.to_string(),
        })?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile is plain data")
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(|e| SynthError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            SynthError::Config { message, .. } => SynthError::Config {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    /// Draws a template for `class` with a fixed length and PEEP.
    fn template(
        &self,
        class: BreathClass,
        samples: usize,
        peep: f64,
        rng: &mut impl Rng,
    ) -> BreathTemplate {
        let r = self.ranges(class);
        let mut t = BreathTemplate {
            class,
            duration_ms: samples as f64 * 1000.0 / self.sample_rate_hz,
            sample_rate_hz: self.sample_rate_hz,
            peak_flow: draw(r.peak_flow, rng),
            peep,
            pip: draw(r.pip, rng).max(peep),
            trigger_lead_ms: draw(r.trigger_lead_ms, rng),
            inspiratory_fraction: draw(r.inspiratory_fraction, rng),
            noise_sd: draw(r.noise_sd, rng),
        };
        if class == BreathClass::Triggered {
            // Short breaths cannot hold the full lead; shrink it to fit.
            let n_insp = t.inspiratory_samples();
            let max_lead = n_insp.saturating_sub(2);
            if t.trigger_lead_samples() > max_lead {
                t.trigger_lead_ms = max_lead as f64 * 1000.0 / self.sample_rate_hz;
            }
        }
        t
    }
}

/// Generates a record of `duration_s` seconds and its ground-truth labels.
///
/// The breath train is framed by a short expiratory lead-in and an
/// inspiratory lead-out, so every annotated breath starts and ends on a
/// zero crossing. Breath lengths are drawn from the class ranges and then
/// scaled together so the train fills the record exactly.
pub fn generate_record(
    profile: &RecordProfile,
    duration_s: f64,
) -> Result<(WaveformRecord, AnnotationSet), SynthError> {
    profile.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(SynthError::InvalidProfile(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    let fs = profile.sample_rate_hz;
    let total = (duration_s * fs).round() as usize;
    let edge = ((EDGE_MS * fs / 1000.0).round() as usize).max(2);
    let n_breaths = (duration_s * profile.breaths_per_minute / 60.0).round() as usize;
    let available = total.saturating_sub(2 * edge);
    if n_breaths == 0 || available < 4 * n_breaths {
        return Err(SynthError::InvalidProfile(format!(
            "{duration_s} s cannot hold {n_breaths} breaths"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let peep = draw(profile.peep, &mut rng);
    let weights = WeightedIndex::new(profile.class_mix.as_array())
        .map_err(|e| SynthError::InvalidProfile(format!("class_mix: {e}")))?;
    let labels: Vec<BreathClass> = (0..n_breaths)
        .map(|_| BreathClass::ALL[weights.sample(&mut rng)])
        .collect();
    let raw: Vec<f64> = labels
        .iter()
        .map(|&c| draw(profile.ranges(c).duration_ms, &mut rng))
        .collect();
    let scale = available as f64 / raw.iter().sum::<f64>();
    let mut bounds = Vec::with_capacity(n_breaths + 1);
    let mut acc = 0.0;
    bounds.push(edge);
    for r in &raw {
        acc += r;
        bounds.push(edge + (acc * scale).round() as usize);
    }
    *bounds.last_mut().expect("at least one breath") = edge + available;
    if bounds.windows(2).any(|w| w[1] - w[0] < 4) {
        return Err(SynthError::InvalidProfile(format!(
            "{duration_s} s at {} breaths/min leaves breaths under 4 samples",
            profile.breaths_per_minute
        )));
    }

    let mut flow = Vec::with_capacity(total);
    let mut pressure = Vec::with_capacity(total);
    let lead_in_amp = draw(profile.spontaneous.peak_flow, &mut rng) * 0.05;
    for i in 0..edge {
        let decay = (-(i as f64) / edge as f64).exp();
        flow.push(quantize(-lead_in_amp * decay).min(EXPIRATORY_FLOOR));
        pressure.push(quantize(peep));
    }
    let mut entries = Vec::with_capacity(n_breaths);
    for (k, &class) in labels.iter().enumerate() {
        let (start, end) = (bounds[k], bounds[k + 1]);
        let template = profile.template(class, end - start, peep, &mut rng);
        let (f, p) = generate_breath(&template, &mut rng)?;
        debug_assert_eq!(f.len(), end - start);
        flow.extend(f);
        pressure.extend(p);
        entries.push(AnnotationEntry {
            start_idx: start,
            end_idx: end,
            label: class,
        });
    }
    let tail = total - flow.len();
    let lead_out_amp = lead_in_amp * 4.0;
    for i in 0..tail {
        flow.push(quantize(lead_out_amp * (PI * i as f64 / (2 * tail) as f64).sin()));
        pressure.push(quantize(peep));
    }

    let record = WaveformRecord::new(profile.record_id.clone(), fs, 0, flow, pressure)?;
    let annotations = AnnotationSet::new(profile.record_id.clone(), entries, record.len())?;
    Ok((record, annotations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{detect_crossings, segment_breaths};

    fn template(class: BreathClass) -> BreathTemplate {
        BreathTemplate {
            class,
            duration_ms: 1200.0,
            sample_rate_hz: 125.0,
            peak_flow: 40.0,
            peep: 5.0,
            pip: 20.0,
            trigger_lead_ms: 120.0,
            inspiratory_fraction: 0.4,
            noise_sd: 0.0,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn breath_has_one_sign_change() {
        for class in BreathClass::ALL {
            for noise in [0.0, 0.3] {
                let t = BreathTemplate {
                    noise_sd: noise,
                    ..template(class)
                };
                let (flow, pressure) = generate_breath(&t, &mut rng()).unwrap();
                assert_eq!(flow.len(), 150);
                assert_eq!(pressure.len(), 150);
                assert!(flow[0] >= 0.0, "{class}");
                assert!(*flow.last().unwrap() < 0.0, "{class}");
                let mut wrapped = vec![-1.0];
                wrapped.extend(&flow);
                assert_eq!(detect_crossings(&wrapped).unwrap(), vec![1], "{class}");
            }
        }
    }

    #[test]
    fn spontaneous_pressure_stays_near_peep() {
        let (_, p) = generate_breath(&template(BreathClass::Spontaneous), &mut rng()).unwrap();
        let dev = p.iter().map(|v| (v - 5.0).abs()).fold(0.0, f64::max);
        assert!(dev < 0.1 * (20.0 - 5.0), "{dev}");
    }

    #[test]
    fn mechanical_peaks_at_pip() {
        let (_, p) = generate_breath(&template(BreathClass::Mechanical), &mut rng()).unwrap();
        let max = p.iter().cloned().fold(f64::MIN, f64::max);
        assert!((max - 20.0).abs() <= 0.2, "{max}");
        assert!(p[0] > 5.0);
    }

    #[test]
    fn triggered_rise_is_delayed() {
        let (flow, p) = generate_breath(&template(BreathClass::Triggered), &mut rng()).unwrap();
        let onset = p.iter().position(|&v| v > 5.0 + 1e-9).unwrap();
        assert_eq!(onset, 15);
        assert!(flow[1..15].iter().all(|&f| f > 0.0));
    }

    #[test]
    fn invalid_templates() {
        let low = BreathTemplate {
            pip: 3.0,
            ..template(BreathClass::Mechanical)
        };
        assert!(matches!(
            generate_breath(&low, &mut rng()),
            Err(SynthError::InvalidTemplate(_))
        ));
        let spont = BreathTemplate {
            pip: 3.0,
            ..template(BreathClass::Spontaneous)
        };
        assert!(generate_breath(&spont, &mut rng()).is_ok());
        let tiny = BreathTemplate {
            duration_ms: 4.0,
            ..template(BreathClass::Mechanical)
        };
        assert!(generate_breath(&tiny, &mut rng()).is_err());
    }

    #[test]
    fn pure_mechanical_minute() {
        let profile = RecordProfile {
            class_mix: ClassMix::one_hot(BreathClass::Mechanical),
            ..RecordProfile::default()
        };
        let (record, ann) = generate_record(&profile, 60.0).unwrap();
        assert_eq!(record.len(), 7500);
        assert_eq!(ann.len(), 40);
        assert!(ann.entries().iter().all(|e| e.label == BreathClass::Mechanical));
    }

    #[test]
    fn noise_free_boundaries_are_recovered() {
        for seed in 0..5 {
            let profile = RecordProfile {
                seed,
                ..RecordProfile::default()
            }
            .with_noise([0.0, 0.0]);
            let (record, ann) = generate_record(&profile, 90.0).unwrap();
            let found: Vec<(usize, usize)> = segment_breaths(&record)
                .iter()
                .map(|s| (s.start_idx, s.end_idx))
                .collect();
            let truth: Vec<(usize, usize)> =
                ann.entries().iter().map(|e| (e.start_idx, e.end_idx)).collect();
            assert_eq!(found, truth, "seed {seed}");
        }
    }

    #[test]
    fn artefact_flow_is_centred() {
        let profile = RecordProfile {
            class_mix: ClassMix::one_hot(BreathClass::Artefact),
            ..RecordProfile::default()
        };
        let (record, ann) = generate_record(&profile, 30.0).unwrap();
        assert!(ann.entries().iter().all(|e| e.label == BreathClass::Artefact));
        for e in ann.entries() {
            let f = &record.flow[e.start_idx..e.end_idx];
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            let peak = f.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(mean.abs() < 0.35 * peak, "mean {mean} peak {peak}");
        }
    }

    #[test]
    fn deterministic_csv() {
        let profile = RecordProfile {
            seed: 3,
            ..RecordProfile::default()
        };
        let (a, la) = generate_record(&profile, 20.0).unwrap();
        let (b, lb) = generate_record(&profile, 20.0).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(la.to_csv(), lb.to_csv());
    }

    #[test]
    fn profile_toml_round_trip() {
        let text = "seed = 9\nbreaths_per_minute = 30.0\n\n[class_mix]\nartefact = 0.5\nspontaneous = 0.5\nmechanical = 0.0\ntriggered = 0.0\nunclassifiable = 0.0\n\n[mechanical]\npip = [18.0, 22.0]\n";
        let p = RecordProfile::from_toml(text).unwrap();
        assert_eq!(p.seed, 9);
        assert_eq!(p.mechanical.pip, [18.0, 22.0]);
        assert_eq!(p.mechanical.duration_ms, [500.0, 2500.0]);
        assert_eq!(RecordProfile::from_toml(&p.to_toml()).unwrap(), p);
        let bad = "[class_mix]\nartefact = 0.5\n";
        assert!(matches!(
            RecordProfile::from_toml(bad),
            Err(SynthError::InvalidProfile(_))
        ));
    }
}
