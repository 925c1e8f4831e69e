//! Forward data synthesis: travel times, amplitudes and intensity-vs-frequency
//! series for a given phantom. These are the ground-truth generators that
//! every inversion path is tested against.
//!
//! Travel times and amplitudes come in two fidelities. The linearized forms
//! integrate the perturbation along straight chords; the geodesic forms (see
//! [`ray`]) trace the actual rays of the medium and are used to measure how
//! much the straight-line replacement costs.

pub mod ray;

use crate::error::{Error, Result};
use crate::geometry::Chord;
use crate::math::{dist, lerp3, Vec3};
use crate::phantom::Phantom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Relative tolerance for the adaptive chord quadratures.
const QUAD_TOL: f64 = 1e-11;

/// Uniform frequency grid `k0, k0 + dk, ..., k_max`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct KGrid {
    pub k0: f64,
    pub k_max: f64,
    pub n_k: usize,
}

impl KGrid {
    pub fn new(k0: f64, k_max: f64, n_k: usize) -> Result<Self> {
        if k0 <= 0.0 || k_max <= k0 {
            return Err(Error::Config(format!(
                "frequency grid must satisfy 0 < k0 < k_max, got [{k0}, {k_max}]"
            )));
        }
        if n_k < 16 {
            return Err(Error::Config(format!("n_k must be >= 16, got {n_k}")));
        }
        Ok(KGrid { k0, k_max, n_k })
    }

    pub fn dk(&self) -> f64 {
        (self.k_max - self.k0) / (self.n_k - 1) as f64
    }

    pub fn k(&self, i: usize) -> f64 {
        self.k0 + i as f64 * self.dk()
    }

    pub fn span(&self) -> f64 {
        self.k_max - self.k0
    }
}

/// Which intensity is recorded: the scattered field only, or the full field.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ScanKind {
    /// `f1 = |u_sc|^2`.
    F1,
    /// `f2 = |u|^2`.
    F2,
}

/// Sampled intensity record for one chord.
#[derive(Debug, Clone)]
pub struct KSeries {
    pub chord: Chord,
    pub grid: KGrid,
    pub kind: ScanKind,
    pub values: Vec<f64>,
}

impl KSeries {
    pub fn dist(&self) -> f64 {
        self.chord.dist()
    }
}

/// Per-chord travel time and amplitude, the quantities every inversion
/// consumes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChordObservables {
    /// Travel time between the endpoints (wave speed is 1/n).
    pub tau: f64,
    /// Amplitude of the leading singularity of the field.
    pub a: f64,
    /// Euclidean distance between the endpoints.
    pub dist: f64,
}

impl ChordObservables {
    pub fn new(tau: f64, a: f64, dist: f64) -> Result<Self> {
        if tau < dist {
            return Err(Error::InconsistentData(format!(
                "travel time {tau} below straight distance {dist}"
            )));
        }
        if a <= 0.0 {
            return Err(Error::InconsistentData(format!(
                "amplitude must be positive, got {a}"
            )));
        }
        Ok(ChordObservables { tau, a, dist })
    }
}

/// Integral of beta along the straight segment between `x` and `y`.
pub fn line_integral_beta(p: &Phantom, x: Vec3, y: Vec3) -> f64 {
    let d = dist(x, y);
    assert!(d > 0.0, "degenerate segment");
    // Seed the panel ladder so the smallest bump sees a full panel.
    let start = ((d / p.min_feature()).ceil() as usize).clamp(1, 16);
    d * adaptive_from(|t| p.beta(lerp3(y, x, t)), start)
}

/// Linearized travel time `|x - y| + integral of beta along the chord`.
///
/// This is the data model the reconstruction formulas invert, and the whole
/// pipeline is self-consistent with it. Note that it is not the tangent of
/// the geodesic travel time at beta = 0: since n = sqrt(1 + beta), the first
/// variation of the travel time is the chord integral of beta/2, so this
/// model overweights the perturbation by a factor of two relative to
/// [`tau_straight_ray`]. The fidelity tests measure both gaps.
pub fn tau_linearized(p: &Phantom, x: Vec3, y: Vec3) -> f64 {
    dist(x, y) + line_integral_beta(p, x, y)
}

/// Travel time of the straight chord in the actual metric,
/// `int_L n dsigma = |x-y| + int_L (n - 1) dsigma`.
///
/// This is the geodesic travel time with the geodesic replaced by the
/// straight segment; by Fermat's principle it differs from the true
/// geodesic time only at second order in the perturbation.
pub fn tau_straight_ray(p: &Phantom, x: Vec3, y: Vec3) -> f64 {
    let d = dist(x, y);
    assert!(d > 0.0, "degenerate segment");
    let start = ((d / p.min_feature()).ceil() as usize).clamp(1, 16);
    d + d * adaptive_from(|t| p.n(lerp3(y, x, t)) - 1.0, start)
}

/// The weighted ray transform `|x-y| * int_0^1 q(y + s(x-y)) s(1-s) ds`.
///
/// This is the forward model matched by the integral-geometry inversion.
pub fn weighted_line_integral<F: Fn(Vec3) -> f64>(q: F, x: Vec3, y: Vec3) -> f64 {
    let d = dist(x, y);
    assert!(d > 0.0, "degenerate segment");
    d * adaptive_from(|s| q(lerp3(y, x, s)) * s * (1.0 - s), 2)
}

/// Linearized amplitude
/// `(1/(4 pi |x-y|)) (1 - (|x-y|^2 / 2) * int_0^1 lap beta (y + s(x-y)) s(1-s) ds)`.
pub fn amplitude_linearized(p: &Phantom, x: Vec3, y: Vec3) -> f64 {
    let d = dist(x, y);
    assert!(d > 0.0, "degenerate segment");
    let start = ((d / p.min_feature()).ceil() as usize).clamp(1, 16);
    let i = adaptive_from(
        |s| p.laplacian_beta(lerp3(y, x, s)) * s * (1.0 - s),
        start,
    );
    (1.0 - 0.5 * d * d * i) / (4.0 * PI * d)
}

/// Linearized observables for one chord.
pub fn observables_linearized(p: &Phantom, chord: &Chord) -> ChordObservables {
    ChordObservables {
        tau: tau_linearized(p, chord.x, chord.y),
        a: amplitude_linearized(p, chord.x, chord.y),
        dist: chord.dist(),
    }
}

/// Geodesic-fidelity observables for one chord (two-point ray shooting).
pub fn observables_geodesic(p: &Phantom, chord: &Chord) -> Result<ChordObservables> {
    Ok(ChordObservables {
        tau: ray::tau_geodesic(p, chord.x, chord.y)?,
        a: ray::amplitude_geodesic(p, chord.x, chord.y)?,
        dist: chord.dist(),
    })
}

/// Composite panel-doubling quadrature over [0, 1] starting from `start`
/// panels.
fn adaptive_from<F: FnMut(f64) -> f64>(mut f: F, start: usize) -> f64 {
    const ORDER: usize = 16;
    const MAX_PANELS: usize = 512;
    let mut panels = start.max(1);
    let eval = |f: &mut F, panels: usize| {
        let h = 1.0 / panels as f64;
        let mut sum = 0.0;
        for p in 0..panels {
            sum += crate::math::integrate(&mut *f, p as f64 * h, (p + 1) as f64 * h, ORDER);
        }
        sum
    };
    let mut prev = eval(&mut f, panels);
    loop {
        panels *= 2;
        let cur = eval(&mut f, panels);
        if (cur - prev).abs() <= QUAD_TOL * cur.abs().max(prev.abs()) + 1e-300
            || panels >= MAX_PANELS
        {
            return cur;
        }
        prev = cur;
    }
}

/// Synthesis knobs: the dropped `O(1/k)` remainder can be re-enabled as
/// `c / k` to stress extraction, and Gaussian noise of the given level
/// (relative to the series peak) can be added.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SynthOptions {
    pub remainder: f64,
    pub noise_level: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            remainder: 0.0,
            noise_level: 0.0,
        }
    }
}

/// Scattered-field intensity series
/// `f1(k) = A^2 + 1/(16 pi^2 d^2) - (A / (2 pi d)) cos(k (tau - d))`.
pub fn synth_f1(chord: &Chord, obs: &ChordObservables, grid: &KGrid) -> KSeries {
    f1_values(chord, obs, grid, 0.0)
}

pub fn synth_f1_with<R: Rng>(
    chord: &Chord,
    obs: &ChordObservables,
    grid: &KGrid,
    opts: SynthOptions,
    rng: &mut R,
) -> KSeries {
    let mut series = f1_values(chord, obs, grid, opts.remainder);
    apply_noise(&mut series, opts.noise_level, rng);
    series
}

fn f1_values(chord: &Chord, obs: &ChordObservables, grid: &KGrid, remainder: f64) -> KSeries {
    let d = obs.dist;
    let dtau = obs.tau - d;
    let base = obs.a * obs.a + 1.0 / (16.0 * PI * PI * d * d);
    let amp = obs.a / (2.0 * PI * d);
    let values = (0..grid.n_k)
        .map(|i| {
            let k = grid.k(i);
            // The model is (A - cos-phase)^2-shaped, nonnegative; clamp the
            // rounding residue of the cancellation at the envelope floor.
            (base - amp * (k * dtau).cos() + remainder / k).max(0.0)
        })
        .collect();
    KSeries {
        chord: *chord,
        grid: *grid,
        kind: ScanKind::F1,
        values,
    }
}

/// Full-field intensity series `f2(k) = A^2` (the `O(1/k)` term dropped).
pub fn synth_f2(chord: &Chord, obs: &ChordObservables, grid: &KGrid) -> KSeries {
    f2_values(chord, obs, grid, 0.0)
}

pub fn synth_f2_with<R: Rng>(
    chord: &Chord,
    obs: &ChordObservables,
    grid: &KGrid,
    opts: SynthOptions,
    rng: &mut R,
) -> KSeries {
    let mut series = f2_values(chord, obs, grid, opts.remainder);
    apply_noise(&mut series, opts.noise_level, rng);
    series
}

fn f2_values(chord: &Chord, obs: &ChordObservables, grid: &KGrid, remainder: f64) -> KSeries {
    let a2 = obs.a * obs.a;
    let values = (0..grid.n_k)
        .map(|i| (a2 + remainder / grid.k(i)).max(0.0))
        .collect();
    KSeries {
        chord: *chord,
        grid: *grid,
        kind: ScanKind::F2,
        values,
    }
}

fn apply_noise<R: Rng>(series: &mut KSeries, level: f64, rng: &mut R) {
    if level <= 0.0 {
        return;
    }
    let peak = series.values.iter().cloned().fold(0.0f64, f64::max);
    let normal = Normal::new(0.0, level * peak).unwrap();
    for v in series.values.iter_mut() {
        // Intensities are nonnegative; clip the noise at zero.
        *v = (*v + normal.sample(rng)).max(0.0);
    }
}
