//! Measurement geometry: the sphere `S` of radius `B`, its horizontal slice
//! circles `S_z`, and the correspondence between chord endpoint pairs on a
//! slice circle and Radon-style `(alpha, s)` parameters.
//!
//! A chord of the slice at height `z` is the line `{ r : <r, nu(alpha)> = s }`
//! in that plane, where `nu(alpha) = (cos alpha, sin alpha)` is the in-plane
//! unit normal and `s` the signed distance to the slice centre. Because
//! `(alpha, s)` and `(alpha + pi, -s)` describe the same line, chords decoded
//! from unordered endpoint pairs are canonicalised to `s >= 0` (and to
//! `alpha` in `(0, pi]` when `s = 0`), which makes the decoding insensitive
//! to the order of the endpoints.

use crate::error::{Error, Result};
use crate::math::{dist, Vec3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Radius of the measurement sphere `B`, radius of the support ball `R`
/// and the volume-grid resolution used for reconstructions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct BallConfig {
    /// Radius of the measurement sphere S.
    pub b: f64,
    /// Radius of the ball containing the support of the perturbation.
    pub r: f64,
    /// Voxels per axis for volume grids.
    pub grid_n: usize,
}

impl BallConfig {
    pub fn new(b: f64, r: f64, grid_n: usize) -> Result<Self> {
        if !(b.is_finite() && r.is_finite()) || r <= 0.0 || r >= b {
            return Err(Error::Config(format!(
                "ball radii must satisfy 0 < R < B, got R = {r}, B = {b}"
            )));
        }
        if grid_n < 8 {
            return Err(Error::Config(format!("grid_n must be >= 8, got {grid_n}")));
        }
        Ok(BallConfig { b, r, grid_n })
    }
}

/// Radius `sqrt(B^2 - z^2)` of the slice circle at height `z`.
pub fn slice_radius(z: f64, cfg: &BallConfig) -> Result<f64> {
    if z.abs() >= cfg.b {
        return Err(Error::EmptySlice { z, b: cfg.b });
    }
    Ok((cfg.b * cfg.b - z * z).sqrt())
}

/// A chord of a horizontal slice circle, identified by the slice height,
/// the normal angle in `(0, 2*pi]` and the signed distance to the centre.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ChordParam {
    pub z: f64,
    pub alpha: f64,
    pub s: f64,
}

impl ChordParam {
    /// The equivalent representation of the same line, `(alpha + pi, -s)`.
    pub fn flipped(&self) -> ChordParam {
        ChordParam {
            z: self.z,
            alpha: wrap_angle(self.alpha + PI),
            s: -self.s,
        }
    }

    /// True when `other` names the same geometric chord, either with equal
    /// coordinates or through the `(alpha + pi, -s)` identification.
    pub fn same_line(&self, other: &ChordParam, tol: f64) -> bool {
        let close = |a: &ChordParam, b: &ChordParam| {
            (a.z - b.z).abs() <= tol
                && (a.s - b.s).abs() <= tol
                && angle_dist(a.alpha, b.alpha) <= tol
        };
        close(self, other) || close(&self.flipped(), other)
    }
}

/// Wrap an angle into `(0, 2*pi]`.
pub fn wrap_angle(alpha: f64) -> f64 {
    let mut a = alpha % TAU;
    if a <= 0.0 {
        a += TAU;
    }
    a
}

fn angle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % TAU;
    d.min(TAU - d)
}

/// Endpoints of a chord on the slice circle `S_z`.
///
/// The first endpoint sits at polar angle `alpha + arccos(s / B_z)`, the
/// second at `alpha - arccos(s / B_z)`; this fixes a deterministic order for
/// the two intersection points.
pub fn endpoints_from_chord(c: &ChordParam, cfg: &BallConfig) -> Result<(Vec3, Vec3)> {
    let b_z = slice_radius(c.z, cfg)?;
    if c.s.abs() >= b_z {
        return Err(Error::ChordMissesCircle { s: c.s.abs(), b_z });
    }
    let gamma = (c.s / b_z).acos();
    let p1 = c.alpha + gamma;
    let p2 = c.alpha - gamma;
    Ok((
        [b_z * p1.cos(), b_z * p1.sin(), c.z],
        [b_z * p2.cos(), b_z * p2.sin(), c.z],
    ))
}

/// Chord parameters of the line through two points of a slice circle.
///
/// The endpoints must lie on the measurement sphere in a common horizontal
/// plane. The result is canonical (`s >= 0`), so swapping the endpoints
/// returns the same parameters.
pub fn chord_from_endpoints(x: Vec3, y: Vec3, cfg: &BallConfig) -> Result<ChordParam> {
    let tol = 1e-12 * cfg.b;
    if dist(x, y) <= tol {
        return Err(Error::DegenerateChord);
    }
    if (x[2] - y[2]).abs() > tol {
        return Err(Error::NonCoplanar(x[2], y[2]));
    }
    for p in [x, y] {
        if ((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - cfg.b).abs() > tol {
            return Err(Error::OffSphere(p[0], p[1], p[2]));
        }
    }
    let z = 0.5 * (x[2] + y[2]);
    // Unit normal to the in-plane chord direction.
    let dx = y[0] - x[0];
    let dy = y[1] - x[1];
    let len = dx.hypot(dy);
    let mut nx = dy / len;
    let mut ny = -dx / len;
    let mut s = nx * x[0] + ny * x[1];
    if s < 0.0 {
        nx = -nx;
        ny = -ny;
        s = -s;
    }
    let mut alpha = wrap_angle(ny.atan2(nx));
    if s <= tol {
        // Diameters: the two representations have s = 0; keep alpha in (0, pi].
        s = s.max(0.0);
        if alpha > PI {
            alpha = wrap_angle(alpha - PI);
        }
    }
    Ok(ChordParam { z, alpha, s })
}

/// A chord together with its endpoints on the slice circle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Chord {
    pub param: ChordParam,
    pub x: Vec3,
    pub y: Vec3,
}

impl Chord {
    pub fn dist(&self) -> f64 {
        dist(self.x, self.y)
    }
}

/// Discrete family of chords covering the slices of the support ball.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChordSet {
    pub cfg: BallConfig,
    pub z_values: Vec<f64>,
    pub n_alpha: usize,
    pub n_s: usize,
    pub chords: Vec<Chord>,
}

/// Uniform slice heights in `(-R, R)`: cell centres of `n_z` equal bins.
pub fn slice_heights(cfg: &BallConfig, n_z: usize) -> Vec<f64> {
    let dz = 2.0 * cfg.r / n_z as f64;
    (0..n_z).map(|m| -cfg.r + (m as f64 + 0.5) * dz).collect()
}

/// Uniform normal angles in `(0, 2*pi]`.
pub fn alpha_grid(n_alpha: usize) -> Vec<f64> {
    (0..n_alpha)
        .map(|i| TAU * (i + 1) as f64 / n_alpha as f64)
        .collect()
}

/// Uniform signed offsets: cell centres of `n_s` bins over `(-rho0, rho0)`,
/// where `rho0 = sqrt(R^2 - z^2)` bounds the support of the perturbation in
/// the slice. Chords with `|s| >= rho0` carry no signal and are excluded.
pub fn offset_grid(rho0: f64, n_s: usize) -> Vec<f64> {
    let ds = 2.0 * rho0 / n_s as f64;
    (0..n_s).map(|j| -rho0 + (j as f64 + 0.5) * ds).collect()
}

/// Build the discrete chord family: `n_z` slices, `n_alpha` angles and `n_s`
/// offsets per slice.
pub fn chord_grid(cfg: &BallConfig, n_z: usize, n_alpha: usize, n_s: usize) -> Result<ChordSet> {
    for (name, v) in [("n_z", n_z), ("n_alpha", n_alpha), ("n_s", n_s)] {
        if v < 4 {
            return Err(Error::Config(format!("{name} must be >= 4, got {v}")));
        }
    }
    let z_values = slice_heights(cfg, n_z);
    let alphas = alpha_grid(n_alpha);
    let mut chords = Vec::with_capacity(n_z * n_alpha * n_s);
    for &z in &z_values {
        let rho0 = (cfg.r * cfg.r - z * z).sqrt();
        for &alpha in &alphas {
            for &s in &offset_grid(rho0, n_s) {
                let param = ChordParam { z, alpha, s };
                let (x, y) = endpoints_from_chord(&param, cfg)?;
                chords.push(Chord { param, x, y });
            }
        }
    }
    Ok(ChordSet {
        cfg: *cfg,
        z_values,
        n_alpha,
        n_s,
        chords,
    })
}
