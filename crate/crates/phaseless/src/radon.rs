//! Travel-time reconstruction path: per-slice sinograms of
//! `h(x, y) = tau - |x - y|` and their inversion by filtered backprojection.
//!
//! In each horizontal slice the travel-time excess of a chord equals the 2-d
//! Radon transform of the perturbation at `(alpha, s)`, so the slice is
//! recovered with the standard ramp-filter/backprojection inversion and the
//! slices are stacked into a volume.

use crate::error::{Error, Result};
use crate::extract::ObsTable;
use crate::geometry::{alpha_grid, offset_grid, BallConfig};
use crate::volume::VolumeGrid;
use rayon::prelude::*;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Per-slice array over `(alpha, s)`; `data[i * n_s + j]` is the value for
/// angle `alphas[i]` and offset `s_values[j]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sinogram {
    pub z: f64,
    pub alphas: Vec<f64>,
    pub s_values: Vec<f64>,
    pub data: Vec<f64>,
    /// What the samples hold: `h` (travel-time excess) or `g` (amplitude
    /// combination); informational.
    pub quantity: String,
}

impl Sinogram {
    pub fn n_alpha(&self) -> usize {
        self.alphas.len()
    }

    pub fn n_s(&self) -> usize {
        self.s_values.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_s() + j]
    }
}

/// High-frequency taper applied on top of the ramp filter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum Apodization {
    None,
    #[default]
    Cosine,
}

/// Interpolation used when backprojecting the filtered rows.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackprojectInterp {
    #[default]
    Linear,
    /// For debugging only; visibly blockier.
    Nearest,
}

/// Square slice image on `[-half_extent, half_extent]^2`, pixel centres,
/// `values[iy * n + ix]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceImage {
    pub z: f64,
    pub half_extent: f64,
    pub n: usize,
    pub values: Vec<f64>,
}

impl SliceImage {
    pub fn zeros(z: f64, half_extent: f64, n: usize) -> Self {
        SliceImage {
            z,
            half_extent,
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn pixel_size(&self) -> f64 {
        2.0 * self.half_extent / self.n as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_extent + (i as f64 + 0.5) * self.pixel_size()
    }

    /// Bilinear sample; zero outside the image square.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let h = self.pixel_size();
        let fx = (x + self.half_extent) / h - 0.5;
        let fy = (y + self.half_extent) / h - 0.5;
        let (ix, tx) = (fx.floor() as isize, fx - fx.floor());
        let (iy, ty) = (fy.floor() as isize, fy - fy.floor());
        let n = self.n as isize;
        let mut acc = 0.0;
        for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
            for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                let (jx, jy) = (ix + dx, iy + dy);
                if jx < 0 || jy < 0 || jx >= n || jy >= n {
                    continue;
                }
                acc += wx * wy * self.values[(jy * n + jx) as usize];
            }
        }
        acc
    }
}

/// Tolerance for matching chord coordinates to grid cells.
const MATCH_TOL: f64 = 1e-9;

/// Assemble the travel-time sinogram of one slice from the observables
/// table: `data[alpha_i, s_j] = tau_hat - dist` for the matching chord.
///
/// Returns the sinogram and the number of grid cells with no matching chord
/// (left at zero).
pub fn assemble_h_sinogram(
    table: &ObsTable,
    z: f64,
    cfg: &BallConfig,
    n_alpha: usize,
    n_s: usize,
) -> Result<(Sinogram, usize)> {
    assemble_sinogram(table, z, cfg, n_alpha, n_s, "h", |row| {
        row.tau_hat - row.dist
    })
}

pub(crate) fn assemble_sinogram<F: Fn(&crate::extract::ObsRow) -> f64>(
    table: &ObsTable,
    z: f64,
    cfg: &BallConfig,
    n_alpha: usize,
    n_s: usize,
    quantity: &str,
    value: F,
) -> Result<(Sinogram, usize)> {
    let rows: Vec<_> = table.rows_for_slice(z, MATCH_TOL * cfg.b).collect();
    if rows.is_empty() {
        return Err(Error::MissingSlice(z));
    }
    let rho0 = (cfg.r * cfg.r - z * z).sqrt();
    let alphas = alpha_grid(n_alpha);
    let s_values = offset_grid(rho0, n_s);
    let d_alpha = 2.0 * PI / n_alpha as f64;
    let ds = 2.0 * rho0 / n_s as f64;
    let mut data = vec![0.0; n_alpha * n_s];
    let mut filled = vec![false; n_alpha * n_s];
    for row in rows {
        let i = (row.param.alpha / d_alpha).round() as usize;
        let i = if i == 0 { n_alpha } else { i } - 1;
        let j_f = (row.param.s - s_values[0]) / ds;
        let j = j_f.round();
        if j < 0.0 || j >= n_s as f64 {
            continue;
        }
        let j = j as usize;
        if (alphas[i] - row.param.alpha).abs() > MATCH_TOL
            || (s_values[j] - row.param.s).abs() > MATCH_TOL * cfg.b
        {
            continue;
        }
        data[i * n_s + j] = value(row);
        filled[i * n_s + j] = true;
    }
    let missing = filled.iter().filter(|&&f| !f).count();
    Ok((
        Sinogram {
            z,
            alphas,
            s_values,
            data,
            quantity: quantity.into(),
        },
        missing,
    ))
}

/// Filtered-backprojection settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
pub struct FbpOptions {
    pub apodization: Apodization,
    pub interp: BackprojectInterp,
}

/// Invert the 2-d Radon transform of one slice by filtered backprojection.
///
/// Rows are ramp-filtered in the offset variable (zero-padded to the next
/// power of two past twice the row length), then backprojected over the full
/// `(0, 2 pi]` angle range with the matching `1/(4 pi)` normalization.
pub fn inverse_radon_fbp(
    sg: &Sinogram,
    n_image: usize,
    half_extent: f64,
    opts: &FbpOptions,
) -> Result<SliceImage> {
    let n_alpha = sg.n_alpha();
    let n_s = sg.n_s();
    if n_alpha < 32 || n_s < 32 {
        return Err(Error::UnsupportedGrid(format!(
            "need at least 32 angles and offsets, got {n_alpha} x {n_s}"
        )));
    }
    check_uniform(&sg.alphas, "alpha")?;
    check_uniform(&sg.s_values, "s")?;
    let ds = sg.s_values[1] - sg.s_values[0];
    let filtered = ramp_filter(&sg.data, n_alpha, n_s, ds, opts.apodization);

    let mut img = SliceImage::zeros(sg.z, half_extent, n_image);
    let d_alpha = 2.0 * PI / n_alpha as f64;
    let s0 = sg.s_values[0];
    let scale = d_alpha / (4.0 * PI);
    let trig: Vec<(f64, f64)> = sg.alphas.iter().map(|a| (a.cos(), a.sin())).collect();
    for iy in 0..n_image {
        let y = img.coord(iy);
        for ix in 0..n_image {
            let x = img.coord(ix);
            if x * x + y * y >= half_extent * half_extent {
                continue;
            }
            let mut acc = 0.0;
            for (i, &(c, s)) in trig.iter().enumerate() {
                let t = x * c + y * s;
                let u = (t - s0) / ds;
                let row = &filtered[i * n_s..(i + 1) * n_s];
                acc += match opts.interp {
                    BackprojectInterp::Linear => {
                        let fl = u.floor();
                        let j = fl as isize;
                        let w = u - fl;
                        let left = if j >= 0 && (j as usize) < n_s {
                            row[j as usize]
                        } else {
                            0.0
                        };
                        let right = if j + 1 >= 0 && ((j + 1) as usize) < n_s {
                            row[(j + 1) as usize]
                        } else {
                            0.0
                        };
                        left * (1.0 - w) + right * w
                    }
                    BackprojectInterp::Nearest => {
                        let j = u.round() as isize;
                        if j >= 0 && (j as usize) < n_s {
                            row[j as usize]
                        } else {
                            0.0
                        }
                    }
                };
            }
            img.values[iy * n_image + ix] = scale * acc;
        }
    }
    Ok(img)
}

fn check_uniform(v: &[f64], name: &str) -> Result<()> {
    let h = v[1] - v[0];
    for w in v.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs() {
            return Err(Error::UnsupportedGrid(format!(
                "{name} grid is not uniform"
            )));
        }
    }
    Ok(())
}

/// Ramp-filter every angle row: `q = IFFT(|omega| W(omega) FFT(p))` on a
/// zero-padded copy.
fn ramp_filter(
    data: &[f64],
    n_alpha: usize,
    n_s: usize,
    ds: f64,
    apod: Apodization,
) -> Vec<f64> {
    let n_fft = (2 * n_s).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);

    // |omega| with optional cosine taper, indexed by FFT bin.
    let filter: Vec<f64> = (0..n_fft)
        .map(|m| {
            let f = if m <= n_fft / 2 {
                m as f64
            } else {
                m as f64 - n_fft as f64
            };
            let omega = 2.0 * PI * f / (n_fft as f64 * ds);
            let w = match apod {
                Apodization::None => 1.0,
                Apodization::Cosine => (PI * f.abs() / n_fft as f64).cos(),
            };
            omega.abs() * w
        })
        .collect();

    let mut out = vec![0.0; n_alpha * n_s];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for i in 0..n_alpha {
        for v in buf.iter_mut() {
            *v = Complex64::new(0.0, 0.0);
        }
        for j in 0..n_s {
            buf[j] = Complex64::new(data[i * n_s + j], 0.0);
        }
        fwd.process(&mut buf);
        for (v, &f) in buf.iter_mut().zip(&filter) {
            *v *= f;
        }
        inv.process(&mut buf);
        for j in 0..n_s {
            out[i * n_s + j] = buf[j].re / n_fft as f64;
        }
    }
    out
}

/// Reconstruct the perturbation volume by stacking filtered-backprojection
/// slices: one slice per height in the observables table, bilinear in-plane
/// resampling and linear interpolation between slice heights (tapering to
/// zero at `|z| = R`, where the support ends).
pub fn reconstruct_beta_radon(
    table: &ObsTable,
    cfg: &BallConfig,
    n_alpha: usize,
    n_s: usize,
    opts: &FbpOptions,
) -> Result<(VolumeGrid, usize)> {
    let zs = table.slice_heights(MATCH_TOL * cfg.b);
    if zs.is_empty() {
        return Err(Error::DegenerateData("observables table is empty".into()));
    }
    let slices: Vec<(SliceImage, usize)> = zs
        .par_iter()
        .map(|&z| -> Result<(SliceImage, usize)> {
            let (sg, missing) = assemble_h_sinogram(table, z, cfg, n_alpha, n_s)?;
            let b_z = (cfg.b * cfg.b - z * z).sqrt();
            let img = inverse_radon_fbp(&sg, cfg.grid_n, b_z, opts)?;
            Ok((img, missing))
        })
        .collect::<Result<_>>()?;
    let missing = slices.iter().map(|(_, m)| m).sum();
    let images: Vec<SliceImage> = slices.into_iter().map(|(img, _)| img).collect();
    Ok((stack_slices(&images, cfg), missing))
}

/// Stack per-slice images into the reconstruction volume.
pub fn stack_slices(images: &[SliceImage], cfg: &BallConfig) -> VolumeGrid {
    let mut vol = VolumeGrid::ball(cfg.b, cfg.grid_n);
    let n = vol.n;
    let zs: Vec<f64> = images.iter().map(|s| s.z).collect();
    for iz in 0..n {
        let z = vol.z_plane(iz);
        if z.abs() >= cfg.r {
            continue;
        }
        // Bracketing slice images, tapering to zero at the support edge.
        let pos = zs.partition_point(|&sz| sz < z);
        let (lo, hi) = (pos.checked_sub(1).map(|i| &images[i]), images.get(pos));
        for iy in 0..n {
            for ix in 0..n {
                if !vol.in_ball(ix, iy, iz) {
                    continue;
                }
                let c = vol.center(ix, iy, iz);
                let v = match (lo, hi) {
                    (Some(a), Some(b)) => {
                        let t = (z - a.z) / (b.z - a.z);
                        (1.0 - t) * a.sample(c[0], c[1]) + t * b.sample(c[0], c[1])
                    }
                    (Some(a), None) => {
                        let t = (z - a.z) / (cfg.r - a.z);
                        (1.0 - t) * a.sample(c[0], c[1])
                    }
                    (None, Some(b)) => {
                        let t = (z + cfg.r) / (b.z + cfg.r);
                        t * b.sample(c[0], c[1])
                    }
                    (None, None) => 0.0,
                };
                let i = vol.idx(ix, iy, iz);
                vol.values[i] = v;
            }
        }
    }
    vol
}
