//! Scalar fields on a uniform Cartesian grid covering the ball `|x| < B`,
//! plus the error metrics used to compare reconstructions.

use crate::error::{Error, Result};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};

/// `n^3` scalar samples at voxel centres; row-major with x fastest:
/// `index = (iz * n + iy) * n + ix`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeGrid {
    pub n: usize,
    pub spacing: f64,
    /// Coordinate of the centre of voxel (0, 0, 0).
    pub origin: Vec3,
    /// Ball radius defining the domain mask.
    pub b: f64,
    pub values: Vec<f64>,
}

impl VolumeGrid {
    /// Zero-filled grid of `n^3` voxels covering the cube `[-b, b]^3`.
    pub fn ball(b: f64, n: usize) -> Self {
        let spacing = 2.0 * b / n as f64;
        let o = -b + 0.5 * spacing;
        VolumeGrid {
            n,
            spacing,
            origin: [o, o, o],
            b,
            values: vec![0.0; n * n * n],
        }
    }

    pub fn idx(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.n + iy) * self.n + ix
    }

    pub fn center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        [
            self.origin[0] + ix as f64 * self.spacing,
            self.origin[1] + iy as f64 * self.spacing,
            self.origin[2] + iz as f64 * self.spacing,
        ]
    }

    /// Voxel-centre height of z-plane `iz`.
    pub fn z_plane(&self, iz: usize) -> f64 {
        self.origin[2] + iz as f64 * self.spacing
    }

    /// True when the voxel centre lies inside the ball `|x| < b`.
    pub fn in_ball(&self, ix: usize, iy: usize, iz: usize) -> bool {
        let c = self.center(ix, iy, iz);
        c[0] * c[0] + c[1] * c[1] + c[2] * c[2] < self.b * self.b
    }

    /// The domain mask over all voxels, in storage order.
    pub fn ball_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for iz in 0..self.n {
            for iy in 0..self.n {
                for ix in 0..self.n {
                    mask[self.idx(ix, iy, iz)] = self.in_ball(ix, iy, iz);
                }
            }
        }
        mask
    }

    /// Fill from an analytic field evaluated at voxel centres.
    pub fn fill<F: Fn(Vec3) -> f64>(&mut self, f: F) {
        for iz in 0..self.n {
            for iy in 0..self.n {
                for ix in 0..self.n {
                    let i = self.idx(ix, iy, iz);
                    self.values[i] = f(self.center(ix, iy, iz));
                }
            }
        }
    }

    /// Trilinear sample at an arbitrary point; outside the sampled box the
    /// field is treated as zero.
    pub fn sample(&self, p: Vec3) -> f64 {
        let n = self.n as isize;
        let fx = (p[0] - self.origin[0]) / self.spacing;
        let fy = (p[1] - self.origin[1]) / self.spacing;
        let fz = (p[2] - self.origin[2]) / self.spacing;
        let (ix, tx) = split(fx);
        let (iy, ty) = split(fy);
        let (iz, tz) = split(fz);
        let mut acc = 0.0;
        for (dz, wz) in [(0, 1.0 - tz), (1, tz)] {
            for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
                for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                    let (jx, jy, jz) = (ix + dx, iy + dy, iz + dz);
                    if jx < 0 || jy < 0 || jz < 0 || jx >= n || jy >= n || jz >= n {
                        continue;
                    }
                    let v = self.values[self.idx(jx as usize, jy as usize, jz as usize)];
                    acc += wx * wy * wz * v;
                }
            }
        }
        acc
    }
}

fn split(f: f64) -> (isize, f64) {
    let fl = f.floor();
    (fl as isize, f - fl)
}

/// Relative error metrics between two volumes, evaluated on the voxels with
/// centre inside `|x| < mask_radius`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeMetrics {
    pub rel_l2: f64,
    pub rel_linf: f64,
    pub abs_linf: f64,
    /// Per z-plane relative L2 profile, as (z, rel_l2) pairs.
    pub per_slice: Vec<(f64, f64)>,
}

/// Compare volume `a` against `b` inside `|x| < mask_radius`.
///
/// Norm differences are scaled by the larger of the two field norms, so a
/// nonzero field compared against zero scores exactly 1. Grids must share
/// dims and spacing; resample first (see [`resample_like`]) when they do not.
pub fn compare_volumes(a: &VolumeGrid, b: &VolumeGrid, mask_radius: f64) -> Result<VolumeMetrics> {
    if a.n != b.n || (a.spacing - b.spacing).abs() > 1e-12 * a.spacing {
        return Err(Error::ShapeMismatch(format!(
            "volumes differ: {}^3 @ {} vs {}^3 @ {}",
            a.n, a.spacing, b.n, b.spacing
        )));
    }
    let r2 = mask_radius * mask_radius;
    let mut diff2 = 0.0;
    let mut a2 = 0.0;
    let mut b2 = 0.0;
    let mut dinf = 0.0f64;
    let mut vinf = 0.0f64;
    let mut per_slice = Vec::with_capacity(a.n);
    for iz in 0..a.n {
        let mut sdiff2 = 0.0;
        let mut sa2 = 0.0;
        let mut sb2 = 0.0;
        for iy in 0..a.n {
            for ix in 0..a.n {
                let c = a.center(ix, iy, iz);
                if c[0] * c[0] + c[1] * c[1] + c[2] * c[2] >= r2 {
                    continue;
                }
                let i = a.idx(ix, iy, iz);
                let (va, vb) = (a.values[i], b.values[i]);
                let d = va - vb;
                sdiff2 += d * d;
                sa2 += va * va;
                sb2 += vb * vb;
                dinf = dinf.max(d.abs());
                vinf = vinf.max(va.abs().max(vb.abs()));
            }
        }
        let denom = sa2.max(sb2).sqrt();
        per_slice.push((
            a.z_plane(iz),
            if denom > 0.0 {
                sdiff2.sqrt() / denom
            } else {
                0.0
            },
        ));
        diff2 += sdiff2;
        a2 += sa2;
        b2 += sb2;
    }
    let denom = a2.max(b2).sqrt();
    Ok(VolumeMetrics {
        rel_l2: if denom > 0.0 { diff2.sqrt() / denom } else { 0.0 },
        rel_linf: if vinf > 0.0 { dinf / vinf } else { 0.0 },
        abs_linf: dinf,
        per_slice,
    })
}

/// Resample `src` onto the grid layout of `like` by trilinear interpolation.
pub fn resample_like(src: &VolumeGrid, like: &VolumeGrid) -> VolumeGrid {
    let mut out = VolumeGrid {
        n: like.n,
        spacing: like.spacing,
        origin: like.origin,
        b: like.b,
        values: vec![0.0; like.values.len()],
    };
    for iz in 0..out.n {
        for iy in 0..out.n {
            for ix in 0..out.n {
                let i = out.idx(ix, iy, iz);
                out.values[i] = src.sample(out.center(ix, iy, iz));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_volumes_score_zero() {
        let mut a = VolumeGrid::ball(1.0, 16);
        a.fill(|p| p[0] + 2.0 * p[1]);
        let m = compare_volumes(&a, &a.clone(), 0.8).unwrap();
        assert_eq!(m.rel_l2, 0.0);
        assert_eq!(m.rel_linf, 0.0);
    }

    #[test]
    fn zero_reference_scores_one() {
        let mut a = VolumeGrid::ball(1.0, 16);
        a.fill(|p| p[0].abs() + 0.1);
        let b = VolumeGrid::ball(1.0, 16);
        let m = compare_volumes(&a, &b, 0.8).unwrap();
        assert_abs_diff_eq!(m.rel_l2, 1.0);
        assert_abs_diff_eq!(m.rel_linf, 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = VolumeGrid::ball(1.0, 16);
        let b = VolumeGrid::ball(1.0, 24);
        assert!(matches!(
            compare_volumes(&a, &b, 0.8),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn resample_then_compare_smooth_field() {
        let f = |p: [f64; 3]| (1.0 - p[0] * p[0] - p[1] * p[1] - p[2] * p[2]).max(0.0);
        let mut coarse = VolumeGrid::ball(1.0, 24);
        coarse.fill(f);
        let mut fine = VolumeGrid::ball(1.0, 48);
        fine.fill(f);
        let resampled = resample_like(&coarse, &fine);
        let m = compare_volumes(&resampled, &fine, 0.8).unwrap();
        assert!(m.rel_l2 < 0.01, "rel l2 {}", m.rel_l2);
    }

    #[test]
    fn trilinear_sampling_is_exact_on_linear_fields() {
        let mut g = VolumeGrid::ball(1.0, 16);
        g.fill(|p| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2]);
        for p in [[0.2, 0.1, -0.3], [0.01, -0.49, 0.26]] {
            let expect = 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2];
            assert_abs_diff_eq!(g.sample(p), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn mask_tracks_ball() {
        let g = VolumeGrid::ball(1.0, 8);
        let mask = g.ball_mask();
        // Corners are outside, the centre voxels inside.
        assert!(!mask[g.idx(0, 0, 0)]);
        assert!(mask[g.idx(4, 4, 4)]);
    }
}
