//! Geodesic travel times and amplitudes by two-point ray shooting.
//!
//! Rays of the metric `n(x)|dx|` satisfy `d(n v)/d sigma = grad n` with
//! Euclidean arc length sigma and unit tangent `v`; the travel time is the
//! integral of `n` along the ray. The two-point problem is solved by damped
//! Newton iteration on the two transverse components of the terminal miss,
//! starting from the straight line, which lies in the basin of attraction
//! for the weak media accepted by the smallness gate.

use crate::error::{Error, Result};
use crate::math::{add, dist, dot, normalize, scale, sub, Vec3};
use crate::phantom::Phantom;
use std::f64::consts::PI;

const MAX_NEWTON: usize = 50;
/// Ray steps per smallest bump radius.
const STEPS_PER_FEATURE: f64 = 50.0;

#[derive(Clone, Copy)]
struct RayState {
    pos: Vec3,
    dir: Vec3,
    tau: f64,
}

fn deriv(p: &Phantom, s: &RayState) -> (Vec3, Vec3, f64) {
    let n = p.n(s.pos);
    let g = p.grad_n(s.pos);
    let radial = dot(g, s.dir);
    let ddir = scale(sub(g, scale(s.dir, radial)), 1.0 / n);
    (s.dir, ddir, n)
}

fn rk4_step(p: &Phantom, s: &RayState, h: f64) -> RayState {
    let advance = |s: &RayState, d: &(Vec3, Vec3, f64), f: f64| RayState {
        pos: add(s.pos, scale(d.0, f)),
        dir: add(s.dir, scale(d.1, f)),
        tau: s.tau + d.2 * f,
    };
    let k1 = deriv(p, s);
    let k2 = deriv(p, &advance(s, &k1, 0.5 * h));
    let k3 = deriv(p, &advance(s, &k2, 0.5 * h));
    let k4 = deriv(p, &advance(s, &k3, h));
    let mut out = *s;
    for i in 0..3 {
        out.pos[i] += h / 6.0 * (k1.0[i] + 2.0 * k2.0[i] + 2.0 * k3.0[i] + k4.0[i]);
        out.dir[i] += h / 6.0 * (k1.1[i] + 2.0 * k2.1[i] + 2.0 * k3.1[i] + k4.1[i]);
    }
    out.tau += h / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2);
    out.dir = normalize(out.dir);
    out
}

/// Integrate a ray from `y` with initial direction `dir` until it crosses the
/// plane through `x` orthogonal to the straight direction `axis`; returns the
/// terminal state, landed on the plane by a Newton-refined partial step.
fn shoot(p: &Phantom, y: Vec3, dir: Vec3, x: Vec3, axis: Vec3, h: f64) -> RayState {
    let target = dot(sub(x, y), axis);
    let mut state = RayState {
        pos: y,
        dir,
        tau: 0.0,
    };
    let progress = |s: &RayState| dot(sub(s.pos, y), axis);
    let max_len = 4.0 * (target + 2.0 * p.cfg.b);
    let mut travelled = 0.0;
    while progress(&state) < target && travelled < max_len {
        let next = rk4_step(p, &state, h);
        if progress(&next) >= target {
            // Refine the final partial step onto the plane.
            let mut hh = h * (target - progress(&state))
                / (progress(&next) - progress(&state)).max(1e-300);
            let mut landed = rk4_step(p, &state, hh);
            for _ in 0..8 {
                let gap = target - progress(&landed);
                if gap.abs() < 1e-15 * p.cfg.b {
                    break;
                }
                hh += gap / dot(landed.dir, axis).max(0.1);
                landed = rk4_step(p, &state, hh);
            }
            return landed;
        }
        state = next;
        travelled += h;
    }
    state
}

/// Travel time along the geodesic connecting `x` and `y`, by shooting from
/// `y` toward `x`.
pub fn tau_geodesic(p: &Phantom, x: Vec3, y: Vec3) -> Result<f64> {
    Ok(solve_two_point(p, x, y)?.tau)
}

struct TwoPoint {
    tau: f64,
    /// Converged initial direction, tangent to the geodesic at `y`.
    #[allow(dead_code)]
    dir: Vec3,
}

fn transverse_frame(axis: Vec3) -> (Vec3, Vec3) {
    let seed = if axis[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let e1 = normalize(sub(seed, scale(axis, dot(seed, axis))));
    let e2 = [
        axis[1] * e1[2] - axis[2] * e1[1],
        axis[2] * e1[0] - axis[0] * e1[2],
        axis[0] * e1[1] - axis[1] * e1[0],
    ];
    (e1, e2)
}

fn solve_two_point(p: &Phantom, x: Vec3, y: Vec3) -> Result<TwoPoint> {
    let d = dist(x, y);
    assert!(d > 0.0, "degenerate segment");
    let axis = normalize(sub(x, y));
    let (e1, e2) = transverse_frame(axis);
    let h = p.min_feature() / STEPS_PER_FEATURE;
    let tol = 1e-10 * p.cfg.b;

    let miss = |angles: [f64; 2]| -> ([f64; 2], f64) {
        let dir = normalize(add(axis, add(scale(e1, angles[0]), scale(e2, angles[1]))));
        let end = shoot(p, y, dir, x, axis, h);
        let e = sub(end.pos, x);
        ([dot(e, e1), dot(e, e2)], end.tau)
    };

    let mut angles = [0.0f64, 0.0];
    let (mut m, mut tau) = miss(angles);
    for it in 0..MAX_NEWTON {
        let err = m[0].hypot(m[1]);
        if err < tol {
            let dir = normalize(add(axis, add(scale(e1, angles[0]), scale(e2, angles[1]))));
            return Ok(TwoPoint { tau, dir });
        }
        // Finite-difference Jacobian of the miss in the two launch angles.
        let delta = 1e-7;
        let (mp, _) = miss([angles[0] + delta, angles[1]]);
        let (mq, _) = miss([angles[0], angles[1] + delta]);
        let j = [
            [(mp[0] - m[0]) / delta, (mq[0] - m[0]) / delta],
            [(mp[1] - m[1]) / delta, (mq[1] - m[1]) / delta],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-30 {
            return Err(Error::ShootingDiverged {
                iters: it,
                miss: err,
            });
        }
        let step = [
            -(j[1][1] * m[0] - j[0][1] * m[1]) / det,
            -(-j[1][0] * m[0] + j[0][0] * m[1]) / det,
        ];
        // Damped update: halve until the miss shrinks.
        let mut lambda = 1.0;
        loop {
            let trial = [angles[0] + lambda * step[0], angles[1] + lambda * step[1]];
            let (mt, taut) = miss(trial);
            if mt[0].hypot(mt[1]) < err || lambda < 0.0625 {
                angles = trial;
                m = mt;
                tau = taut;
                break;
            }
            lambda *= 0.5;
        }
    }
    Err(Error::ShootingDiverged {
        iters: MAX_NEWTON,
        miss: m[0].hypot(m[1]),
    })
}

/// Finite-difference step for the geodesic-coordinate and Jacobian stencils.
const FD_STEP_FACTOR: f64 = 1e-4;

/// Geodesic coordinates `zeta(x, y) = -grad_y tau^2(x, y) / (2 n^2(y))` by
/// central differences of the squared travel time.
pub fn geodesic_coordinates(p: &Phantom, x: Vec3, y: Vec3) -> Result<Vec3> {
    geodesic_coordinates_with_step(p, x, y, FD_STEP_FACTOR * p.cfg.b)
}

fn geodesic_coordinates_with_step(p: &Phantom, x: Vec3, y: Vec3, h: f64) -> Result<Vec3> {
    let mut grad = [0.0; 3];
    for dim in 0..3 {
        let mut yp = y;
        let mut ym = y;
        yp[dim] += h;
        ym[dim] -= h;
        let tp = tau_geodesic(p, x, yp)?;
        let tm = tau_geodesic(p, x, ym)?;
        grad[dim] = (tp * tp - tm * tm) / (2.0 * h);
    }
    let n2 = p.n(y).powi(2);
    Ok(scale(grad, -0.5 / n2))
}

/// Geodesic Jacobian `J(x, y) = det(d zeta / d x)` by central differences.
pub fn geodesic_jacobian(p: &Phantom, x: Vec3, y: Vec3) -> Result<f64> {
    geodesic_jacobian_with_step(p, x, y, FD_STEP_FACTOR * p.cfg.b)
}

fn geodesic_jacobian_with_step(p: &Phantom, x: Vec3, y: Vec3, h: f64) -> Result<f64> {
    let mut cols = [[0.0; 3]; 3];
    for dim in 0..3 {
        let mut xp = x;
        let mut xm = x;
        xp[dim] += h;
        xm[dim] -= h;
        let zp = geodesic_coordinates_with_step(p, xp, y, h)?;
        let zm = geodesic_coordinates_with_step(p, xm, y, h)?;
        cols[dim] = scale(sub(zp, zm), 0.5 / h);
    }
    // det with columns d zeta / d x_dim.
    let det = cols[0][0] * (cols[1][1] * cols[2][2] - cols[1][2] * cols[2][1])
        - cols[1][0] * (cols[0][1] * cols[2][2] - cols[0][2] * cols[2][1])
        + cols[2][0] * (cols[0][1] * cols[1][2] - cols[0][2] * cols[1][1]);
    Ok(det)
}

/// Geodesic-fidelity amplitude `A = n^2(y) sqrt(J) / (4 pi n(x) tau)`.
pub fn amplitude_geodesic(p: &Phantom, x: Vec3, y: Vec3) -> Result<f64> {
    amplitude_geodesic_with_step(p, x, y, FD_STEP_FACTOR * p.cfg.b)
}

/// Same with an explicit stencil step, for step-robustness checks.
pub fn amplitude_geodesic_with_step(p: &Phantom, x: Vec3, y: Vec3, h: f64) -> Result<f64> {
    let j = geodesic_jacobian_with_step(p, x, y, h)?;
    if j <= 0.0 {
        return Err(Error::NonPositiveJacobian(j));
    }
    let tau = tau_geodesic(p, x, y)?;
    Ok(p.n(y).powi(2) * j.sqrt() / (4.0 * PI * p.n(x) * tau))
}
