//! Analytic ground-truth media `n(x)^2 = 1 + beta(x)`.
//!
//! The perturbation is a sum of smooth compactly supported bumps
//! `eps * exp(1 - 1/(1 - |x-c|^2/a^2))`, which is C-infinity, vanishes with
//! all derivatives on the bump boundary and has closed-form gradient and
//! Laplacian. Reconstruction errors are therefore measured against exact
//! values rather than against a sampled reference.

use crate::error::{Error, Result};
use crate::geometry::BallConfig;
use crate::math::{dot, sub, Vec3};
use serde::{Deserialize, Serialize};

/// One smooth bump: centre, radius and peak amplitude.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec3,
    pub radius: f64,
    pub amplitude: f64,
}

/// Smallness thresholds accepted by the linearized reconstruction paths.
///
/// The linearization assumes the C^2 norm of beta is small; these defaults
/// keep the quadratic remainder near the percent level.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SmallnessGate {
    /// Maximum allowed sup |beta|.
    pub max_beta: f64,
    /// Maximum allowed sup |laplacian(beta)| * R^2.
    pub max_curvature: f64,
}

impl Default for SmallnessGate {
    fn default() -> Self {
        SmallnessGate {
            max_beta: 0.05,
            max_curvature: 1.0,
        }
    }
}

/// A collection of bumps inside the support ball.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phantom {
    pub bumps: Vec<Bump>,
    pub cfg: BallConfig,
}

impl Phantom {
    /// Build a phantom, checking support containment and the smallness gate.
    pub fn new(bumps: Vec<Bump>, cfg: BallConfig) -> Result<Self> {
        Self::with_gate(bumps, cfg, SmallnessGate::default())
    }

    pub fn with_gate(bumps: Vec<Bump>, cfg: BallConfig, gate: SmallnessGate) -> Result<Self> {
        for (i, b) in bumps.iter().enumerate() {
            if b.amplitude < 0.0 {
                return Err(Error::Config(format!("bump {i}: amplitude must be >= 0")));
            }
            if b.radius <= 0.0 {
                return Err(Error::Config(format!("bump {i}: radius must be > 0")));
            }
            let reach = (dot(b.center, b.center)).sqrt() + b.radius;
            if reach > cfg.r {
                return Err(Error::Config(format!(
                    "bump {i} leaves the support ball: |center| + a = {reach} > R = {}",
                    cfg.r
                )));
            }
        }
        let p = Phantom { bumps, cfg };
        p.check_gate(&gate)?;
        Ok(p)
    }

    /// Empty medium, `beta = 0` everywhere.
    pub fn vacuum(cfg: BallConfig) -> Self {
        Phantom {
            bumps: Vec::new(),
            cfg,
        }
    }

    fn check_gate(&self, gate: &SmallnessGate) -> Result<()> {
        let max_beta: f64 = self.bumps.iter().map(|b| b.amplitude).sum();
        if max_beta > gate.max_beta {
            return Err(Error::SmallnessGate(format!(
                "sup beta = {max_beta} exceeds {}",
                gate.max_beta
            )));
        }
        // The profile is radial per bump; scan it for the curvature peak and
        // sum contributions, which upper-bounds any overlap.
        let mut max_lap: f64 = 0.0;
        for b in &self.bumps {
            let mut peak: f64 = 0.0;
            for i in 0..=4000 {
                let t = i as f64 / 4001.0;
                peak = peak.max(bump_laplacian_profile(t).abs());
            }
            max_lap += b.amplitude / (b.radius * b.radius) * peak;
        }
        let curv = max_lap * self.cfg.r * self.cfg.r;
        if curv > gate.max_curvature {
            return Err(Error::SmallnessGate(format!(
                "sup |lap beta| * R^2 = {curv:.3} exceeds {}",
                gate.max_curvature
            )));
        }
        Ok(())
    }

    /// The perturbation `beta(x) >= 0`.
    pub fn beta(&self, x: Vec3) -> f64 {
        self.bumps
            .iter()
            .map(|b| {
                let d = sub(x, b.center);
                b.amplitude * bump_profile(dot(d, d) / (b.radius * b.radius))
            })
            .sum()
    }

    /// Analytic gradient of beta.
    pub fn grad_beta(&self, x: Vec3) -> Vec3 {
        let mut g = [0.0; 3];
        for b in &self.bumps {
            let d = sub(x, b.center);
            let a2 = b.radius * b.radius;
            let t2 = dot(d, d) / a2;
            if t2 >= 1.0 {
                continue;
            }
            let w = 1.0 - t2;
            // d(psi)/du with u = |x-c|^2: psi' = -psi / (a^2 w^2).
            let dpsi_du = -bump_profile(t2) / (a2 * w * w);
            let c = 2.0 * b.amplitude * dpsi_du;
            g[0] += c * d[0];
            g[1] += c * d[1];
            g[2] += c * d[2];
        }
        g
    }

    /// Analytic Laplacian of beta (trace of the Hessian).
    pub fn laplacian_beta(&self, x: Vec3) -> f64 {
        self.bumps
            .iter()
            .map(|b| {
                let d = sub(x, b.center);
                let t2 = dot(d, d) / (b.radius * b.radius);
                b.amplitude / (b.radius * b.radius) * bump_laplacian_profile(t2)
            })
            .sum()
    }

    /// Refractive index `n(x) = sqrt(1 + beta(x)) >= 1`.
    pub fn n(&self, x: Vec3) -> f64 {
        (1.0 + self.beta(x)).sqrt()
    }

    /// Gradient of n, used by the ray tracer.
    pub fn grad_n(&self, x: Vec3) -> Vec3 {
        let g = self.grad_beta(x);
        let c = 0.5 / self.n(x);
        [c * g[0], c * g[1], c * g[2]]
    }

    /// Smallest bump radius, which sets the ray-integration step; `R` for an
    /// empty phantom.
    pub fn min_feature(&self) -> f64 {
        self.bumps
            .iter()
            .map(|b| b.radius)
            .fold(self.cfg.r, f64::min)
    }
}

/// The unit bump profile `exp(1 - 1/(1 - t^2))` as a function of `t^2`.
fn bump_profile(t2: f64) -> f64 {
    if t2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t2)).exp()
    }
}

/// Laplacian of the unit bump divided by `1/a^2`, as a function of `t^2`:
/// `psi * (4 (1-w) (1-2w) / w^4 - 6 / w^2)` with `w = 1 - t^2`.
fn bump_laplacian_profile(t2: f64) -> f64 {
    if t2 >= 1.0 {
        0.0
    } else {
        let w = 1.0 - t2;
        let psi = (1.0 - 1.0 / w).exp();
        psi * (4.0 * (1.0 - w) * (1.0 - 2.0 * w) / (w * w * w * w) - 6.0 / (w * w))
    }
}
