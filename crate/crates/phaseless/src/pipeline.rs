//! End-to-end orchestration: phantom -> forward data -> extraction ->
//! reconstruction -> metrics, with every stage materialized on disk so runs
//! can be resumed and methods compared on identical inputs.

use crate::abel::{reconstruct_q_slices, AbelOptions, AbelSliceReport};
use crate::elliptic::{poisson_solve_ball, PoissonOptions};
use crate::error::{Error, Result};
use crate::extract::{extract, ExtractOptions, ObsRow, ObsTable};
use crate::forward::{
    observables_geodesic, observables_linearized, synth_f1_with, ChordObservables, KGrid,
    SynthOptions,
};
use crate::geometry::{chord_grid, BallConfig, Chord, ChordSet};
use crate::phantom::{Bump, Phantom, SmallnessGate};
use crate::radon::{reconstruct_beta_radon, stack_slices, FbpOptions, SliceImage};
use crate::volume::{compare_volumes, VolumeGrid, VolumeMetrics};
use crate::{io, radon};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChordCounts {
    pub n_z: usize,
    pub n_alpha: usize,
    pub n_s: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Radon,
    Abel,
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    /// Travel times and amplitudes from the straight-chord linearized model.
    #[default]
    Linearized,
    /// Two-point ray shooting; orders of magnitude slower, intended for
    /// small chord grids.
    Geodesic,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataRoute {
    /// Feed travel times and amplitudes straight into the reconstructions.
    #[default]
    Observables,
    /// Synthesize intensity-vs-frequency series per chord and run the
    /// extraction stage; requires a frequency grid able to resolve the
    /// phantom's travel-time perturbations (span over twice the oscillation
    /// period).
    Phaseless,
}

/// Full run description; unknown fields are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub phantom: Vec<Bump>,
    pub ball: BallConfig,
    pub chords: ChordCounts,
    #[serde(default)]
    pub kgrid: Option<KGrid>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub fidelity: Fidelity,
    #[serde(default)]
    pub data_route: DataRoute,
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default)]
    pub remainder: f64,
    #[serde(default)]
    pub seed: u64,
    /// Line-of-sight tolerance override; the default follows the noise
    /// level.
    #[serde(default)]
    pub los_tol: Option<f64>,
    #[serde(default)]
    pub smallness: Option<SmallnessGate>,
    #[serde(default)]
    pub fbp: FbpOptions,
    #[serde(default)]
    pub abel: AbelOptions,
    #[serde(default)]
    pub poisson: PoissonOptions,
    /// Write the synthesized scan to disk on the phaseless route (off by
    /// default: scan files grow as chords x samples).
    #[serde(default)]
    pub keep_scan: bool,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        BallConfig::new(self.ball.b, self.ball.r, self.ball.grid_n)?;
        for (name, v) in [
            ("n_z", self.chords.n_z),
            ("n_alpha", self.chords.n_alpha),
            ("n_s", self.chords.n_s),
        ] {
            if v < 4 {
                return Err(Error::Config(format!("chords.{name} must be >= 4, got {v}")));
            }
        }
        if self.data_route == DataRoute::Phaseless && self.kgrid.is_none() {
            return Err(Error::Config(
                "the phaseless data route needs a kgrid".into(),
            ));
        }
        if let Some(k) = &self.kgrid {
            KGrid::new(k.k0, k.k_max, k.n_k)?;
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!(
                "noise_level must lie in [0, 1), got {}",
                self.noise_level
            )));
        }
        Ok(())
    }

    pub fn phantom(&self) -> Result<Phantom> {
        Phantom::with_gate(
            self.phantom.clone(),
            self.ball,
            self.smallness.unwrap_or_default(),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything a run produced: timings, per-method error metrics against the
/// analytic phantom, diagnostics and the list of files written.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub timings: Vec<StageTiming>,
    pub radon: Option<VolumeMetrics>,
    pub abel_beta: Option<VolumeMetrics>,
    /// Per-slice relative L2 error of the recovered q outside the axis mask.
    pub abel_q_slices: Option<Vec<QSliceError>>,
    pub abel_reports: Option<Vec<AbelSliceReport>>,
    /// Radon-path beta against abel-path beta, when both ran.
    pub consistency: Option<VolumeMetrics>,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
}

struct Stages {
    timings: Vec<StageTiming>,
}

impl Stages {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.timings.push(StageTiming {
            stage: name.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }
}

/// Observables for every chord of the set, by the configured fidelity.
pub fn observables_table(p: &Phantom, set: &ChordSet, fidelity: Fidelity) -> Result<ObsTable> {
    let rows: Vec<ObsRow> = set
        .chords
        .par_iter()
        .map(|ch| -> Result<ObsRow> {
            let obs = match fidelity {
                Fidelity::Linearized => observables_linearized(p, ch),
                Fidelity::Geodesic => observables_geodesic(p, ch)?,
            };
            Ok(obs_row(ch, &obs))
        })
        .collect::<Result<_>>()?;
    Ok(ObsTable { rows })
}

fn obs_row(ch: &Chord, obs: &ChordObservables) -> ObsRow {
    ObsRow {
        param: ch.param,
        dist: obs.dist,
        a_hat: obs.a,
        tau_hat: obs.tau,
        line_of_sight: obs.tau - obs.dist <= 1e-14 * obs.dist,
        quality: 0.0,
    }
}

/// Per-chord noise stream: decorrelated, order-independent.
fn chord_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Cap the global worker pool; call once, before any parallel work.
pub fn configure_threads(threads: usize) {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .ok();
}

/// Synthesize the scattered-field intensity rows for a chord set, one row
/// per chord in set order (the payload of a `.pkscan`).
pub fn synthesize_scan_rows(
    p: &Phantom,
    set: &ChordSet,
    kgrid: &KGrid,
    opts: SynthOptions,
    seed: u64,
) -> Vec<Vec<f64>> {
    set.chords
        .par_iter()
        .enumerate()
        .map(|(i, ch)| {
            let obs = observables_linearized(p, ch);
            let mut rng = chord_rng(seed, i);
            synth_f1_with(ch, &obs, kgrid, opts, &mut rng).values
        })
        .collect()
}

/// Synthesize intensity series and run the extraction; chords whose series
/// cannot be classified (span below one oscillation period) fall back to the
/// line-of-sight reading and are counted.
fn phaseless_observables(
    p: &Phantom,
    set: &ChordSet,
    kgrid: &KGrid,
    opts: SynthOptions,
    seed: u64,
    exopts: &ExtractOptions,
    keep_rows: bool,
) -> Result<(ObsTable, Option<Vec<Vec<f64>>>, usize)> {
    let results: Vec<(ObsRow, Option<Vec<f64>>, bool)> = set
        .chords
        .par_iter()
        .enumerate()
        .map(|(i, ch)| -> Result<(ObsRow, Option<Vec<f64>>, bool)> {
            let obs = observables_linearized(p, ch);
            let mut rng = chord_rng(seed, i);
            let series = synth_f1_with(ch, &obs, kgrid, opts, &mut rng);
            let (row, fell_back) = match extract(&series, exopts) {
                Ok(r) => (
                    ObsRow {
                        param: ch.param,
                        dist: obs.dist,
                        a_hat: r.a_hat,
                        tau_hat: r.tau_hat,
                        line_of_sight: r.line_of_sight,
                        quality: r.quality,
                    },
                    false,
                ),
                Err(Error::Span(_))
                | Err(Error::DegenerateData(_))
                | Err(Error::InconsistentData(_)) => (
                    // Unresolvable oscillation: the travel-time excess is
                    // below the span resolution, read it as line of sight.
                    ObsRow {
                        param: ch.param,
                        dist: obs.dist,
                        a_hat: 1.0 / (4.0 * std::f64::consts::PI * obs.dist),
                        tau_hat: obs.dist,
                        line_of_sight: true,
                        quality: f64::NAN,
                    },
                    true,
                ),
                Err(e) => return Err(e),
            };
            let kept = keep_rows.then(|| series.values);
            Ok((row, kept, fell_back))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(results.len());
    let mut scan_rows = keep_rows.then(Vec::new);
    let mut fallbacks = 0;
    for (row, kept, fb) in results {
        rows.push(row);
        if let (Some(acc), Some(values)) = (scan_rows.as_mut(), kept) {
            acc.push(values);
        }
        fallbacks += fb as usize;
    }
    Ok((ObsTable { rows }, scan_rows, fallbacks))
}

/// Analytic ground-truth volume of the phantom.
pub fn truth_volume(p: &Phantom) -> VolumeGrid {
    let mut vol = VolumeGrid::ball(p.cfg.b, p.cfg.grid_n);
    let n = vol.n;
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|iz| {
            let vol = vol.clone();
            (0..n * n).map(move |k| {
                let (iy, ix) = (k / n, k % n);
                p.beta(vol.center(ix, iy, iz))
            })
        })
        .collect();
    vol.values = values;
    vol
}

/// Per-slice comparison of a recovered q image against the analytic
/// Laplacian of the phantom, over pixels outside the axis mask and inside
/// the support radius.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QSliceError {
    pub z: f64,
    /// Relative L2 error; 0 when both fields vanish, 1 when only the truth
    /// does.
    pub rel_l2: f64,
    /// L2 mass of the analytic q in this slice (for weighing slices by how
    /// much signal they actually carry).
    pub truth_energy: f64,
    /// Absolute L2 error, comparable across slices.
    pub abs_l2: f64,
}

/// Per-slice q errors; see [`QSliceError`].
pub fn q_slice_errors(
    p: &Phantom,
    slices: &[SliceImage],
    n_s: usize,
    r_min_cells: usize,
) -> Vec<QSliceError> {
    slices
        .par_iter()
        .map(|img| {
            let rho0 = (p.cfg.r * p.cfg.r - img.z * img.z).max(0.0).sqrt();
            let r_min = r_min_cells as f64 * rho0 / (n_s / 2) as f64;
            let mut num = 0.0;
            let mut den = 0.0;
            for iy in 0..img.n {
                for ix in 0..img.n {
                    let (x, y) = (img.coord(ix), img.coord(iy));
                    let r = x.hypot(y);
                    if r < r_min || r >= rho0 {
                        continue;
                    }
                    let truth = p.laplacian_beta([x, y, img.z]);
                    let got = img.values[iy * img.n + ix];
                    num += (got - truth) * (got - truth);
                    den += truth * truth;
                }
            }
            QSliceError {
                z: img.z,
                rel_l2: if den > 0.0 {
                    (num / den).sqrt()
                } else if num > 0.0 {
                    1.0
                } else {
                    0.0
                },
                truth_energy: den.sqrt(),
                abs_l2: num.sqrt(),
            }
        })
        .collect()
}

/// Run the configured pipeline, writing artifacts and the report under
/// `out_dir`.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<RunReport> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut stages = Stages {
        timings: Vec::new(),
    };
    let mut warnings = Vec::new();
    let mut outputs = Vec::new();
    let record = |path: PathBuf, outputs: &mut Vec<String>| {
        outputs.push(path.file_name().unwrap().to_string_lossy().into_owned());
        path
    };

    let phantom = stages.run("phantom", || config.phantom())?;
    let truth = stages.run("truth-volume", || Ok(truth_volume(&phantom)))?;
    io::write_volume(
        &record(out_dir.join("beta_true.pkvol"), &mut outputs),
        &truth,
    )?;

    let set = stages.run("chords", || {
        chord_grid(
            &config.ball,
            config.chords.n_z,
            config.chords.n_alpha,
            config.chords.n_s,
        )
    })?;
    io::write_chords(&record(out_dir.join("chords.pkchords"), &mut outputs), &set)?;

    let table = match config.data_route {
        DataRoute::Observables => {
            stages.run("observables", || observables_table(&phantom, &set, config.fidelity))?
        }
        DataRoute::Phaseless => {
            if config.fidelity == Fidelity::Geodesic {
                warnings.push(
                    "phaseless route always synthesizes from the linearized model".into(),
                );
            }
            let kgrid = config.kgrid.as_ref().unwrap();
            let opts = SynthOptions {
                remainder: config.remainder,
                noise_level: config.noise_level,
            };
            let exopts = match config.los_tol {
                Some(tol) => ExtractOptions { los_tol: tol },
                None => ExtractOptions::for_noise_level(config.noise_level),
            };
            let keep = config.keep_scan;
            let (table, scan_rows, fallbacks) = stages.run("simulate-extract", || {
                phaseless_observables(&phantom, &set, kgrid, opts, config.seed, &exopts, keep)
            })?;
            if fallbacks > 0 {
                warnings.push(format!(
                    "{fallbacks} of {} chords had unresolvable oscillation periods and were \
                     read as line-of-sight",
                    set.chords.len()
                ));
            }
            if let Some(rows) = scan_rows {
                let header = io::ScanHeader {
                    ball: config.ball,
                    kgrid: *kgrid,
                    kind: crate::forward::ScanKind::F1,
                    noise_level: config.noise_level,
                    remainder: config.remainder,
                    seed: config.seed,
                    chords: "chords.pkchords".into(),
                    n_chords: rows.len(),
                };
                io::write_scan(
                    &record(out_dir.join("scan.pkscan"), &mut outputs),
                    &header,
                    &rows,
                )?;
            }
            table
        }
    };
    io::write_obs(&record(out_dir.join("observables.pkobs"), &mut outputs), &table)?;

    let mut radon_volume = None;
    let mut radon_metrics = None;
    if matches!(config.method, Method::Radon | Method::Both) {
        let (vol, missing) = stages.run("recon-radon", || {
            reconstruct_beta_radon(
                &table,
                &config.ball,
                config.chords.n_alpha,
                config.chords.n_s,
                &config.fbp,
            )
        })?;
        if missing > 0 {
            warnings.push(format!("radon path: {missing} sinogram cells had no chord"));
        }
        io::write_volume(&record(out_dir.join("beta_radon.pkvol"), &mut outputs), &vol)?;
        radon_metrics = Some(compare_volumes(&vol, &truth, config.ball.r)?);
        radon_volume = Some(vol);
    }

    let mut abel_metrics = None;
    let mut abel_q_slices = None;
    let mut abel_reports = None;
    let mut abel_volume = None;
    if matches!(config.method, Method::Abel | Method::Both) {
        let (slices, reports) = stages.run("recon-abel-q", || {
            reconstruct_q_slices(
                &table,
                &config.ball,
                config.chords.n_alpha,
                config.chords.n_s,
                &config.abel,
            )
        })?;
        abel_q_slices = Some(q_slice_errors(
            &phantom,
            &slices,
            config.chords.n_s,
            config.abel.r_min_cells,
        ));
        let q_vol = stack_slices(&slices, &config.ball);
        io::write_volume(&record(out_dir.join("q_abel.pkvol"), &mut outputs), &q_vol)?;
        let missing: usize = reports.iter().map(|r| r.missing_cells).sum();
        if missing > 0 {
            warnings.push(format!("abel path: {missing} polar cells had no chord"));
        }
        let discarded: usize = reports.iter().map(|r| r.modes_discarded).sum();
        if discarded > 0 {
            warnings.push(format!(
                "abel path: {discarded} angular modes discarded as amplified noise \
                 (radial grid too coarse for them)"
            ));
        }
        abel_reports = Some(reports);
        let (beta, poisson_report) =
            stages.run("poisson", || poisson_solve_ball(&q_vol, &config.poisson))?;
        if poisson_report.mass_outside_support > 0.2 {
            warnings.push(format!(
                "poisson source has {:.0}% of its mass near the sphere",
                100.0 * poisson_report.mass_outside_support
            ));
        }
        io::write_volume(&record(out_dir.join("beta_abel.pkvol"), &mut outputs), &beta)?;
        abel_metrics = Some(compare_volumes(&beta, &truth, config.ball.r)?);
        abel_volume = Some(beta);
    }

    let consistency = match (&radon_volume, &abel_volume) {
        (Some(a), Some(b)) => Some(compare_volumes(a, b, config.ball.r)?),
        _ => None,
    };

    let report = RunReport {
        config: config.clone(),
        timings: stages.timings,
        radon: radon_metrics,
        abel_beta: abel_metrics,
        abel_q_slices,
        abel_reports,
        consistency,
        warnings,
        outputs,
    };
    let report_json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    std::fs::write(out_dir.join("run_report.json"), report_json)?;
    Ok(report)
}

/// Write plot-ready CSV extracts of a volume: the mid-height plane and the
/// axial profile.
pub fn dump_volume_csv(vol: &VolumeGrid, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "x,y,z,value")?;
    let mid = vol.n / 2;
    for iy in 0..vol.n {
        for ix in 0..vol.n {
            let c = vol.center(ix, iy, mid);
            writeln!(
                w,
                "{},{},{},{}",
                c[0],
                c[1],
                c[2],
                vol.values[vol.idx(ix, iy, mid)]
            )?;
        }
    }
    Ok(())
}

/// Write a sinogram as plot-ready CSV.
pub fn dump_sinogram_csv(sg: &radon::Sinogram, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "alpha,s,value")?;
    for (i, &alpha) in sg.alphas.iter().enumerate() {
        for (j, &s) in sg.s_values.iter().enumerate() {
            writeln!(w, "{alpha},{s},{}", sg.at(i, j))?;
        }
    }
    Ok(())
}
