//! Command-line driver for the phaseless reconstruction pipelines.

use clap::{Parser, Subcommand};
use phaseless::abel::{reconstruct_q_slices, AbelSliceReport};
use phaseless::elliptic::{poisson_solve_ball, residual_check, PoissonOptions};
use phaseless::error::{Error, Result};
use phaseless::extract::{extract, ExtractOptions, ObsRow, ObsTable};
use phaseless::forward::KSeries;
use phaseless::geometry::chord_grid;
use phaseless::pipeline::{
    dump_sinogram_csv, dump_volume_csv, run_pipeline, truth_volume,
    PipelineConfig,
};
use phaseless::radon::{assemble_h_sinogram, reconstruct_beta_radon, stack_slices};
use phaseless::volume::compare_volumes;
use phaseless::{io, pipeline};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "phaseless",
    about = "Reconstruct a weak refractive-index perturbation from intensity-only wave data",
    version
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a configuration and write the analytic ground-truth volume.
    Phantom {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Synthesize an intensity scan (.pkscan) for the configured chords.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Seed override for the noise stream.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recover per-chord travel times and amplitudes from a scan.
    Extract {
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Travel-time reconstruction (filtered backprojection) from observables.
    ReconRadon {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write per-slice sinograms and plot-ready CSV extracts.
        #[arg(long)]
        dump_csv: bool,
    },
    /// Amplitude reconstruction (integral geometry) from observables.
    ReconAbel {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        dump_csv: bool,
    },
    /// Solve the Dirichlet problem `lap beta = q` on the ball.
    Poisson {
        /// Input q volume (.pkvol).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Relative residual target.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Compare two volumes and print error metrics as JSON.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Mask radius; defaults to the full ball.
        #[arg(long)]
        mask_radius: Option<f64>,
    },
    /// Run the full pipeline from a JSON configuration.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Emit plot-ready CSV extracts of volumes and a mid sinogram.
        #[arg(long)]
        dump_csv: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        pipeline::configure_threads(threads);
    }
    match run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)?;
    PipelineConfig::from_json(&text)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom { config, output } => {
            let cfg = load_config(&config)?;
            let phantom = cfg.phantom()?;
            std::fs::create_dir_all(&output)?;
            let truth = truth_volume(&phantom);
            io::write_volume(&output.join("beta_true.pkvol"), &truth)?;
            println!(
                "phantom ok: {} bumps, sup beta = {:.4e}",
                phantom.bumps.len(),
                truth.values.iter().cloned().fold(0.0f64, f64::max)
            );
            Ok(())
        }
        Command::Simulate {
            config,
            output,
            seed,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let kgrid = cfg.kgrid.ok_or_else(|| {
                Error::Config("simulate needs a kgrid in the configuration".into())
            })?;
            let phantom = cfg.phantom()?;
            std::fs::create_dir_all(&output)?;
            let set = chord_grid(&cfg.ball, cfg.chords.n_z, cfg.chords.n_alpha, cfg.chords.n_s)?;
            io::write_chords(&output.join("chords.pkchords"), &set)?;
            let estimated = set.chords.len() * kgrid.n_k * 8;
            if estimated > 2 << 30 {
                return Err(Error::Config(format!(
                    "scan would need {} GiB; shrink the chord grid or the k grid",
                    estimated >> 30
                )));
            }
            let rows = simulate_rows(&phantom, &set, &kgrid, &cfg)?;
            let header = io::ScanHeader {
                ball: cfg.ball,
                kgrid,
                kind: phaseless::forward::ScanKind::F1,
                noise_level: cfg.noise_level,
                remainder: cfg.remainder,
                seed: cfg.seed,
                chords: "chords.pkchords".into(),
                n_chords: rows.len(),
            };
            io::write_scan(&output.join("scan.pkscan"), &header, &rows)?;
            println!("wrote {} chord series to scan.pkscan", rows.len());
            Ok(())
        }
        Command::Extract { scan, output } => {
            let (header, rows) = io::read_scan(&scan)?;
            let chords_path = scan
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(&header.chords);
            let set = io::read_chords(&chords_path, header.ball.grid_n)?;
            if set.chords.len() != rows.len() {
                return Err(Error::Format(format!(
                    "scan holds {} rows but the chord table {} chords",
                    rows.len(),
                    set.chords.len()
                )));
            }
            let exopts = ExtractOptions::for_noise_level(header.noise_level);
            let mut table = ObsTable::default();
            let mut failures = 0usize;
            for (ch, values) in set.chords.iter().zip(rows) {
                let series = KSeries {
                    chord: *ch,
                    grid: header.kgrid,
                    kind: header.kind,
                    values,
                };
                match extract(&series, &exopts) {
                    Ok(r) => table.rows.push(ObsRow {
                        param: ch.param,
                        dist: ch.dist(),
                        a_hat: r.a_hat,
                        tau_hat: r.tau_hat,
                        line_of_sight: r.line_of_sight,
                        quality: r.quality,
                    }),
                    Err(_) => {
                        failures += 1;
                        table.rows.push(ObsRow {
                            param: ch.param,
                            dist: ch.dist(),
                            a_hat: 1.0 / (4.0 * std::f64::consts::PI * ch.dist()),
                            tau_hat: ch.dist(),
                            line_of_sight: true,
                            quality: f64::NAN,
                        });
                    }
                }
            }
            if let Some(parent) = output.parent() {
                std::fs::create_dir_all(parent)?;
            }
            io::write_obs(&output, &table)?;
            println!(
                "extracted {} chords ({failures} unresolvable, read as line of sight)",
                table.rows.len()
            );
            Ok(())
        }
        Command::ReconRadon {
            config,
            obs,
            output,
            dump_csv,
        } => {
            let cfg = load_config(&config)?;
            let table = io::read_obs(&obs)?;
            std::fs::create_dir_all(&output)?;
            let (vol, missing) = reconstruct_beta_radon(
                &table,
                &cfg.ball,
                cfg.chords.n_alpha,
                cfg.chords.n_s,
                &cfg.fbp,
            )?;
            io::write_volume(&output.join("beta_radon.pkvol"), &vol)?;
            if dump_csv {
                dump_volume_csv(&vol, &output.join("beta_radon_midplane.csv"))?;
                let zs = table.slice_heights(1e-9 * cfg.ball.b);
                let z = zs[zs.len() / 2];
                let (sg, _) =
                    assemble_h_sinogram(&table, z, &cfg.ball, cfg.chords.n_alpha, cfg.chords.n_s)?;
                io::write_sinogram(&output.join("h_mid.pksino"), &sg)?;
                dump_sinogram_csv(&sg, &output.join("h_mid.csv"))?;
            }
            if missing > 0 {
                eprintln!("warning: {missing} sinogram cells had no matching chord");
            }
            println!("wrote beta_radon.pkvol");
            Ok(())
        }
        Command::ReconAbel {
            config,
            obs,
            output,
            dump_csv,
        } => {
            let cfg = load_config(&config)?;
            let table = io::read_obs(&obs)?;
            std::fs::create_dir_all(&output)?;
            let (slices, reports) = reconstruct_q_slices(
                &table,
                &cfg.ball,
                cfg.chords.n_alpha,
                cfg.chords.n_s,
                &cfg.abel,
            )?;
            let q_vol = stack_slices(&slices, &cfg.ball);
            io::write_volume(&output.join("q_abel.pkvol"), &q_vol)?;
            let (beta, poisson_report) = poisson_solve_ball(&q_vol, &cfg.poisson)?;
            io::write_volume(&output.join("beta_abel.pkvol"), &beta)?;
            if dump_csv {
                dump_volume_csv(&q_vol, &output.join("q_abel_midplane.csv"))?;
                dump_volume_csv(&beta, &output.join("beta_abel_midplane.csv"))?;
            }
            report_abel(&reports);
            println!(
                "wrote q_abel.pkvol and beta_abel.pkvol (poisson residual {:.2e})",
                poisson_report.residual
            );
            Ok(())
        }
        Command::Poisson { input, output, tol } => {
            let q = io::read_volume(&input)?;
            let opts = PoissonOptions {
                tol,
                ..PoissonOptions::default()
            };
            let (beta, report) = poisson_solve_ball(&q, &opts)?;
            if let Some(parent) = output.parent() {
                std::fs::create_dir_all(parent)?;
            }
            io::write_volume(&output, &beta)?;
            let res = residual_check(&q, &beta)?;
            println!(
                "solved in {} iterations, residual {:.3e} (checked {:.3e})",
                report.iterations, report.residual, res
            );
            Ok(())
        }
        Command::Compare { a, b, mask_radius } => {
            let va = io::read_volume(&a)?;
            let vb = io::read_volume(&b)?;
            let mask = mask_radius.unwrap_or(va.b);
            let metrics = compare_volumes(&va, &vb, mask)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&metrics)
                    .map_err(|e| Error::Format(e.to_string()))?
            );
            Ok(())
        }
        Command::Pipeline {
            config,
            output,
            seed,
            dump_csv,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run_pipeline(&cfg, &output)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if dump_csv {
                for name in ["beta_true", "beta_radon", "beta_abel", "q_abel"] {
                    let path = output.join(format!("{name}.pkvol"));
                    if path.exists() {
                        let vol = io::read_volume(&path)?;
                        dump_volume_csv(&vol, &output.join(format!("{name}_midplane.csv")))?;
                    }
                }
            }
            let brief: Vec<String> = report
                .timings
                .iter()
                .map(|t| format!("{} {:.2}s", t.stage, t.seconds))
                .collect();
            println!("stages: {}", brief.join(", "));
            if let Some(m) = &report.radon {
                println!("radon: rel L2 {:.4}, rel Linf {:.4}", m.rel_l2, m.rel_linf);
            }
            if let Some(m) = &report.abel_beta {
                println!("abel:  rel L2 {:.4}, rel Linf {:.4}", m.rel_l2, m.rel_linf);
            }
            if let Some(m) = &report.consistency {
                println!("radon vs abel: rel L2 {:.4}", m.rel_l2);
            }
            println!("report written to {}", output.join("run_report.json").display());
            Ok(())
        }
    }
}

fn simulate_rows(
    phantom: &phaseless::phantom::Phantom,
    set: &phaseless::geometry::ChordSet,
    kgrid: &phaseless::forward::KGrid,
    cfg: &PipelineConfig,
) -> Result<Vec<Vec<f64>>> {
    let opts = phaseless::forward::SynthOptions {
        remainder: cfg.remainder,
        noise_level: cfg.noise_level,
    };
    Ok(pipeline::synthesize_scan_rows(
        phantom, set, kgrid, opts, cfg.seed,
    ))
}

fn report_abel(reports: &[AbelSliceReport]) {
    let solved: usize = reports.iter().map(|r| r.modes_solved).sum();
    let skipped: usize = reports.iter().map(|r| r.modes_skipped).sum();
    let discarded: usize = reports.iter().map(|r| r.modes_discarded).sum();
    println!("abel modes: {solved} solved, {skipped} skipped, {discarded} discarded");
}
