//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `cargo test --release --test acceptance --
//! --nocapture` to see them). Heavy criteria share a lock so wall-clock
//! budgets are measured without interference.

use phaseless::abel::{
    kernel_q, kernel_t, AbelOptions, RadialGrid, VolterraOp,
};
use phaseless::elliptic::{poisson_solve_ball, residual_check, PoissonOptions};
use phaseless::extract::{detect_line_of_sight, extract, ExtractOptions};
use phaseless::forward::{
    synth_f1, tau_linearized, tau_straight_ray, ChordObservables, KGrid,
};
use phaseless::forward::ray::tau_geodesic;
use phaseless::geometry::{chord_grid, endpoints_from_chord, BallConfig, Chord, ChordParam};
use phaseless::phantom::{Bump, Phantom};
use phaseless::pipeline::{
    run_pipeline, ChordCounts, DataRoute, Fidelity, Method, PipelineConfig,
};
use phaseless::radon::FbpOptions;
use phaseless::volume::{compare_volumes, VolumeGrid};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};
use std::sync::Mutex;
use std::time::Instant;

/// Serializes the criteria with wall-clock budgets.
static HEAVY: Mutex<()> = Mutex::new(());

fn ball() -> BallConfig {
    BallConfig::new(1.0, 0.8, 128).unwrap()
}

/// The reference phantom: a single off-centre bump, weak enough for the
/// linearization, rich enough to light up many angular modes.
fn reference_bump() -> Bump {
    Bump {
        center: [0.12, 0.08, 0.1],
        radius: 0.42,
        amplitude: 0.01,
    }
}

fn reference_config(method: Method) -> PipelineConfig {
    PipelineConfig {
        phantom: vec![reference_bump()],
        ball: ball(),
        chords: ChordCounts {
            n_z: 64,
            n_alpha: 256,
            n_s: 256,
        },
        kgrid: None,
        method,
        fidelity: Fidelity::Linearized,
        data_route: DataRoute::Observables,
        noise_level: 0.0,
        remainder: 0.0,
        seed: 7,
        los_tol: None,
        smallness: None,
        fbp: FbpOptions::default(),
        abel: AbelOptions::default(),
        poisson: PoissonOptions::default(),
        keep_scan: false,
    }
}

fn random_unit_chord(rng: &mut ChaCha8Rng) -> Chord {
    // Synthetic chord with the requested length; extraction only reads the
    // endpoint distance.
    let d: f64 = rng.random_range(0.4..2.0);
    let z: f64 = rng.random_range(-0.5..0.5);
    Chord {
        param: ChordParam {
            z,
            alpha: rng.random_range(1e-6..TAU),
            s: rng.random_range(-0.5..0.5),
        },
        x: [d / 2.0, 0.3, z],
        y: [-d / 2.0, 0.3, z],
    }
}

#[test]
fn criterion_1_extraction_round_trip() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let opts = ExtractOptions::default();
    let mut worst_a = 0.0f64;
    let mut worst_tau = 0.0f64;
    for _ in 0..1000 {
        let chord = random_unit_chord(&mut rng);
        let d = chord.dist();
        let a: f64 = rng.random_range(0.02..0.3);
        let dtau: f64 = rng.random_range(0.005..0.15);
        let obs = ChordObservables::new(d + dtau, a, d).unwrap();
        // Grid: at least two periods of the oscillation, sampled better
        // than a twentieth of a period.
        let period = TAU / dtau;
        let k0 = rng.random_range(20.0..60.0);
        let n_k = 64;
        let grid = KGrid::new(k0, k0 + 2.5 * period, n_k).unwrap();
        assert!(grid.dk() <= period / 20.0);
        let series = synth_f1(&chord, &obs, &grid);
        let got = extract(&series, &opts).unwrap();
        assert!(!got.line_of_sight);
        worst_a = worst_a.max((got.a_hat - a).abs() / a);
        worst_tau = worst_tau.max((got.tau_hat - obs.tau).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst_a <= 1e-3 && worst_tau <= 1e-4 && elapsed < 10.0;
    println!(
        "[criterion 1] {}: 1000 chords, worst relative A error {worst_a:.2e} (<= 1e-3), \
         worst tau error {worst_tau:.2e} (<= 1e-4), {elapsed:.1}s (< 10s)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn criterion_2_line_of_sight_dichotomy() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = ball();
    let p = Phantom::new(vec![reference_bump()], cfg).unwrap();
    // Chords that miss the support: every one must classify as line of
    // sight; chords through the bump with resolvable periods must not.
    // The span must cover two periods of the excess for the positive
    // branch to have members at this phantom strength.
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let grid = KGrid::new(50.0, 15050.0, 2048).unwrap();
    let mut misclassified_missing = 0;
    let mut tested_missing = 0;
    let mut misclassified_hit = 0;
    let mut tested_hit = 0;
    for _ in 0..500 {
        let z: f64 = rng.random_range(-0.75..0.75);
        let b_z = (cfg.b * cfg.b - z * z).sqrt();
        let alpha = rng.random_range(1e-6..TAU);
        let s: f64 = rng.random_range(-0.95 * b_z..0.95 * b_z);
        let param = ChordParam { z, alpha, s };
        let (x, y) = endpoints_from_chord(&param, &cfg).unwrap();
        let chord = Chord { param, x, y };
        let tau = tau_linearized(&p, x, y);
        let d = chord.dist();
        let obs = ChordObservables::new(tau, 1.0 / (4.0 * PI * d), d).unwrap();
        let series = synth_f1(&chord, &obs, &grid);
        if tau == d {
            tested_missing += 1;
            if !detect_line_of_sight(&series, 1e-6).unwrap() {
                misclassified_missing += 1;
            }
        } else if tau - d > 2.0 * TAU / grid.span() {
            // Oscillation resolvable inside the span.
            tested_hit += 1;
            if detect_line_of_sight(&series, 1e-6).unwrap() {
                misclassified_hit += 1;
            }
        }
    }
    let pass = misclassified_missing == 0
        && misclassified_hit == 0
        && tested_missing > 100
        && tested_hit > 20;
    println!(
        "[criterion 2] {}: {tested_missing} missing-support chords all classified tau = |x-y| \
         ({misclassified_missing} errors); {tested_hit} resolvable hits classified oscillating \
         ({misclassified_hit} errors)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
#[cfg_attr(debug_assertions, ignore = "reference scale; run under --release")]
fn criterion_3_radon_path() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    // Single-threaded by the criterion's budget.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let report = pool
        .install(|| run_pipeline(&reference_config(Method::Radon), dir.path()))
        .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let rel = report.radon.as_ref().unwrap().rel_l2;

    // Radial phantom: the sinogram must not depend on the angle.
    let cfg = ball();
    let radial = Phantom::new(
        vec![Bump {
            center: [0.0; 3],
            radius: 0.5,
            amplitude: 0.01,
        }],
        cfg,
    )
    .unwrap();
    let set = chord_grid(&cfg, 4, 256, 256).unwrap();
    let table = phaseless::pipeline::observables_table(&radial, &set, Fidelity::Linearized).unwrap();
    let z = set.z_values[1];
    let (sg, _) = phaseless::radon::assemble_h_sinogram(&table, z, &cfg, 256, 256).unwrap();
    let peak = sg.data.iter().cloned().fold(0.0f64, f64::max);
    let mut dev = 0.0f64;
    for j in 0..sg.n_s() {
        for i in 0..sg.n_alpha() {
            dev = dev.max((sg.at(i, j) - sg.at(0, j)).abs());
        }
    }

    let pass = rel <= 0.10 && elapsed < 300.0 && dev < 1e-6 * peak;
    println!(
        "[criterion 3] {}: radon relative L2 {rel:.4} (<= 0.10), {elapsed:.0}s single-threaded \
         (< 300s), radial sinogram angular deviation {:.1e} of peak (< 1e-6)",
        if pass { "PASS" } else { "FAIL" },
        dev / peak
    );
    assert!(pass);
}

#[test]
fn criterion_4_kernel_identities() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    // Q_n(s, s) = 1 to 1e-12 for n <= 16.
    let mut worst_q = 0.0f64;
    for n in 0..=16 {
        for &s in &[0.05, 0.31, 0.64, 0.79] {
            worst_q = worst_q.max((kernel_q(n, s, s).unwrap() - 1.0).abs());
        }
    }
    // T_0 vanishes identically.
    let mut worst_t0 = 0.0f64;
    for k in 1..40 {
        let r = 0.02 * k as f64;
        for j in 1..=k {
            let s = 0.02 * j as f64;
            worst_t0 = worst_t0.max(kernel_t(0, r, s).unwrap().abs());
        }
    }
    // Conjugate symmetry of the angular modes, exact to round-off.
    let cfg = ball();
    let p = Phantom::new(vec![reference_bump()], cfg).unwrap();
    let set = chord_grid(&cfg, 4, 64, 32).unwrap();
    let table = phaseless::pipeline::observables_table(&p, &set, Fidelity::Linearized).unwrap();
    let z = set.z_values[2];
    let (data, _) = phaseless::abel::assemble_g(&table, z, &cfg, 64, 32).unwrap();
    let modes = phaseless::abel::fourier_modes(&data, 15).unwrap();
    let scale = modes
        .coeffs
        .iter()
        .flatten()
        .fold(0.0f64, |a, c| a.max(c.norm()));
    let mut worst_conj = 0.0f64;
    for n in 0..=15i64 {
        for (a, b) in modes.mode(-n).iter().zip(modes.mode(n)) {
            worst_conj = worst_conj.max((a - b.conj()).norm());
        }
    }
    let pass = worst_q <= 1e-12 && worst_t0 == 0.0 && worst_conj <= 1e-13 * scale.max(1.0);
    println!(
        "[criterion 4] {}: max |Q_n(s,s) - 1| = {worst_q:.2e} (<= 1e-12), max |T_0| = {worst_t0:.1e} \
         (= 0), conjugate-symmetry residue {worst_conj:.2e} (round-off)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
#[cfg_attr(debug_assertions, ignore = "reference scale; run under --release")]
fn criterion_5_volterra_oracle_equivalence() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    // Iterative route (the successive approximation of the reconstruction
    // procedure) against the dense collocation solve, modes 1..8 on a
    // 128-point radial grid.
    let grid = RadialGrid { rho0: 0.8, n: 128 };
    let rhs: Vec<f64> = grid
        .points()
        .iter()
        .map(|&s| (3.0 * s).sin() * (grid.rho0 - s))
        .collect();
    let mut lines = Vec::new();
    let mut all_pass = true;
    for n in 1..=8usize {
        let op = VolterraOp::new(n, grid);
        let direct = op.solve_collocation(&rhs);
        // Allow extra sweeps for the diagnosis; the criterion itself is
        // judged against the 50-sweep budget.
        match op.solve(&rhs, 200) {
            Ok((iterative, sweeps)) => {
                let diff = iterative
                    .iter()
                    .zip(&direct)
                    .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                let ok = diff <= 1e-8 && sweeps <= 50;
                all_pass &= ok;
                lines.push(format!(
                    "n={n}: {} ({sweeps} sweeps, route difference {diff:.1e})",
                    if ok {
                        "within budget"
                    } else {
                        "converged but over the 50-sweep budget"
                    }
                ));
            }
            Err(e) => {
                all_pass = false;
                lines.push(format!("n={n}: diverged ({e})"));
            }
        }
    }
    println!(
        "[criterion 5] {}: successive approximation vs collocation on 128-point grids: {}",
        if all_pass { "PASS" } else { "FAIL" },
        lines.join("; ")
    );
    // Known limitation, documented rather than hidden: rows near the axis
    // see an effective kernel mass of (n^2/2) ln(rho0/s), so the classical
    // iteration transiently exceeds double precision for n >= 3 and cannot
    // meet the <= 50 sweep budget there; the pipeline uses the collocation
    // solve, which the remaining criteria validate end to end.
    assert!(
        all_pass,
        "successive approximation diverges for n >= 3 on axis-reaching grids \
         (see the printed per-mode report)"
    );
}

#[test]
#[cfg_attr(debug_assertions, ignore = "reference scale; run under --release")]
fn criterion_6_abel_path_end_to_end() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let report = run_pipeline(&reference_config(Method::Both), dir.path()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let q_slices = report.abel_q_slices.as_ref().unwrap();
    let energy_max = q_slices.iter().map(|e| e.truth_energy).fold(0.0, f64::max);
    let mut worst_q = 0.0f64;
    let mut signal_slices = 0;
    for e in q_slices {
        // Slices carrying signal; the relative error of an all-zero truth
        // slice is meaningless.
        if e.truth_energy >= 0.01 * energy_max {
            signal_slices += 1;
            worst_q = worst_q.max(e.rel_l2);
        }
    }
    let beta_rel = report.abel_beta.as_ref().unwrap().rel_l2;
    let pass = worst_q <= 0.15 && beta_rel <= 0.15 && elapsed < 600.0 && signal_slices >= 20;
    println!(
        "[criterion 6] {}: worst q slice error {worst_q:.4} over {signal_slices} signal slices \
         (<= 0.15), abel beta relative L2 {beta_rel:.4} (<= 0.15), {elapsed:.0}s (< 600s)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);

    // Criterion 9 consumes the same run; stash the consistency number.
    let consistency = report.consistency.as_ref().unwrap().rel_l2;
    let radon_rel = report.radon.as_ref().unwrap().rel_l2;
    *CONSISTENCY.lock().unwrap() = Some((radon_rel, beta_rel, consistency));
}

/// Shared with criterion 9 so the two paths are compared on the same run.
static CONSISTENCY: Mutex<Option<(f64, f64, f64)>> = Mutex::new(None);

#[test]
#[cfg_attr(debug_assertions, ignore = "reference scale; run under --release")]
fn criterion_7_poisson_solver() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let b = 1.0;
    let c = 0.3;
    // Manufactured quadratic: lap(c (B^2 - |x|^2)) = -6c; the leg-shortened
    // stencil is exact on it, so recovery is limited by the solver
    // tolerance only.
    let mut q = VolumeGrid::ball(b, 64);
    let mask = q.ball_mask();
    q.fill(|_| -6.0 * c);
    for (v, m) in q.values.iter_mut().zip(&mask) {
        if !m {
            *v = 0.0;
        }
    }
    let mut truth = VolumeGrid::ball(b, 64);
    truth.fill(|p| c * (b * b - (p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).max(0.0));
    let (beta, _report) = poisson_solve_ball(&q, &PoissonOptions::default()).unwrap();
    let quad_rel = compare_volumes(&beta, &truth, 0.999).unwrap().rel_l2;
    let residual = residual_check(&q, &beta).unwrap();

    // Order measurement on a quartic (outside the stencil's exactness
    // class): error ratio >= 3 per grid doubling.
    let err = |n: usize| {
        let mut q = VolumeGrid::ball(b, n);
        q.fill(|p| {
            let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
            if r2 < b * b {
                c * (20.0 * r2 - 12.0 * b * b) / (b * b)
            } else {
                0.0
            }
        });
        let mut truth = VolumeGrid::ball(b, n);
        truth.fill(|p| {
            let d = (b * b - (p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).max(0.0);
            c * d * d / (b * b)
        });
        let opts = PoissonOptions {
            tol: 1e-10,
            max_iter: 4000,
        };
        let (beta, _) = poisson_solve_ball(&q, &opts).unwrap();
        compare_volumes(&beta, &truth, 0.999).unwrap().rel_l2
    };
    let (e1, e2, e3) = (err(16), err(32), err(64));
    let (r1, r2) = (e1 / e2, e2 / e3);

    let pass = quad_rel <= 1e-6 && residual <= 1e-8 && r1 >= 3.0 && r2 >= 3.0;
    println!(
        "[criterion 7] {}: manufactured quadratic recovered to {quad_rel:.1e}, residual \
         {residual:.1e} (<= 1e-8), quartic convergence ratios {r1:.2}, {r2:.2} (>= 3)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn criterion_8_linearization_fidelity() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = ball();
    let make = |eps: f64| {
        Phantom::new(
            vec![Bump {
                center: [0.0; 3],
                radius: 0.5,
                amplitude: eps,
            }],
            cfg,
        )
        .unwrap()
    };
    // A few chords crossing the bump at different depths.
    let chords: Vec<([f64; 3], [f64; 3])> = vec![
        ([1.0, 0.0, 0.0], [-1.0, 1e-3, 0.0]),
        ([0.8, 0.6, 0.0], [-0.936, -0.352, 0.0]),
        ([0.99499, 0.0, 0.1], [-0.9, 0.42544, 0.1]),
    ];
    let gap_straight = |eps: f64| -> f64 {
        let p = make(eps);
        chords
            .iter()
            .map(|&(x, y)| tau_straight_ray(&p, x, y) - tau_geodesic(&p, x, y).unwrap())
            .sum()
    };
    let gap_model = |eps: f64| -> f64 {
        let p = make(eps);
        chords
            .iter()
            .map(|&(x, y)| (tau_geodesic(&p, x, y).unwrap() - tau_linearized(&p, x, y)).abs())
            .sum()
    };
    let ratio = gap_straight(0.01) / gap_straight(0.005);
    let model_ratio = gap_model(0.01) / gap_model(0.005);
    let pass = (3.2..=4.8).contains(&ratio);
    println!(
        "[criterion 8] {}: straight-chord vs geodesic travel-time gap ratio {ratio:.3} at \
         eps halving (4 +- 20%); for reference, the tau_linearized gap ratio is \
         {model_ratio:.3} (first order: its beta-integral weighs the perturbation twice the \
         tangent rate)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
#[cfg_attr(debug_assertions, ignore = "reference scale; run under --release")]
fn criterion_9_paths_agree() {
    // Runs after criterion 6 when the suite executes sequentially; run the
    // reference pipeline here too if needed (e.g. single-test invocation).
    let stash = *CONSISTENCY.lock().unwrap();
    let (radon_rel, abel_rel, consistency) = match stash {
        Some(t) => t,
        None => {
            let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
            let dir = tempfile::tempdir().unwrap();
            let report = run_pipeline(&reference_config(Method::Both), dir.path()).unwrap();
            (
                report.radon.as_ref().unwrap().rel_l2,
                report.abel_beta.as_ref().unwrap().rel_l2,
                report.consistency.as_ref().unwrap().rel_l2,
            )
        }
    };
    let pass = consistency <= 0.20;
    println!(
        "[criterion 9] {}: radon-path and abel-path beta agree to {consistency:.4} relative L2 \
         (<= 0.20; individually {radon_rel:.4} and {abel_rel:.4} from the truth)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
#[cfg_attr(debug_assertions, ignore = "reference scale; run under --release")]
fn full_phaseless_chain_small_scale() {
    // Not a numbered criterion: the complete intensity-only chain
    // (synthesize k-series, extract, reconstruct) at a scale whose
    // frequency span resolves the phantom, checking the pieces compose.
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = PipelineConfig {
        phantom: vec![Bump {
            center: [0.0, 0.0, 0.0],
            radius: 0.62,
            amplitude: 0.028,
        }],
        ball: BallConfig::new(1.0, 0.8, 64).unwrap(),
        chords: ChordCounts {
            n_z: 24,
            n_alpha: 64,
            n_s: 64,
        },
        kgrid: Some(KGrid::new(20.0, 30000.0, 4096).unwrap()),
        method: Method::Radon,
        fidelity: Fidelity::Linearized,
        data_route: DataRoute::Phaseless,
        noise_level: 0.0,
        remainder: 0.0,
        seed: 99,
        los_tol: None,
        smallness: None,
        fbp: FbpOptions::default(),
        abel: AbelOptions::default(),
        poisson: PoissonOptions::default(),
        keep_scan: false,
    };
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&cfg, dir.path()).unwrap();
    let rel = report.radon.as_ref().unwrap().rel_l2;
    let pass = rel <= 0.15;
    println!(
        "[phaseless chain] {}: intensity-only radon reconstruction at small scale, \
         relative L2 {rel:.4} (<= 0.15)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}
