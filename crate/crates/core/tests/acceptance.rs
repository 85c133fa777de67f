//! Acceptance checks. Runs as a plain binary so every criterion prints a
//! PASS/FAIL line; exits non-zero when any criterion fails.

use std::time::Instant;

use mvlr::arrays::{
    alignment_probes, assemble_analog, grid_direction, Architecture, HybridConfig, Side, UraGeometry,
};
use mvlr::beam_alignment::{align_region, expected_power, select_from_mean, AlignmentSettings};
use mvlr::channel::{assemble_channel, diversity_orders, draw_amplitudes, draw_gains, CompressedPaths, Direction, PathSet};
use mvlr::estimation::{
    fit_ds_from_estimates, fit_js_from_estimates, make_training, noise_after_bf, simulate_block, uml_estimate, Basis,
    NoiseModel, RankRule, SubspaceModel, Whitener,
};
use mvlr::harness::sweep::{mean_stderr, PointResult, SweepResult};
use mvlr::harness::{run_sweep, Estimator, ExperimentConfig};
use mvlr::link::{design, spectral_efficiency};
use mvlr::numerics::{c64, inv_sqrt_hermitian, inverse_hpd, CMat, CVec};
use mvlr::scenario::{geometry_to_paths, preset_s1, AngleMode};
use mvlr::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<(bool, String)>;

fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mean_stderr(&d)
}

fn se(p: &PointResult, e: Estimator) -> Vec<f64> {
    p.se_samples(e).expect("estimator present")
}

fn crlb_match() -> Result<(bool, String)> {
    let mut cfg = ExperimentConfig::preset("s1")?;
    cfg.estimators = vec![Estimator::Uml];
    cfg.grid.snr_db = vec![-20.0, -10.0, 0.0];
    cfg.trials = 10_000;
    cfg.test_passages = 1;
    let rows = run_sweep(&cfg)?.rows();
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for r in &rows {
        let rel = (r.mse_mean - r.crlb).abs() / r.crlb;
        worst = worst.max(rel);
        detail.push(format!("{} dB: {:.4}/{:.4}", r.snr_db, r.mse_mean, r.crlb));
    }
    Ok((worst < 0.03, format!("max rel dev {:.2}% ({})", 100.0 * worst, detail.join(", "))))
}

fn span_recovery() -> Result<(bool, String)> {
    let sc = preset_s1();
    let env = &sc.environment;
    let region = sc.regions[0];
    let hybrid = HybridConfig::default_with(Architecture::FullyConnected);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let al = align_region(env, &region, &hybrid, &AlignmentSettings::default(), &mut rng)?;
    let paths = geometry_to_paths(env, &region.center_pose(), AngleMode::FrozenAtCenter, &region)?;
    let cp = CompressedPaths::new(&paths, &hybrid.tx, &hybrid.rx, Some(&al.f_rf), Some(&al.w_rf))?;
    let noise = noise_after_bf(&NoiseModel::white(0.0), &al.w_rf, hybrid.n_tx_rf, 1.0)?;
    let mut est = Vec::new();
    for _ in 0..100 {
        let h = cp.channel(&draw_gains(&cp.powers, &mut rng));
        let pilots = make_training(hybrid.n_tx_rf, hybrid.n_tx_rf, 1.0, &mut rng)?;
        est.push(uml_estimate(&simulate_block(&h, &pilots, &noise, &mut rng)?)?);
    }
    let (model, _) = fit_js_from_estimates(&est, &noise.whitener, &RankRule::default())?;
    let Basis::Joint { u } = &model.basis else { unreachable!() };
    let t = cp.t_matrix();
    let mut resid: f64 = 0.0;
    for col in t.column_iter() {
        let c = col.into_owned();
        resid = resid.max((&c - u * (u.adjoint() * &c)).norm() / c.norm());
    }
    let r_tilde = diversity_orders(&paths, &hybrid.tx, &hybrid.rx, Some((&al.f_rf, &al.w_rf)))?
        .compressed
        .expect("analog stages given")
        .r;
    let pass = resid < 1e-8 && model.rank() == r_tilde;
    Ok((pass, format!("max residual {resid:.2e}, r_hat {} vs r_tilde {r_tilde}", model.rank())))
}

fn bound_convergence() -> Result<(bool, String)> {
    let mut cfg = ExperimentConfig::preset("s1")?;
    cfg.estimators = vec![Estimator::Js, Estimator::Ds];
    cfg.grid.snr_db = vec![-10.0];
    cfg.grid.passages = vec![100, 1000];
    cfg.trials = 100;
    cfg.test_passages = 20;
    let res = run_sweep(&cfg)?;
    let pick = |l: usize, e: Estimator| {
        let p = res.point(|g| g.passages == l).expect("grid point");
        let (m, _) = mean_stderr(&p.mse_samples(e).expect("estimator"));
        (m, p.bound(e).expect("estimator"))
    };
    let (js, js_b) = pick(1000, Estimator::Js);
    let (ds, ds_b) = pick(100, Estimator::Ds);
    let (rj, rd) = ((js - js_b).abs() / js_b, (ds - ds_b).abs() / ds_b);
    Ok((
        rj < 0.15 && rd < 0.15,
        format!("JS L=1000 {js:.3} vs {js_b:.3} ({:.1}%), DS L=100 {ds:.3} vs {ds_b:.3} ({:.1}%)", 100.0 * rj, 100.0 * rd),
    ))
}

fn ordering() -> Result<(bool, String)> {
    let mut cfg = ExperimentConfig::preset("s1")?;
    cfg.grid.architectures = vec![Architecture::FullyConnected, Architecture::SubConnected];
    cfg.grid.snr_db = vec![-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0];
    cfg.grid.passages = vec![1000];
    cfg.trials = 100;
    cfg.test_passages = 10;
    let res = run_sweep(&cfg)?;
    let mut pass = true;
    let mut worst_order = f64::INFINITY;
    let mut min_gap_z = f64::INFINITY;
    for p in &res.points {
        let chain = [Estimator::Perfect, Estimator::Js, Estimator::Ds, Estimator::Uml];
        for w in chain.windows(2) {
            let (m, s) = paired(&se(p, w[0]), &se(p, w[1]));
            // standardized margin; -1 means one standard error below
            let z = if s > 0.0 { m / s } else if m >= 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
            worst_order = worst_order.min(z);
            if m < -s {
                pass = false;
                println!("    {} {} dB: SE({}) - SE({}) = {m:.4} +- {s:.4}", p.point.architecture.label(), p.point.snr_db, w[0], w[1]);
            }
        }
        if p.point.snr_db <= -5.0 {
            let (m, s) = paired(&se(p, Estimator::Js), &se(p, Estimator::Uml));
            min_gap_z = min_gap_z.min(m / s);
            if m - 1.96 * s <= 0.0 {
                pass = false;
                println!("    {} {} dB: JS-UML gap {m:.4} +- {s:.4}", p.point.architecture.label(), p.point.snr_db);
            }
        }
    }
    let gaps = |arch: Architecture| {
        let p = res.point(|g| g.architecture == arch && g.snr_db == -10.0).expect("grid point");
        let (js, _) = mean_stderr(&se(p, Estimator::Js));
        let (ds, _) = mean_stderr(&se(p, Estimator::Ds));
        let (um, _) = mean_stderr(&se(p, Estimator::Uml));
        format!("{} -10 dB: JS-UML {:.2}, DS-UML {:.2}", arch.label(), js - um, ds - um)
    };
    Ok((
        pass,
        format!(
            "worst ordering margin {worst_order:.2} stderr, min JS-UML gap {min_gap_z:.1} stderr; {}; {}",
            gaps(Architecture::FullyConnected),
            gaps(Architecture::SubConnected)
        ),
    ))
}

fn single_path() -> Result<(bool, String)> {
    let mut cfg = ExperimentConfig::preset("s2")?;
    cfg.grid.architectures = vec![Architecture::FullyConnected, Architecture::SubConnected];
    cfg.grid.snr_db = vec![-10.0, -5.0, 0.0, 5.0, 10.0];
    cfg.grid.passages = vec![1000];
    cfg.estimators = vec![Estimator::Js, Estimator::Ds, Estimator::Perfect];
    cfg.trials = 50;
    cfg.test_passages = 10;
    let res = run_sweep(&cfg)?;
    let mut worst: f64 = 0.0;
    for p in &res.points {
        for e in [Estimator::Js, Estimator::Ds] {
            let (gap, _) = paired(&se(p, Estimator::Perfect), &se(p, e));
            worst = worst.max(gap);
        }
    }
    Ok((worst < 0.2, format!("largest SE loss vs perfect CSI {worst:.4} bits/s/Hz")))
}

fn lossless_compression() -> Result<(bool, String)> {
    let fc = HybridConfig::default_with(Architecture::FullyConnected);
    let grid = |g: &UraGeometry, i: usize, j: usize| {
        let (az, el) = grid_direction(g.n_az, g.n_el, i, j).expect("realizable grid point");
        Direction::new(az, el)
    };
    let paths = PathSet::new(
        vec![grid(&fc.tx, 1, 0), grid(&fc.tx, 7, 1), grid(&fc.tx, 2, 6)],
        vec![grid(&fc.rx, 3, 0), grid(&fc.rx, 14, 7), grid(&fc.rx, 0, 2)],
        vec![0.5, 0.3, 0.2],
    )?;
    let tx_probes = alignment_probes(&fc, Side::Tx)?;
    let rx_probes = alignment_probes(&fc, Side::Rx)?;
    let mean = expected_power(&paths, &fc, &tx_probes, &rx_probes)?;
    let (ti, ri) = select_from_mean(&mean, fc.n_tx_rf, fc.n_rx_rf)?;
    let f_rf = assemble_analog(&fc, Side::Tx, &ti)?;
    let w_rf = assemble_analog(&fc, Side::Rx, &ri)?;
    let orders = diversity_orders(&paths, &fc.tx, &fc.rx, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut example = (0.0, 0.0);
    for snr_db in [-10.0, 0.0, 10.0] {
        let sigma2 = 10f64.powf(-snr_db / 10.0);
        for _ in 0..20 {
            let h = assemble_channel(&paths, &draw_amplitudes(&paths, &mut rng), &fc.tx, &fc.rx)?;
            let q = CMat::identity(fc.rx.len(), fc.rx.len()) * c64(sigma2, 0.0);
            let (fd, _) = design(&h, &CMat::identity(fc.tx.len(), fc.tx.len()), &inverse_hpd(&q)?, 1)?;
            let se_fd = spectral_efficiency(&h, &fd, &q, 1)?;
            let h_c = w_rf.adjoint() * &h * &f_rf;
            let q_c = w_rf.adjoint() * &q * &w_rf;
            let (hy, _) = design(&h_c, &f_rf, &inverse_hpd(&q_c)?, 1)?;
            let se_fc = spectral_efficiency(&h_c, &hy, &q_c, 1)?;
            if (se_fd - se_fc).abs() >= worst {
                worst = (se_fd - se_fc).abs();
                example = (se_fd, se_fc);
            }
        }
    }
    let pass = worst < 1e-6 && orders.r_t == 3 && orders.r_r == 3;
    Ok((
        pass,
        format!(
            "r_T = {}, r_R = {}, max |SE_FD - SE_FC| = {worst:.2e} (e.g. {:.6} vs {:.6})",
            orders.r_t, orders.r_r, example.0, example.1
        ),
    ))
}

fn radius_degradation() -> Result<(bool, String)> {
    let mut cfg = ExperimentConfig::preset("s2")?;
    cfg.angle_mode = AngleMode::PerPose;
    cfg.grid.architectures = vec![Architecture::FullyConnected, Architecture::SubConnected];
    cfg.grid.snr_db = vec![-5.0];
    cfg.grid.passages = vec![1000];
    cfg.grid.radius_m = Some(vec![0.5, 1.0, 2.0, 4.0]);
    cfg.estimators = vec![Estimator::Js];
    cfg.trials = 100;
    cfg.test_passages = 10;
    let res = run_sweep(&cfg)?;
    let mut pass = true;
    let mut drops = Vec::new();
    for arch in [Architecture::FullyConnected, Architecture::SubConnected] {
        let pts: Vec<&PointResult> = res.points.iter().filter(|p| p.point.architecture == arch).collect();
        let means: Vec<f64> = pts.iter().map(|p| mean_stderr(&se(p, Estimator::Js)).0).collect();
        for w in pts.windows(2) {
            let (m, s) = paired(&se(w[1], Estimator::Js), &se(w[0], Estimator::Js));
            if m > s {
                pass = false;
                println!("    {} rho {} -> {}: SE rises by {m:.4} +- {s:.4}", arch.label(), w[0].point.radius, w[1].point.radius);
            }
        }
        let drop = means[0] - means[means.len() - 1];
        drops.push(drop);
        println!(
            "    {} JS SE over rho: {}",
            arch.label(),
            means.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join(", ")
        );
    }
    pass &= drops[0] > drops[1];
    Ok((pass, format!("drop 0.5 -> 4 m: FC {:.3}, SC {:.3} bits/s/Hz", drops[0], drops[1])))
}

fn random_fit(rng: &mut ChaCha8Rng) -> Result<Vec<SubspaceModel>> {
    let n_tx = rng.random_range(1..=4);
    let n_rx = rng.random_range(1..=6);
    let b = CMat::from_fn(n_rx, n_rx, |_, _| c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let q = &b * b.adjoint() + CMat::identity(n_rx, n_rx) * c64(0.3, 0.0);
    let (_, inv_half) = inv_sqrt_hermitian(&q, 0.0)?;
    let (half, _) = inv_sqrt_hermitian(&q, 0.0)?;
    let w = Whitener { scale: 1.0, fwd: inv_half, inv: half, noise_floor: 1.0, n_tx_rf: n_tx };
    let l = rng.random_range(2..40);
    let ys: Vec<CVec> = (0..l)
        .map(|_| CVec::from_fn(n_tx * n_rx, |_, _| c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)))
        .collect();
    let rule = RankRule::Cumulative { threshold: rng.random_range(0.5..1.0) };
    Ok(vec![fit_js_from_estimates(&ys, &w, &rule)?.0, fit_ds_from_estimates(&ys, &w, &rule)?.0])
}

fn projector_properties() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut herm, mut idem, mut dewhite): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut count = 0;
    for _ in 0..50 {
        for m in random_fit(&mut rng)? {
            let p = m.whitened_projector();
            herm = herm.max((&p - p.adjoint()).camax());
            idem = idem.max((&p * &p - &p).camax());
            let pi = m.projector();
            dewhite = dewhite.max((&pi * &pi - &pi).camax());
            count += 1;
        }
    }
    let pass = herm < 1e-10 && idem < 1e-10 && dewhite < 1e-10;
    Ok((pass, format!("{count} models: |P - P^H| {herm:.1e}, |P^2 - P| {idem:.1e}, de-whitened |Pi^2 - Pi| {dewhite:.1e}")))
}

fn csv_bytes(res: &SweepResult) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    res.write_csv(&mut out)?;
    Ok(out)
}

fn determinism() -> Result<(bool, String)> {
    let mut cfg = ExperimentConfig::preset("s1")?;
    cfg.grid.architectures = vec![Architecture::FullyConnected, Architecture::SubConnected];
    cfg.grid.snr_db = vec![-10.0, 0.0];
    cfg.grid.passages = vec![50];
    cfg.angle_mode = AngleMode::PerPose;
    cfg.heading_jitter_deg = 5.0;
    cfg.alignment.snr_db = Some(0.0);
    cfg.trials = 8;
    cfg.test_passages = 3;
    let run_with = |threads: usize| -> Result<Vec<u8>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
        pool.install(|| csv_bytes(&run_sweep(&cfg)?))
    };
    let a = run_with(1)?;
    let b = run_with(1)?;
    let c = run_with(4)?;
    let mut other = cfg.clone();
    other.seed += 1;
    let d = csv_bytes(&run_sweep(&other)?)?;
    let pass = a == b && a == c && a != d;
    Ok((pass, format!("{} bytes; rerun identical: {}, 4 threads identical: {}, new seed differs: {}", a.len(), a == b, a == c, a != d)))
}

fn main() {
    let checks: [(u32, &str, Check); 9] = [
        (1, "U-ML MSE matches CRLB", crlb_match),
        (2, "noiseless span recovery", span_recovery),
        (3, "MSE bound convergence", bound_convergence),
        (4, "SE ordering on S1", ordering),
        (5, "single-path near-optimality", single_path),
        (6, "lossless compression", lossless_compression),
        (7, "degradation with region radius", radius_degradation),
        (8, "projector properties", projector_properties),
        (9, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in checks {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(check);
        let secs = t0.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".into()),
        };
        if !pass {
            failed += 1;
        }
        println!("{} [{id}] {name}: {detail} ({secs:.1} s)", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
