//! Monte Carlo sweeps over the experiment grid.
//!
//! Each grid point aligns the analog beams once, then runs independent
//! trials. A trial fits the low-rank models on `L` training passages and
//! scores every estimator on the same fresh test passages. Trials and grid
//! points run on the rayon pool; results are collected in grid order.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Estimator, ExperimentConfig};
use super::seeds::{self, STREAM_ALIGN, STREAM_TEST, STREAM_TRAIN};
use crate::arrays::{Architecture, HybridConfig};
use crate::beam_alignment::{align_region, RegionAlignment};
use crate::channel::{draw_gains, CompressedPaths};
use crate::error::{Error, Result};
use crate::estimation::{
    fit_ds_from_estimates, fit_js_from_estimates, make_training, noise_after_bf, simulate_block, uml_estimate, Basis,
    NoiseAfterBf, NoiseModel, RankRule, SubspaceModel, TrainingBlock,
};
use crate::link::{design, mse, mse_bound_ds, mse_bound_js, spectral_efficiency};
use crate::numerics::{inverse_hpd, unvec, vec, CMat, CVec};
use crate::scenario::{geometry_to_paths, sample_passage, AngleMode, Environment, MvRegion};

const SIGMA_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub architecture: Architecture,
    pub rf: [usize; 2],
    pub radius: f64,
    pub passages: usize,
    pub snr_db: f64,
}

/// Grid points in output order: architecture, RF pair, radius, passages,
/// then SNR fastest. Full digital appears once per radius/passages/SNR
/// since the RF grid does not apply to it.
pub fn expand_grid(cfg: &ExperimentConfig) -> Result<Vec<GridPoint>> {
    let radii = cfg.radii()?;
    let mut out = Vec::new();
    for &architecture in &cfg.grid.architectures {
        let rfs: &[[usize; 2]] = match architecture {
            Architecture::FullDigital => &cfg.grid.rf_chains[..1],
            _ => &cfg.grid.rf_chains,
        };
        for &rf in rfs {
            for &radius in &radii {
                for &passages in &cfg.grid.passages {
                    for &snr_db in &cfg.grid.snr_db {
                        out.push(GridPoint { index: out.len(), architecture, rf, radius, passages, snr_db });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Everything a grid point shares across its trials.
#[derive(Debug, Clone)]
pub struct PointSetup {
    pub point: GridPoint,
    pub hybrid: HybridConfig,
    pub environment: Environment,
    pub region: MvRegion,
    pub angle_mode: AngleMode,
    pub heading_jitter: f64,
    pub alignment: RegionAlignment,
    pub noise: NoiseAfterBf,
    pub q_inv: CMat,
    /// Compressed paths at the region center.
    pub center: CompressedPaths,
    pub pilot_length: usize,
    /// Grid key fed to the seed derivation (0 with common random numbers).
    pub seed_key: u64,
}

impl PointSetup {
    fn analog(&self) -> (Option<&CMat>, Option<&CMat>) {
        match self.hybrid.architecture {
            Architecture::FullDigital => (None, None),
            _ => (Some(&self.alignment.f_rf), Some(&self.alignment.w_rf)),
        }
    }

    /// Builds the setup from an existing alignment.
    pub fn with_alignment(cfg: &ExperimentConfig, point: GridPoint, alignment: RegionAlignment) -> Result<Self> {
        let hybrid = cfg.hybrid(point.architecture, point.rf);
        let scenario = cfg.scenario.resolve()?;
        let region = MvRegion { radius: point.radius, ..cfg.region()? };
        let noise_model = NoiseModel::from_snr_db(point.snr_db, SIGMA_S);
        let noise = noise_after_bf(&noise_model, &alignment.w_rf, hybrid.n_tx_rf, SIGMA_S)?;
        let q_inv = inverse_hpd(&noise.q_tilde)?;
        let pilot_length = cfg.pilot_length.unwrap_or(hybrid.n_tx_rf);
        let mut setup = PointSetup {
            point,
            hybrid,
            environment: scenario.environment,
            region,
            angle_mode: cfg.angle_mode,
            heading_jitter: cfg.heading_jitter_deg.to_radians(),
            alignment,
            noise,
            q_inv,
            center: CompressedPaths { tx: CMat::zeros(0, 0), rx: CMat::zeros(0, 0), powers: vec![] },
            pilot_length,
            seed_key: if cfg.common_random_numbers { 0 } else { point.index as u64 },
        };
        let ps = geometry_to_paths(&setup.environment, &region.center_pose(), AngleMode::FrozenAtCenter, &region)?;
        let (f, w) = setup.analog();
        setup.center = CompressedPaths::new(&ps, &setup.hybrid.tx, &setup.hybrid.rx, f, w)?;
        Ok(setup)
    }

    pub fn prepare(cfg: &ExperimentConfig, point: GridPoint) -> Result<Self> {
        let hybrid = cfg.hybrid(point.architecture, point.rf);
        let scenario = cfg.scenario.resolve()?;
        let region = MvRegion { radius: point.radius, ..cfg.region()? };
        let key = if cfg.common_random_numbers { 0 } else { point.index as u64 };
        let mut rng = seeds::rng(cfg.seed, key, 0, STREAM_ALIGN);
        let alignment = align_region(&scenario.environment, &region, &hybrid, &cfg.alignment_settings(), &mut rng)?;
        Self::with_alignment(cfg, point, alignment)
    }

    pub fn d(&self) -> usize {
        self.hybrid.n_tx_rf * self.hybrid.n_rx_rf
    }

    /// `tr(C)`, the U-ML error.
    pub fn crlb(&self) -> f64 {
        self.noise.trace_c()
    }

    fn paths_for_passage<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Cow<'_, CompressedPaths>> {
        let pose = sample_passage(&self.region, self.heading_jitter, rng);
        match self.angle_mode {
            AngleMode::FrozenAtCenter => Ok(Cow::Borrowed(&self.center)),
            AngleMode::PerPose => {
                let ps = geometry_to_paths(&self.environment, &pose, AngleMode::PerPose, &self.region)?;
                let (f, w) = self.analog();
                Ok(Cow::Owned(CompressedPaths::new(&ps, &self.hybrid.tx, &self.hybrid.rx, f, w)?))
            }
        }
    }

    /// One passage: the true compressed channel and its training block.
    pub fn draw_passage<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(CMat, TrainingBlock)> {
        let cp = self.paths_for_passage(rng)?;
        let alpha = draw_gains(&cp.powers, rng);
        let h = cp.channel(&alpha);
        let pilots = make_training(self.hybrid.n_tx_rf, self.pilot_length, SIGMA_S, rng)?;
        let block = simulate_block(&h, &pilots, &self.noise, rng)?;
        Ok((h, block))
    }
}

/// Low-rank models fitted in one trial.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub js: Option<SubspaceModel>,
    pub ds: Option<SubspaceModel>,
}

pub fn train<R: Rng + ?Sized>(
    setup: &PointSetup,
    estimators: &[Estimator],
    passages: usize,
    rule: &RankRule,
    rng: &mut R,
) -> Result<Models> {
    let want_js = estimators.contains(&Estimator::Js);
    let want_ds = estimators.contains(&Estimator::Ds);
    if !(want_js || want_ds) {
        return Ok(Models::default());
    }
    let mut estimates = Vec::with_capacity(passages);
    for _ in 0..passages {
        let (_, block) = setup.draw_passage(rng)?;
        estimates.push(uml_estimate(&block)?);
    }
    let w = &setup.noise.whitener;
    let js = if want_js { Some(fit_js_from_estimates(&estimates, w, rule)?.0.with_region(setup.region)) } else { None };
    let ds = if want_ds { Some(fit_ds_from_estimates(&estimates, w, rule)?.0.with_region(setup.region)) } else { None };
    Ok(Models { js, ds })
}

/// Per-estimator averages over the test passages of one trial, in the order
/// of the estimator list.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMetrics {
    pub se: Vec<f64>,
    pub mse: Vec<f64>,
}

fn estimate(est: Estimator, models: &Models, uml: &CVec, truth: &CVec) -> Result<CVec> {
    let missing = |name: &str| Error::Validation(format!("no {name} model was fitted"));
    match est {
        Estimator::Uml => Ok(uml.clone()),
        Estimator::Js => models.js.as_ref().ok_or_else(|| missing("JS"))?.apply(uml),
        Estimator::Ds => models.ds.as_ref().ok_or_else(|| missing("DS"))?.apply(uml),
        Estimator::Perfect => Ok(truth.clone()),
    }
}

pub fn evaluate<R: Rng + ?Sized>(
    setup: &PointSetup,
    models: &Models,
    estimators: &[Estimator],
    test_passages: usize,
    rng: &mut R,
) -> Result<TrialMetrics> {
    let n = estimators.len();
    let (mut se, mut err) = (vec![0.0; n], vec![0.0; n]);
    let (n_rx, n_tx) = (setup.hybrid.n_rx_rf, setup.hybrid.n_tx_rf);
    let n_s = setup.hybrid.n_streams;
    let f_rf = match setup.hybrid.architecture {
        Architecture::FullDigital => CMat::identity(n_tx, n_tx),
        _ => setup.alignment.f_rf.clone(),
    };
    for _ in 0..test_passages {
        let (h, block) = setup.draw_passage(rng)?;
        let truth = vec(&h);
        let uml = uml_estimate(&block)?;
        for (k, &est) in estimators.iter().enumerate() {
            let h_hat = estimate(est, models, &uml, &truth)?;
            err[k] += mse(&h_hat, &truth)?;
            let (link, _) = design(&unvec(&h_hat, n_rx, n_tx)?, &f_rf, &setup.q_inv, n_s)?;
            se[k] += spectral_efficiency(&h, &link, &setup.noise.q_tilde, n_s)?;
        }
    }
    let t = test_passages as f64;
    Ok(TrialMetrics { se: se.iter().map(|x| x / t).collect(), mse: err.iter().map(|x| x / t).collect() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub metrics: TrialMetrics,
    pub js_rank: Option<usize>,
    pub ds_rank: Option<(usize, usize)>,
}

fn ds_rank(models: &Models) -> Option<(usize, usize)> {
    models.ds.as_ref().map(|m| match &m.basis {
        Basis::Disjoint { u_tx, u_rx } => (u_tx.ncols(), u_rx.ncols()),
        Basis::Joint { u } => (u.ncols(), 1),
    })
}

pub fn run_trial(setup: &PointSetup, cfg: &ExperimentConfig, trial: usize) -> Result<TrialRecord> {
    let t = trial as u64;
    let mut rng = seeds::rng(cfg.seed, setup.seed_key, t, STREAM_TRAIN);
    let models = train(setup, &cfg.estimators, setup.point.passages, &cfg.rank_rule, &mut rng)?;
    let mut rng = seeds::rng(cfg.seed, setup.seed_key, t, STREAM_TEST);
    let metrics = evaluate(setup, &models, &cfg.estimators, cfg.test_passages, &mut rng)?;
    Ok(TrialRecord { metrics, js_rank: models.js.as_ref().map(|m| m.rank()), ds_rank: ds_rank(&models) })
}

/// Most frequent value; ties go to the smallest.
pub fn mode<T: Ord + Copy>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut best: Option<(T, usize)> = None;
    for (v, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v)
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub point: GridPoint,
    pub n_tx_rf: usize,
    pub n_rx_rf: usize,
    pub crlb: f64,
    pub estimators: Vec<Estimator>,
    /// Bound per estimator at the modal rank.
    pub bounds: Vec<f64>,
    pub rank_labels: Vec<String>,
    pub trials: Vec<TrialRecord>,
}

impl PointResult {
    fn slot(&self, est: Estimator) -> Option<usize> {
        self.estimators.iter().position(|&e| e == est)
    }

    /// Per-trial spectral efficiencies of one estimator.
    pub fn se_samples(&self, est: Estimator) -> Option<Vec<f64>> {
        let k = self.slot(est)?;
        Some(self.trials.iter().map(|t| t.metrics.se[k]).collect())
    }

    pub fn mse_samples(&self, est: Estimator) -> Option<Vec<f64>> {
        let k = self.slot(est)?;
        Some(self.trials.iter().map(|t| t.metrics.mse[k]).collect())
    }

    pub fn bound(&self, est: Estimator) -> Option<f64> {
        self.slot(est).map(|k| self.bounds[k])
    }
}

pub fn run_point(cfg: &ExperimentConfig, point: GridPoint) -> Result<PointResult> {
    let setup = PointSetup::prepare(cfg, point)?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(&setup, cfg, t))
        .collect::<Result<Vec<_>>>()?;
    summarize(&setup, cfg, trials)
}

/// Scores previously fitted models on fresh test passages; trials differ
/// only in their test draws.
pub fn evaluate_fixed(cfg: &ExperimentConfig, setup: &PointSetup, models: &Models) -> Result<PointResult> {
    let ds_rank = ds_rank(models);
    let js_rank = models.js.as_ref().map(|m| m.rank());
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::rng(cfg.seed, setup.seed_key, t as u64, STREAM_TEST);
            let metrics = evaluate(setup, models, &cfg.estimators, cfg.test_passages, &mut rng)?;
            Ok(TrialRecord { metrics, js_rank, ds_rank })
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(setup, cfg, trials)
}

fn summarize(setup: &PointSetup, cfg: &ExperimentConfig, trials: Vec<TrialRecord>) -> Result<PointResult> {
    let crlb = setup.crlb();
    let mut bounds = Vec::new();
    let mut rank_labels = Vec::new();
    for &est in &cfg.estimators {
        let (b, label) = match est {
            Estimator::Uml => (crlb, setup.d().to_string()),
            Estimator::Perfect => (0.0, String::new()),
            Estimator::Js => {
                let r = mode(trials.iter().filter_map(|t| t.js_rank)).unwrap_or(1);
                (mse_bound_js(&setup.center, &setup.noise, r)?.total(), r.to_string())
            }
            Estimator::Ds => {
                let (rt, rr) = mode(trials.iter().filter_map(|t| t.ds_rank)).unwrap_or((1, 1));
                (mse_bound_ds(&setup.center, &setup.noise, rt, rr)?.total(), format!("{rt}x{rr}"))
            }
        };
        bounds.push(b);
        rank_labels.push(label);
    }
    let res = PointResult {
        point: setup.point,
        n_tx_rf: setup.hybrid.n_tx_rf,
        n_rx_rf: setup.hybrid.n_rx_rf,
        crlb,
        estimators: cfg.estimators.clone(),
        bounds,
        rank_labels,
        trials,
    };
    let finite = res.trials.iter().all(|t| t.metrics.se.iter().chain(&t.metrics.mse).all(|x| x.is_finite()));
    if !finite || !crlb.is_finite() || res.bounds.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numeric(format!("non-finite metric at grid point {}", setup.point.index)));
    }
    Ok(res)
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub snr_db: f64,
    pub passages: usize,
    pub n_tx_rf: usize,
    pub n_rx_rf: usize,
    pub rho_m: f64,
    pub estimator: &'static str,
    pub architecture: &'static str,
    pub se_mean: f64,
    pub se_stderr: f64,
    pub mse_mean: f64,
    pub mse_stderr: f64,
    pub crlb: f64,
    pub mse_bound: f64,
    pub r_hat_mode: String,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub seed: u64,
    pub points: Vec<PointResult>,
}

impl SweepResult {
    pub fn rows(&self) -> Vec<Row> {
        let mut rows = Vec::new();
        for p in &self.points {
            for (k, &est) in p.estimators.iter().enumerate() {
                let se: Vec<f64> = p.trials.iter().map(|t| t.metrics.se[k]).collect();
                let err: Vec<f64> = p.trials.iter().map(|t| t.metrics.mse[k]).collect();
                let (se_mean, se_stderr) = mean_stderr(&se);
                let (mse_mean, mse_stderr) = mean_stderr(&err);
                rows.push(Row {
                    snr_db: p.point.snr_db,
                    passages: p.point.passages,
                    n_tx_rf: p.n_tx_rf,
                    n_rx_rf: p.n_rx_rf,
                    rho_m: p.point.radius,
                    estimator: est.label(),
                    architecture: p.point.architecture.label(),
                    se_mean,
                    se_stderr,
                    mse_mean,
                    mse_stderr,
                    crlb: p.crlb,
                    mse_bound: p.bounds[k],
                    r_hat_mode: p.rank_labels[k].clone(),
                    trials: p.trials.len(),
                    seed: self.seed,
                });
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.rows(), out)
    }

    pub fn point(&self, pred: impl Fn(&GridPoint) -> bool) -> Option<&PointResult> {
        self.points.iter().find(|p| pred(&p.point))
    }
}

pub fn write_rows<W: Write>(rows: &[Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Validates the configuration, then runs every grid point.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let points = expand_grid(cfg)?;
    let results = points.par_iter().map(|&p| run_point(cfg, p)).collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { seed: cfg.seed, points: results })
}
