//! Codebook beam alignment learned over repeated vehicle passages.
//!
//! Each passage through a region is assigned one transmit beam (round
//! robin) while the base station scans every receive beam. Mean received
//! powers per beam pair form the power matrix, and the strongest rows and
//! columns give the analog precoder and combiner for that region.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arrays::{alignment_probes, assemble_analog, Architecture, HybridConfig, Side};
use crate::channel::{draw_amplitudes, PathSet};
use crate::error::{invalid, Error, Result};
use crate::numerics::{c64, CMat, CVec};
use crate::scenario::{geometry_to_paths, sample_passage, wrap_angle, AngleMode, Environment, MvRegion, VehiclePose};

/// Accumulated received powers for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMatrix {
    pub region: MvRegion,
    pub sums: DMatrix<f64>,
    pub counts: DMatrix<u64>,
}

impl PowerMatrix {
    pub fn new(region: MvRegion, n_tx_beams: usize, n_rx_beams: usize) -> Self {
        PowerMatrix {
            region,
            sums: DMatrix::zeros(n_tx_beams, n_rx_beams),
            counts: DMatrix::zeros(n_tx_beams, n_rx_beams),
        }
    }

    pub fn record(&mut self, tx: usize, rx: usize, power: f64) {
        self.sums[(tx, rx)] += power;
        self.counts[(tx, rx)] += 1;
    }

    /// Cellwise mean; every cell must have been measured.
    pub fn mean(&self) -> Result<DMatrix<f64>> {
        if self.counts.iter().any(|&c| c == 0) {
            return Err(invalid("power matrix has unmeasured cells"));
        }
        Ok(self.sums.zip_map(&self.counts, |s, c| s / c as f64))
    }
}

/// `|w^H (H f s + n)|^2` with `s = sigma_s`; noiseless when `noise` is `None`.
pub fn measure_pair_power(h: &CMat, f: &CVec, w: &CVec, sigma_s: f64, noise: Option<&CVec>) -> Result<f64> {
    if h.ncols() != f.len() || h.nrows() != w.len() {
        return Err(invalid("beam dimensions do not match the channel"));
    }
    let mut y = h * f * c64(sigma_s, 0.0);
    if let Some(n) = noise {
        if n.len() != h.nrows() {
            return Err(invalid("noise length does not match the channel"));
        }
        y += n;
    }
    Ok(w.dotc(&y).norm_sqr())
}

fn default_passages_per_beam() -> usize {
    8
}

fn default_heading_threshold() -> f64 {
    30f64.to_radians()
}

fn default_angle_mode() -> AngleMode {
    AngleMode::FrozenAtCenter
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSettings {
    /// Passages per transmit beam; the run uses `passages_per_beam * n_tx_beams`.
    #[serde(default = "default_passages_per_beam")]
    pub passages_per_beam: usize,
    #[serde(default = "default_angle_mode")]
    pub angle_mode: AngleMode,
    /// Heading jitter half-width in radians.
    #[serde(default)]
    pub heading_jitter: f64,
    /// Measurement SNR in dB; noiseless when absent.
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// Lookup heading threshold in radians.
    #[serde(default = "default_heading_threshold")]
    pub heading_threshold: f64,
}

impl Default for AlignmentSettings {
    fn default() -> Self {
        AlignmentSettings {
            passages_per_beam: default_passages_per_beam(),
            angle_mode: default_angle_mode(),
            heading_jitter: 0.0,
            snr_db: None,
            heading_threshold: default_heading_threshold(),
        }
    }
}

/// Beam gains `probes^H a` for every path.
fn probe_gains(probes: &CMat, steering: &CMat) -> CMat {
    probes.adjoint() * steering
}

/// Runs the alignment over `n_passages` passages with the given probe sets
/// (columns are full-array beams).
#[allow(clippy::too_many_arguments)]
pub fn run_mv_alignment<R: Rng + ?Sized>(
    env: &Environment,
    region: &MvRegion,
    config: &HybridConfig,
    tx_probes: &CMat,
    rx_probes: &CMat,
    n_passages: usize,
    settings: &AlignmentSettings,
    rng: &mut R,
) -> Result<PowerMatrix> {
    let n_tx = tx_probes.ncols();
    let n_rx = rx_probes.ncols();
    if n_tx == 0 || n_rx == 0 {
        return Err(invalid("empty codebook"));
    }
    if n_passages < n_tx {
        return Err(invalid(format!(
            "{n_passages} passages cannot cover {n_tx} transmit beams"
        )));
    }
    if tx_probes.nrows() != config.tx.len() || rx_probes.nrows() != config.rx.len() {
        return Err(invalid("probe dimensions do not match the arrays"));
    }
    let sigma_s = 1.0;
    let noise_std = settings.snr_db.map(|snr| (10f64.powf(-snr / 10.0) / 2.0).sqrt());
    let rx_norms: Vec<f64> = rx_probes.column_iter().map(|c| c.norm()).collect();

    let gains = |paths: &PathSet| -> Result<(CMat, CMat)> {
        let g_rx = probe_gains(rx_probes, &paths.rx_steering(&config.rx)?);
        let g_tx = paths.tx_steering(&config.tx)?.transpose() * tx_probes;
        Ok((g_rx, g_tx))
    };
    let frozen = match settings.angle_mode {
        AngleMode::FrozenAtCenter => {
            let ps = geometry_to_paths(env, &region.center_pose(), AngleMode::FrozenAtCenter, region)?;
            let g = gains(&ps)?;
            Some((ps, g))
        }
        AngleMode::PerPose => None,
    };

    let mut pm = PowerMatrix::new(*region, n_tx, n_rx);
    for l in 0..n_passages {
        let i = l % n_tx;
        let pose = sample_passage(region, settings.heading_jitter, rng);
        let owned;
        let (paths, (g_rx, g_tx)) = match &frozen {
            Some((ps, g)) => (ps, g),
            None => {
                let ps = geometry_to_paths(env, &pose, AngleMode::PerPose, region)?;
                let g = gains(&ps)?;
                owned = (ps, g);
                (&owned.0, &owned.1)
            }
        };
        let alpha = draw_amplitudes(paths, rng);
        let coeff = alpha.component_mul(&g_tx.column(i));
        let v = g_rx * coeff;
        for j in 0..n_rx {
            let mut y = v[j] * sigma_s;
            if let Some(s) = noise_std {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                y += c64(re, im) * (s * rx_norms[j]);
            }
            pm.record(i, j, y.norm_sqr());
        }
    }
    Ok(pm)
}

/// Noiseless mean power `sum_p P_p |w_j^H a_R|^2 |a_T^T f_i|^2`, the limit of
/// [`PowerMatrix::mean`] for a fixed path set.
pub fn expected_power(paths: &PathSet, config: &HybridConfig, tx_probes: &CMat, rx_probes: &CMat) -> Result<DMatrix<f64>> {
    let g_rx = probe_gains(rx_probes, &paths.rx_steering(&config.rx)?);
    let g_tx = paths.tx_steering(&config.tx)?.transpose() * tx_probes;
    let mut out = DMatrix::zeros(tx_probes.ncols(), rx_probes.ncols());
    for (p, &pw) in paths.powers.iter().enumerate() {
        for i in 0..out.nrows() {
            let gt = g_tx[(p, i)].norm_sqr() * pw;
            for j in 0..out.ncols() {
                out[(i, j)] += gt * g_rx[(j, p)].norm_sqr();
            }
        }
    }
    Ok(out)
}

fn top_indices(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps the lower index first on ties
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    order.truncate(n);
    order
}

/// Rows with the largest row maxima and columns with the largest column
/// maxima of a mean power matrix, each sorted by descending score.
pub fn select_from_mean(mean: &DMatrix<f64>, n_tx_rf: usize, n_rx_rf: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_tx_rf > mean.nrows() || n_rx_rf > mean.ncols() {
        return Err(invalid(format!(
            "cannot pick {n_tx_rf}x{n_rx_rf} beams from a {}x{} power matrix",
            mean.nrows(),
            mean.ncols()
        )));
    }
    let row_max: Vec<f64> = mean.row_iter().map(|r| r.max()).collect();
    let col_max: Vec<f64> = mean.column_iter().map(|c| c.max()).collect();
    Ok((top_indices(&row_max, n_tx_rf), top_indices(&col_max, n_rx_rf)))
}

pub fn select_beams(pm: &PowerMatrix, n_tx_rf: usize, n_rx_rf: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    select_from_mean(&pm.mean()?, n_tx_rf, n_rx_rf)
}

/// Alignment outcome for one region.
#[derive(Debug, Clone)]
pub struct RegionAlignment {
    pub region: MvRegion,
    /// Absent for full digital, which needs no alignment.
    pub power: Option<PowerMatrix>,
    pub tx_indices: Vec<usize>,
    pub rx_indices: Vec<usize>,
    pub f_rf: CMat,
    pub w_rf: CMat,
}

pub fn align_region<R: Rng + ?Sized>(
    env: &Environment,
    region: &MvRegion,
    config: &HybridConfig,
    settings: &AlignmentSettings,
    rng: &mut R,
) -> Result<RegionAlignment> {
    config.validate()?;
    region.validate()?;
    if config.architecture == Architecture::FullDigital {
        return Ok(RegionAlignment {
            region: *region,
            power: None,
            tx_indices: vec![],
            rx_indices: vec![],
            f_rf: CMat::identity(config.tx.len(), config.tx.len()),
            w_rf: CMat::identity(config.rx.len(), config.rx.len()),
        });
    }
    let tx_probes = alignment_probes(config, Side::Tx)?;
    let rx_probes = alignment_probes(config, Side::Rx)?;
    let n_passages = settings.passages_per_beam.max(1) * tx_probes.ncols();
    let pm = run_mv_alignment(env, region, config, &tx_probes, &rx_probes, n_passages, settings, rng)?;
    let (tx_indices, rx_indices) = select_beams(&pm, config.n_tx_rf, config.n_rx_rf)?;
    let f_rf = assemble_analog(config, Side::Tx, &tx_indices)?;
    let w_rf = assemble_analog(config, Side::Rx, &rx_indices)?;
    Ok(RegionAlignment { region: *region, power: Some(pm), tx_indices, rx_indices, f_rf, w_rf })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamListEntry {
    pub analog: CMat,
    pub region: MvRegion,
    pub indices: Vec<usize>,
}

/// Position-indexed analog matrices for one side.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamList {
    pub entries: Vec<BeamListEntry>,
    pub heading_threshold: f64,
}

impl BeamList {
    /// Index of the nearest region whose heading is within the threshold;
    /// ties go to the lower index.
    pub fn lookup_index(&self, pose: &VehiclePose) -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        let mut min_mismatch = f64::INFINITY;
        for (k, e) in self.entries.iter().enumerate() {
            let mismatch = wrap_angle(pose.heading - e.region.heading).abs();
            min_mismatch = min_mismatch.min(mismatch);
            if mismatch > self.heading_threshold {
                continue;
            }
            let c = e.region.center;
            let d = ((pose.position[0] - c[0]).powi(2) + (pose.position[1] - c[1]).powi(2) + (pose.position[2] - c[2]).powi(2)).sqrt();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        best.map(|(k, _)| k).ok_or(Error::LookupMiss { heading_mismatch_deg: min_mismatch.to_degrees() })
    }

    pub fn lookup(&self, pose: &VehiclePose) -> Result<&BeamListEntry> {
        Ok(&self.entries[self.lookup_index(pose)?])
    }
}

/// Aligns every region and collects the precoder and combiner lists.
pub fn build_beam_lists<R: Rng + ?Sized>(
    env: &Environment,
    regions: &[MvRegion],
    config: &HybridConfig,
    settings: &AlignmentSettings,
    rng: &mut R,
) -> Result<(BeamList, BeamList)> {
    if regions.is_empty() {
        return Err(invalid("no regions to align"));
    }
    let mut lf = BeamList { entries: vec![], heading_threshold: settings.heading_threshold };
    let mut lw = lf.clone();
    for region in regions {
        let a = align_region(env, region, config, settings, rng)?;
        lf.entries.push(BeamListEntry { analog: a.f_rf, region: *region, indices: a.tx_indices });
        lw.entries.push(BeamListEntry { analog: a.w_rf, region: *region, indices: a.rx_indices });
    }
    Ok((lf, lw))
}
