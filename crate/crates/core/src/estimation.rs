//! Training, the unconstrained ML estimate, whitening, and the joint-space
//! and disjoint-space low-rank estimators.
//!
//! Estimates are column-stacked `vec(H̃)` with `H̃` of shape
//! `n_rx_rf x n_tx_rf`. The observation covariance is
//! `C = (1/sigma_s^2) I ⊗ Q̃`, so whitening acts on the receive side only:
//! `C^{-1/2} vec(Z) = vec(sigma_s Q̃^{-1/2} Z)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{
    c64, cis, default_ridge, hermitian_eig, inv_sqrt_hermitian, kron, solve_hpd, trace_re, unvec, vec, CMat,
    CVec,
};
use crate::scenario::MvRegion;

/// Pilots and the matching received block.
#[derive(Debug, Clone)]
pub struct TrainingBlock {
    pub pilots: CMat,
    pub received: CMat,
}

/// Spatial noise before the analog combiner.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub sigma_n_sq: f64,
    /// Full covariance; `sigma_n_sq * I` when absent.
    pub q_n: Option<CMat>,
}

impl NoiseModel {
    pub fn white(sigma_n_sq: f64) -> Self {
        NoiseModel { sigma_n_sq, q_n: None }
    }

    /// Per-antenna SNR `sigma_s^2 / sigma_n^2` in dB.
    pub fn from_snr_db(snr_db: f64, sigma_s: f64) -> Self {
        Self::white(sigma_s * sigma_s * 10f64.powf(-snr_db / 10.0))
    }
}

/// Receive-side whitening transform `vec(Z) -> vec(scale * fwd * Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitener {
    pub scale: f64,
    pub fwd: CMat,
    pub inv: CMat,
    /// Per-entry noise variance after whitening: 1 for a real noise
    /// covariance, 0 for the noiseless identity transform.
    pub noise_floor: f64,
    pub n_tx_rf: usize,
}

impl Whitener {
    pub fn identity(n_tx_rf: usize, n_rx_rf: usize) -> Self {
        Whitener {
            scale: 1.0,
            fwd: CMat::identity(n_rx_rf, n_rx_rf),
            inv: CMat::identity(n_rx_rf, n_rx_rf),
            noise_floor: 0.0,
            n_tx_rf,
        }
    }

    pub fn n_rx_rf(&self) -> usize {
        self.fwd.nrows()
    }

    pub fn dim(&self) -> usize {
        self.n_tx_rf * self.n_rx_rf()
    }

    pub fn whiten_mat(&self, z: &CMat) -> CMat {
        (&self.fwd * z) * c64(self.scale, 0.0)
    }

    pub fn dewhiten_mat(&self, z: &CMat) -> CMat {
        (&self.inv * z) * c64(1.0 / self.scale, 0.0)
    }

    fn check(&self, y: &CVec) -> Result<()> {
        if y.len() != self.dim() {
            return Err(invalid(format!("vector length {} does not match dimension {}", y.len(), self.dim())));
        }
        Ok(())
    }

    pub fn whiten(&self, y: &CVec) -> Result<CVec> {
        self.check(y)?;
        Ok(vec(&self.whiten_mat(&unvec(y, self.n_rx_rf(), self.n_tx_rf)?)))
    }

    pub fn dewhiten(&self, y: &CVec) -> Result<CVec> {
        self.check(y)?;
        Ok(vec(&self.dewhiten_mat(&unvec(y, self.n_rx_rf(), self.n_tx_rf)?)))
    }

    /// Dense `C^{-1/2}`.
    pub fn dense(&self) -> CMat {
        kron(&CMat::identity(self.n_tx_rf, self.n_tx_rf), &self.fwd) * c64(self.scale, 0.0)
    }

    /// Dense `C^{1/2}`.
    pub fn dense_inverse(&self) -> CMat {
        kron(&CMat::identity(self.n_tx_rf, self.n_tx_rf), &self.inv) * c64(1.0 / self.scale, 0.0)
    }
}

/// Noise statistics after the analog combiner.
#[derive(Debug, Clone)]
pub struct NoiseAfterBf {
    /// `Q̃ = W_RF^H Q_n W_RF`.
    pub q_tilde: CMat,
    /// Hermitian square root of `Q̃`, used to draw noise.
    pub q_half: CMat,
    pub whitener: Whitener,
    pub sigma_s: f64,
    pub n_tx_rf: usize,
}

impl NoiseAfterBf {
    /// `tr(C) = n_tx_rf tr(Q̃) / sigma_s^2`, the U-ML error floor.
    pub fn trace_c(&self) -> f64 {
        self.n_tx_rf as f64 * trace_re(&self.q_tilde) / (self.sigma_s * self.sigma_s)
    }

    /// Dense `C = (1/sigma_s^2) I ⊗ Q̃`.
    pub fn covariance(&self) -> CMat {
        kron(&CMat::identity(self.n_tx_rf, self.n_tx_rf), &self.q_tilde) * c64(1.0 / (self.sigma_s * self.sigma_s), 0.0)
    }

    /// `Q̃^{1/2} Z` with `Z` of i.i.d. unit complex Gaussians, `m` columns.
    pub fn draw<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> CMat {
        let z = complex_gaussian(self.q_half.ncols(), m, rng);
        &self.q_half * z
    }
}

pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c64(s * re, s * im)
    })
}

/// Projects the antenna noise through `W_RF` and builds the whitener.
pub fn noise_after_bf(noise: &NoiseModel, w_rf: &CMat, n_tx_rf: usize, sigma_s: f64) -> Result<NoiseAfterBf> {
    if !(sigma_s > 0.0 && sigma_s.is_finite()) {
        return Err(invalid("sigma_s must be positive"));
    }
    if !(noise.sigma_n_sq >= 0.0 && noise.sigma_n_sq.is_finite()) {
        return Err(invalid("noise power must be nonnegative"));
    }
    if n_tx_rf == 0 {
        return Err(invalid("n_tx_rf must be positive"));
    }
    let n_rx_rf = w_rf.ncols();
    let q_tilde = match &noise.q_n {
        Some(q) => {
            if q.shape() != (w_rf.nrows(), w_rf.nrows()) {
                return Err(invalid("noise covariance does not match the receive array"));
            }
            inv_sqrt_hermitian(q, 0.0).map_err(|e| match e {
                Error::NotPsd { .. } => invalid(format!("noise covariance is not PSD: {e}")),
                other => other,
            })?;
            w_rf.adjoint() * q * w_rf
        }
        None => (w_rf.adjoint() * w_rf) * c64(noise.sigma_n_sq, 0.0),
    };
    let q_tilde = (&q_tilde + q_tilde.adjoint()) * c64(0.5, 0.0);
    if trace_re(&q_tilde) <= 0.0 {
        return Ok(NoiseAfterBf {
            q_half: CMat::zeros(n_rx_rf, n_rx_rf),
            q_tilde,
            whitener: Whitener::identity(n_tx_rf, n_rx_rf),
            sigma_s,
            n_tx_rf,
        });
    }
    let ridge = default_ridge(&q_tilde)?;
    let (q_half, q_inv_half) = inv_sqrt_hermitian(&q_tilde, ridge)?;
    Ok(NoiseAfterBf {
        q_tilde,
        whitener: Whitener { scale: sigma_s, fwd: q_inv_half, inv: q_half.clone(), noise_floor: 1.0, n_tx_rf },
        q_half,
        sigma_s,
        n_tx_rf,
    })
}

/// Orthogonal pilots: the first `n_tx_rf` rows of the unitary `m`-point DFT,
/// scaled by `sigma_s` and rotated by a random phase per time slot.
pub fn make_training<R: Rng + ?Sized>(n_tx_rf: usize, m: usize, sigma_s: f64, rng: &mut R) -> Result<CMat> {
    if n_tx_rf == 0 || m < n_tx_rf {
        return Err(invalid(format!("pilot length {m} is shorter than {n_tx_rf} RF chains")));
    }
    let phases: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 * std::f64::consts::PI).collect();
    let s = sigma_s / (m as f64).sqrt();
    Ok(CMat::from_fn(n_tx_rf, m, |k, t| {
        let phase = -2.0 * std::f64::consts::PI * ((k * t) % m) as f64 / m as f64;
        cis(phase + phases[t]) * s
    }))
}

/// `Ỹ = H̃ S̃ + Q̃^{1/2} Z`.
pub fn simulate_block<R: Rng + ?Sized>(h_tilde: &CMat, pilots: &CMat, noise: &NoiseAfterBf, rng: &mut R) -> Result<TrainingBlock> {
    if h_tilde.ncols() != pilots.nrows() || h_tilde.nrows() != noise.q_half.nrows() {
        return Err(invalid("channel, pilots and noise dimensions disagree"));
    }
    let received = h_tilde * pilots + noise.draw(pilots.ncols(), rng);
    Ok(TrainingBlock { pilots: pilots.clone(), received })
}

/// `vec(Ỹ S̃^H (S̃ S̃^H)^{-1})`.
pub fn uml_estimate(block: &TrainingBlock) -> Result<CVec> {
    let s = &block.pilots;
    if block.received.ncols() != s.ncols() {
        return Err(invalid("pilot and received block lengths differ"));
    }
    let gram = s * s.adjoint();
    let rhs = s * block.received.adjoint();
    // X^H = G^{-1} S Y^H since G is Hermitian
    let xh = solve_hpd(&gram, &rhs).map_err(|_| invalid("pilot Gram matrix is singular"))?;
    Ok(vec(&xh.adjoint()))
}

/// Smallest `r` whose leading eigenvalues carry `threshold` of the total.
pub fn estimate_rank(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid("rank threshold must lie in (0, 1]"));
    }
    let clipped: Vec<f64> = eigenvalues.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all eigenvalues are zero".into()));
    }
    let mut acc = 0.0;
    for (i, &x) in clipped.iter().enumerate() {
        acc += x;
        if acc >= threshold * total * (1.0 - 1e-15) {
            return Ok(i + 1);
        }
    }
    Ok(clipped.len())
}

fn default_threshold() -> f64 {
    0.999
}

/// How the subspace dimension is picked from a sample correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankRule {
    /// Cumulative-energy rule on the raw spectrum, noise floor included.
    Cumulative {
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    /// Cumulative-energy rule after removing the largest eigenvalue the
    /// white noise floor alone would produce at this sample size.
    AboveNoise {
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    Fixed {
        rank: usize,
    },
}

impl Default for RankRule {
    fn default() -> Self {
        RankRule::AboveNoise { threshold: default_threshold() }
    }
}

impl RankRule {
    /// Rank for a spectrum of dimension `dim` estimated from `samples`
    /// vectors whose noise part has per-entry variance `floor`.
    pub fn apply(&self, eigenvalues: &[f64], floor: f64, samples: usize) -> Result<usize> {
        let dim = eigenvalues.len();
        match *self {
            RankRule::Cumulative { threshold } => estimate_rank(eigenvalues, threshold),
            RankRule::AboveNoise { threshold } => {
                if floor == 0.0 {
                    // noiseless: every eigenvalue above rounding level is signal
                    let lmax = eigenvalues.iter().cloned().fold(0.0, f64::max);
                    if !(lmax > 0.0) {
                        return Err(Error::Degenerate("all eigenvalues are zero".into()));
                    }
                    let tol = 1e3 * dim as f64 * f64::EPSILON * lmax;
                    return Ok(eigenvalues.iter().filter(|&&x| x > tol).count().max(1));
                }
                let ratio = dim as f64 / samples.max(1) as f64;
                let edge = floor * (1.0 + ratio.sqrt()).powi(2);
                let above: Vec<f64> = eigenvalues.iter().map(|&x| (x - edge).max(0.0)).collect();
                if above.iter().all(|&x| x == 0.0) {
                    if eigenvalues.iter().all(|&x| x <= 0.0) {
                        return Err(Error::Degenerate("all eigenvalues are zero".into()));
                    }
                    return Ok(1);
                }
                estimate_rank(&above, threshold)
            }
            RankRule::Fixed { rank } => Ok(rank.clamp(1, dim.max(1))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceKind {
    Joint,
    Disjoint,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    Joint { u: CMat },
    Disjoint { u_tx: CMat, u_rx: CMat },
}

/// Fitted low-rank model for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    pub basis: Basis,
    pub whitener: Whitener,
    pub region: Option<MvRegion>,
    pub n_tx_rf: usize,
    pub n_rx_rf: usize,
}

impl SubspaceModel {
    pub fn kind(&self) -> SubspaceKind {
        match self.basis {
            Basis::Joint { .. } => SubspaceKind::Joint,
            Basis::Disjoint { .. } => SubspaceKind::Disjoint,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_tx_rf * self.n_rx_rf
    }

    /// Projector rank (`r` or `r_T * r_R`).
    pub fn rank(&self) -> usize {
        match &self.basis {
            Basis::Joint { u } => u.ncols(),
            Basis::Disjoint { u_tx, u_rx } => u_tx.ncols() * u_rx.ncols(),
        }
    }

    /// Rank label: `"r"` for joint, `"rTxrR"` for disjoint.
    pub fn rank_label(&self) -> String {
        match &self.basis {
            Basis::Joint { u } => u.ncols().to_string(),
            Basis::Disjoint { u_tx, u_rx } => format!("{}x{}", u_tx.ncols(), u_rx.ncols()),
        }
    }

    pub fn with_region(mut self, region: MvRegion) -> Self {
        self.region = Some(region);
        self
    }

    /// Orthogonal projector in whitened coordinates.
    pub fn whitened_projector(&self) -> CMat {
        match &self.basis {
            Basis::Joint { u } => u * u.adjoint(),
            Basis::Disjoint { u_tx, u_rx } => kron(&(u_tx.conjugate() * u_tx.transpose()), &(u_rx * u_rx.adjoint())),
        }
    }

    /// Oblique projector `C^{1/2} P C^{-1/2}` in the original coordinates.
    pub fn projector(&self) -> CMat {
        self.whitener.dense_inverse() * self.whitened_projector() * self.whitener.dense()
    }

    /// Applies the whitened projection to a whitened estimate.
    pub fn project_whitened(&self, z: &CVec) -> Result<CVec> {
        if z.len() != self.dim() {
            return Err(invalid("estimate length does not match the model"));
        }
        match &self.basis {
            Basis::Joint { u } => Ok(u * (u.adjoint() * z)),
            Basis::Disjoint { u_tx, u_rx } => {
                let m = unvec(z, self.n_rx_rf, self.n_tx_rf)?;
                let left = u_rx * (u_rx.adjoint() * m);
                Ok(vec(&((left * u_tx) * u_tx.adjoint())))
            }
        }
    }

    /// Low-rank estimate from a U-ML estimate.
    pub fn apply(&self, y: &CVec) -> Result<CVec> {
        let z = self.whitener.whiten(y)?;
        self.whitener.dewhiten(&self.project_whitened(&z)?)
    }
}

fn leading(eigvecs: &CMat, r: usize) -> CMat {
    eigvecs.columns(0, r).into_owned()
}

fn whitened_samples(estimates: &[CVec], whitener: &Whitener) -> Result<Vec<CMat>> {
    if estimates.is_empty() {
        return Err(invalid("at least one training block is required"));
    }
    estimates
        .iter()
        .map(|y| {
            whitener.check(y)?;
            Ok(whitener.whiten_mat(&unvec(y, whitener.n_rx_rf(), whitener.n_tx_rf)?))
        })
        .collect()
}

/// Sample correlations and eigen-decompositions behind a fit.
#[derive(Debug, Clone)]
pub struct FitSpectrum {
    pub joint: Option<Vec<f64>>,
    pub tx: Option<Vec<f64>>,
    pub rx: Option<Vec<f64>>,
}

/// Joint-space fit from U-ML estimates.
pub fn fit_js_from_estimates(estimates: &[CVec], whitener: &Whitener, rule: &RankRule) -> Result<(SubspaceModel, FitSpectrum)> {
    let z = whitened_samples(estimates, whitener)?;
    let d = whitener.dim();
    let l = z.len();
    let mut stacked = CMat::zeros(d, l);
    for (k, m) in z.iter().enumerate() {
        stacked.set_column(k, &vec(m));
    }
    let r = (&stacked * stacked.adjoint()) * c64(1.0 / l as f64, 0.0);
    let eig = hermitian_eig(&r)?;
    let r_hat = rule.apply(&eig.values, whitener.noise_floor, l)?;
    let model = SubspaceModel {
        basis: Basis::Joint { u: leading(&eig.vectors, r_hat) },
        whitener: whitener.clone(),
        region: None,
        n_tx_rf: whitener.n_tx_rf,
        n_rx_rf: whitener.n_rx_rf(),
    };
    Ok((model, FitSpectrum { joint: Some(eig.values), tx: None, rx: None }))
}

/// Disjoint-space fit from U-ML estimates.
pub fn fit_ds_from_estimates(estimates: &[CVec], whitener: &Whitener, rule: &RankRule) -> Result<(SubspaceModel, FitSpectrum)> {
    let z = whitened_samples(estimates, whitener)?;
    let (n_rx, n_tx) = (whitener.n_rx_rf(), whitener.n_tx_rf);
    let l = z.len();
    let mut wide = CMat::zeros(n_rx, n_tx * l);
    let mut tall = CMat::zeros(n_rx * l, n_tx);
    for (k, m) in z.iter().enumerate() {
        wide.view_mut((0, k * n_tx), (n_rx, n_tx)).copy_from(m);
        tall.view_mut((k * n_rx, 0), (n_rx, n_tx)).copy_from(m);
    }
    let inv_l = c64(1.0 / l as f64, 0.0);
    let r_tx = (tall.adjoint() * &tall) * inv_l;
    let r_rx = (&wide * wide.adjoint()) * inv_l;
    let eig_tx = hermitian_eig(&r_tx)?;
    let eig_rx = hermitian_eig(&r_rx)?;
    let floor = whitener.noise_floor;
    let r_t = rule.apply(&eig_tx.values, floor * n_rx as f64, l * n_rx)?;
    let r_r = rule.apply(&eig_rx.values, floor * n_tx as f64, l * n_tx)?;
    let model = SubspaceModel {
        basis: Basis::Disjoint { u_tx: leading(&eig_tx.vectors, r_t), u_rx: leading(&eig_rx.vectors, r_r) },
        whitener: whitener.clone(),
        region: None,
        n_tx_rf: n_tx,
        n_rx_rf: n_rx,
    };
    Ok((model, FitSpectrum { joint: None, tx: Some(eig_tx.values), rx: Some(eig_rx.values) }))
}

pub fn fit_js(blocks: &[TrainingBlock], whitener: &Whitener, rule: &RankRule) -> Result<SubspaceModel> {
    let ys = blocks.iter().map(uml_estimate).collect::<Result<Vec<_>>>()?;
    Ok(fit_js_from_estimates(&ys, whitener, rule)?.0)
}

pub fn fit_ds(blocks: &[TrainingBlock], whitener: &Whitener, rule: &RankRule) -> Result<SubspaceModel> {
    let ys = blocks.iter().map(uml_estimate).collect::<Result<Vec<_>>>()?;
    Ok(fit_ds_from_estimates(&ys, whitener, rule)?.0)
}

/// `Π̂ vec(U-ML estimate)`.
pub fn lr_estimate(model: &SubspaceModel, block: &TrainingBlock) -> Result<CVec> {
    model.apply(&uml_estimate(block)?)
}
