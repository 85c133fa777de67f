//! Digital precoder and combiner design plus link metrics: spectral
//! efficiency, squared error and the asymptotic low-rank error bound.

use crate::channel::CompressedPaths;
use crate::error::{invalid, Result};
use crate::estimation::{NoiseAfterBf, Whitener};
use crate::numerics::{c64, hermitian_eig, inv_sqrt_hermitian, inverse_hpd, solve_hpd, trace_re, CMat, CVec};

#[derive(Debug, Clone, PartialEq)]
pub struct LinkDesign {
    pub f_bb: CMat,
    pub w_bb: CMat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecoderStatus {
    Full,
    /// The estimate supports fewer streams than requested; the extra
    /// columns are zero.
    RankDeficient { rank: usize },
}

/// Leading eigenvectors of `Ĥ^H Ĥ`, scaled so `|F_RF F_BB|^2 = n_streams`.
pub fn digital_precoder(h_hat: &CMat, f_rf: &CMat, n_streams: usize) -> Result<(CMat, PrecoderStatus)> {
    let (m, n) = h_hat.shape();
    if n_streams == 0 || n_streams > m.min(n) {
        return Err(invalid(format!("{n_streams} streams do not fit a {m}x{n} channel")));
    }
    if f_rf.ncols() != n {
        return Err(invalid("F_RF columns do not match the channel"));
    }
    let eig = hermitian_eig(&(h_hat.adjoint() * h_hat))?;
    let smax = eig.values[0].max(0.0).sqrt();
    let tol = m.max(n) as f64 * f64::EPSILON * smax;
    let rank = eig.values.iter().filter(|&&l| l.max(0.0).sqrt() > tol).count();
    let mut f_bb = eig.vectors.columns(0, n_streams).into_owned();
    for k in rank.min(n_streams)..n_streams {
        f_bb.column_mut(k).fill(c64(0.0, 0.0));
    }
    let norm = (f_rf * &f_bb).norm();
    if norm > 0.0 {
        f_bb *= c64((n_streams as f64).sqrt() / norm, 0.0);
    }
    let status = if rank >= n_streams { PrecoderStatus::Full } else { PrecoderStatus::RankDeficient { rank } };
    Ok((f_bb, status))
}

/// `W_BB` with `W_BB^H = (A^H Q̃^{-1} A + I/N_S)^{-1} A^H Q̃^{-1}`, `A = Ĥ F_BB`.
pub fn mmse_combiner(h_hat: &CMat, f_bb: &CMat, q_tilde: &CMat, n_streams: usize) -> Result<CMat> {
    let q_inv = inverse_hpd(q_tilde).map_err(|_| invalid("noise covariance after combining is singular"))?;
    mmse_combiner_with_inverse(h_hat, f_bb, &q_inv, n_streams)
}

/// [`mmse_combiner`] with a precomputed `Q̃^{-1}`.
pub fn mmse_combiner_with_inverse(h_hat: &CMat, f_bb: &CMat, q_inv: &CMat, n_streams: usize) -> Result<CMat> {
    if h_hat.ncols() != f_bb.nrows() || q_inv.nrows() != h_hat.nrows() {
        return Err(invalid("combiner dimensions disagree"));
    }
    let a = h_hat * f_bb;
    let x = q_inv * &a;
    let k = a.ncols();
    let m = a.adjoint() * &x + CMat::identity(k, k) * c64(1.0 / n_streams as f64, 0.0);
    let wh = solve_hpd(&m, &x.adjoint())?;
    Ok(wh.adjoint())
}

/// Full digital design from an estimated compressed channel.
pub fn design(h_hat: &CMat, f_rf: &CMat, q_inv: &CMat, n_streams: usize) -> Result<(LinkDesign, PrecoderStatus)> {
    let (f_bb, status) = digital_precoder(h_hat, f_rf, n_streams)?;
    let w_bb = mmse_combiner_with_inverse(h_hat, &f_bb, q_inv, n_streams)?;
    Ok((LinkDesign { f_bb, w_bb }, status))
}

/// `log2 det(I + Q_eff^{-1} H_eff H_eff^H / N_S)` with the true channel.
pub fn spectral_efficiency(h_true: &CMat, design: &LinkDesign, q_tilde: &CMat, n_streams: usize) -> Result<f64> {
    if design.w_bb.nrows() != h_true.nrows() || design.f_bb.nrows() != h_true.ncols() {
        return Err(invalid("design does not match the channel"));
    }
    let w = &design.w_bb;
    let h_eff = w.adjoint() * h_true * &design.f_bb;
    let q_eff = w.adjoint() * q_tilde * w;
    let tr = trace_re(&q_eff);
    if !(tr > 0.0) {
        return Ok(0.0);
    }
    let k = q_eff.nrows();
    let q_eff = (&q_eff + q_eff.adjoint()) * c64(0.5, 0.0);
    let ridge = 1e-12 * tr / n_streams as f64;
    let (_, q_inv_half) = inv_sqrt_hermitian(&(q_eff + CMat::identity(k, k) * c64(ridge, 0.0)), 0.0)?;
    let g = &q_inv_half * h_eff;
    let m = (&g * g.adjoint()) * c64(1.0 / n_streams as f64, 0.0);
    let eig = hermitian_eig(&((&m + m.adjoint()) * c64(0.5, 0.0)))?;
    Ok(eig.values.iter().map(|&mu| (1.0 + mu.max(0.0)).log2()).sum())
}

/// Squared error `|ĥ - h|^2`.
pub fn mse(h_hat: &CVec, h_true: &CVec) -> Result<f64> {
    if h_hat.len() != h_true.len() {
        return Err(invalid("estimate and truth lengths differ"));
    }
    Ok((h_hat - h_true).norm_squared())
}

fn whitened_paths(cp: &CompressedPaths, w: &Whitener) -> CompressedPaths {
    cp.map_rx(&(&w.fwd * c64(w.scale, 0.0)))
}

fn count_above(values: &[f64], dim: usize) -> usize {
    let lmax = values.first().copied().unwrap_or(0.0).max(0.0);
    let tol = dim as f64 * f64::EPSILON * lmax;
    values.iter().filter(|&&l| l > tol).count()
}

/// Error bound of a projection estimator: the projected noise plus the
/// signal energy lost to rank misparameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseBound {
    pub noise: f64,
    pub misparameterization: f64,
    /// Rank of the exact model (`r` or `r_T * r_R`).
    pub true_rank: usize,
}

impl MseBound {
    pub fn total(&self) -> f64 {
        self.noise + self.misparameterization
    }
}

/// Joint-space bound at rank `r_hat`, from the analytic correlation.
pub fn mse_bound_js(cp: &CompressedPaths, noise: &NoiseAfterBf, r_hat: usize) -> Result<MseBound> {
    let w = &noise.whitener;
    let d = w.dim();
    if r_hat == 0 || r_hat > d {
        return Err(invalid(format!("rank {r_hat} outside 1..={d}")));
    }
    let wcp = whitened_paths(cp, w);
    let eig = hermitian_eig(&wcp.joint_correlation())?;
    let r_true = count_above(&eig.values, d).max(1);
    let u_hat = eig.vectors.columns(0, r_hat);
    let u_true = eig.vectors.columns(0, r_true);

    let noise_term = if w.noise_floor > 0.0 {
        let mut acc = 0.0;
        for i in 0..r_hat {
            acc += w.dewhiten(&u_hat.column(i).into_owned())?.norm_squared();
        }
        acc
    } else {
        0.0
    };
    let t = wcp.t_matrix();
    let mut mis = 0.0;
    for (p, col) in t.column_iter().enumerate() {
        let x = col.into_owned();
        let z = &u_true * (u_true.adjoint() * &x) - &u_hat * (u_hat.adjoint() * &x);
        mis += cp.powers[p] * w.dewhiten(&z)?.norm_squared();
    }
    Ok(MseBound { noise: noise_term, misparameterization: mis, true_rank: r_true })
}

/// Disjoint-space bound at ranks `(r_t_hat, r_r_hat)`, evaluated through the
/// Kronecker structure without forming the joint projector.
pub fn mse_bound_ds(cp: &CompressedPaths, noise: &NoiseAfterBf, r_t_hat: usize, r_r_hat: usize) -> Result<MseBound> {
    let w = &noise.whitener;
    let (n_tx, n_rx) = (w.n_tx_rf, w.n_rx_rf());
    if r_t_hat == 0 || r_t_hat > n_tx || r_r_hat == 0 || r_r_hat > n_rx {
        return Err(invalid(format!("ranks ({r_t_hat}, {r_r_hat}) outside the {n_tx}x{n_rx} model")));
    }
    let wcp = whitened_paths(cp, w);
    let eig_t = hermitian_eig(&wcp.tx_correlation())?;
    let eig_r = hermitian_eig(&wcp.rx_correlation())?;
    let rt_true = count_above(&eig_t.values, n_tx).max(1);
    let rr_true = count_above(&eig_r.values, n_rx).max(1);
    let ut_hat = eig_t.vectors.columns(0, r_t_hat);
    let ut_true = eig_t.vectors.columns(0, rt_true);
    let ur_hat = eig_r.vectors.columns(0, r_r_hat);
    let ur_true = eig_r.vectors.columns(0, rr_true);
    let dewhiten_rx = |v: &CVec| (&w.inv * v) * c64(1.0 / w.scale, 0.0);

    let noise_term = if w.noise_floor > 0.0 {
        let mut acc = 0.0;
        for j in 0..r_r_hat {
            acc += dewhiten_rx(&ur_hat.column(j).into_owned()).norm_squared();
        }
        r_t_hat as f64 * acc
    } else {
        0.0
    };

    let mut mis = 0.0;
    for p in 0..wcp.n_paths() {
        let t = wcp.tx.column(p).into_owned();
        let u = wcp.rx.column(p).into_owned();
        // (conj(U) U^T) t on the transmit side, U U^H u on the receive side
        let a = ut_true.conjugate() * (ut_true.transpose() * &t);
        let c = ut_hat.conjugate() * (ut_hat.transpose() * &t);
        let b = dewhiten_rx(&(&ur_true * (ur_true.adjoint() * &u)));
        let d = dewhiten_rx(&(&ur_hat * (ur_hat.adjoint() * &u)));
        let cross = a.dotc(&c) * b.dotc(&d);
        let e = a.norm_squared() * b.norm_squared() + c.norm_squared() * d.norm_squared() - 2.0 * cross.re;
        mis += cp.powers[p] * e.max(0.0);
    }
    Ok(MseBound { noise: noise_term, misparameterization: mis, true_rank: rt_true * rr_true })
}

/// `tr(Π C Π^H) + tr(ΔΠ R ΔΠ^H)` for dense projectors.
pub fn mse_bound_dense(pi_hat: &CMat, pi_true: &CMat, c: &CMat, r: &CMat) -> f64 {
    let dp = pi_true - pi_hat;
    trace_re(&(pi_hat * c * pi_hat.adjoint())) + trace_re(&(&dp * r * dp.adjoint()))
}
