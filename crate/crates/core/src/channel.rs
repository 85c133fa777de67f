//! Sparse multipath channel: path sets, WSSUS amplitude draws, assembly,
//! analog compression and diversity orders.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arrays::{steering_matrix, UraGeometry};
use crate::error::{invalid, Result};
use crate::numerics::{c64, khatri_rao, numerical_rank, CMat, CVec};

/// Azimuth and elevation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Direction {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Direction { azimuth, elevation }
    }

    fn pair(&self) -> (f64, f64) {
        (self.azimuth, self.elevation)
    }
}

/// Spatial features of one region: departure and arrival directions with
/// normalized path powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub aod: Vec<Direction>,
    pub aoa: Vec<Direction>,
    pub powers: Vec<f64>,
}

impl PathSet {
    /// Builds a path set whose powers already sum to one.
    pub fn new(aod: Vec<Direction>, aoa: Vec<Direction>, powers: Vec<f64>) -> Result<Self> {
        let ps = PathSet { aod, aoa, powers };
        ps.validate()?;
        Ok(ps)
    }

    /// Builds a path set from positive raw powers, normalizing them.
    pub fn from_raw_powers(aod: Vec<Direction>, aoa: Vec<Direction>, raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(invalid("path powers must be positive and finite"));
        }
        let total: f64 = raw.iter().sum();
        Self::new(aod, aoa, raw.iter().map(|p| p / total).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.powers.len();
        if p == 0 {
            return Err(invalid("path set is empty"));
        }
        if self.aod.len() != p || self.aoa.len() != p {
            return Err(invalid("path set: direction and power counts differ"));
        }
        if self.powers.iter().any(|&x| !(x > 0.0)) {
            return Err(invalid("path powers must be positive"));
        }
        let total: f64 = self.powers.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("path powers sum to {total}, expected 1")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    /// Transmit steering matrix `A_T`, one column per path.
    pub fn tx_steering(&self, tx: &UraGeometry) -> Result<CMat> {
        let d: Vec<_> = self.aod.iter().map(Direction::pair).collect();
        steering_matrix(tx, &d)
    }

    /// Receive steering matrix `A_R`, one column per path.
    pub fn rx_steering(&self, rx: &UraGeometry) -> Result<CMat> {
        let d: Vec<_> = self.aoa.iter().map(Direction::pair).collect();
        steering_matrix(rx, &d)
    }
}

/// One fading draw of a path set.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub alpha: CVec,
    pub h: CMat,
}

/// Independent circularly symmetric Gaussian gains with variances `P_p`.
pub fn draw_amplitudes<R: Rng + ?Sized>(paths: &PathSet, rng: &mut R) -> CVec {
    draw_gains(&paths.powers, rng)
}

/// [`draw_amplitudes`] from the power profile alone.
pub fn draw_gains<R: Rng + ?Sized>(powers: &[f64], rng: &mut R) -> CVec {
    CVec::from_iterator(
        powers.len(),
        powers.iter().map(|&p| {
            let s = (p / 2.0).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            c64(s * re, s * im)
        }),
    )
}

/// `H = sum_p alpha_p a_R(aoa_p) a_T(aod_p)^T`.
pub fn assemble_channel(paths: &PathSet, alpha: &CVec, tx: &UraGeometry, rx: &UraGeometry) -> Result<CMat> {
    if alpha.len() != paths.len() {
        return Err(invalid(format!(
            "{} amplitudes for {} paths",
            alpha.len(),
            paths.len()
        )));
    }
    let at = paths.tx_steering(tx)?;
    let ar = paths.rx_steering(rx)?;
    let mut h = CMat::zeros(rx.len(), tx.len());
    for p in 0..paths.len() {
        h += (ar.column(p) * at.column(p).transpose()) * alpha[p];
    }
    Ok(h)
}

/// Draws amplitudes and assembles the channel.
pub fn realize<R: Rng + ?Sized>(paths: &PathSet, tx: &UraGeometry, rx: &UraGeometry, rng: &mut R) -> Result<ChannelRealization> {
    let alpha = draw_amplitudes(paths, rng);
    let h = assemble_channel(paths, &alpha, tx, rx)?;
    Ok(ChannelRealization { alpha, h })
}

/// `W_RF^H H F_RF`.
pub fn compress_channel(h: &CMat, f_rf: &CMat, w_rf: &CMat) -> Result<CMat> {
    if h.ncols() != f_rf.nrows() || h.nrows() != w_rf.nrows() {
        return Err(invalid(format!(
            "cannot compress {}x{} channel with F {}x{} and W {}x{}",
            h.nrows(),
            h.ncols(),
            f_rf.nrows(),
            f_rf.ncols(),
            w_rf.nrows(),
            w_rf.ncols()
        )));
    }
    Ok(w_rf.adjoint() * h * f_rf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressedOrders {
    pub r_t: usize,
    pub r_r: usize,
    pub r: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiversityOrders {
    pub r_t: usize,
    pub r_r: usize,
    pub r: usize,
    pub compressed: Option<CompressedOrders>,
}

/// Numerical ranks of the steering factors and, with analog stages, of
/// their compressed counterparts.
pub fn diversity_orders(
    paths: &PathSet,
    tx: &UraGeometry,
    rx: &UraGeometry,
    analog: Option<(&CMat, &CMat)>,
) -> Result<DiversityOrders> {
    let at = paths.tx_steering(tx)?;
    let ar = paths.rx_steering(rx)?;
    let r_t = numerical_rank(&at)?;
    let r_r = numerical_rank(&ar)?;
    let r = numerical_rank(&khatri_rao(&at, &ar)?)?;
    let compressed = match analog {
        None => None,
        Some((f, w)) => {
            let cp = CompressedPaths::from_steering(&at, &ar, Some(f), Some(w), &paths.powers)?;
            Some(CompressedOrders {
                r_t: numerical_rank(&cp.tx)?,
                r_r: numerical_rank(&cp.rx)?,
                r: numerical_rank(&cp.t_matrix())?,
            })
        }
    };
    Ok(DiversityOrders { r_t, r_r, r, compressed })
}

/// Path factors after the analog stages.
///
/// Column `p` of `tx` is `F_RF^T a_T(aod_p)` and column `p` of `rx` is
/// `W_RF^H a_R(aoa_p)`, so the compressed channel is
/// `rx * diag(alpha) * tx^T` and column `p` of `T` is `tx_p ⊗ rx_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedPaths {
    pub tx: CMat,
    pub rx: CMat,
    pub powers: Vec<f64>,
}

impl CompressedPaths {
    /// `None` analog stages mean identity (full digital).
    pub fn new(
        paths: &PathSet,
        tx: &UraGeometry,
        rx: &UraGeometry,
        f_rf: Option<&CMat>,
        w_rf: Option<&CMat>,
    ) -> Result<Self> {
        let at = paths.tx_steering(tx)?;
        let ar = paths.rx_steering(rx)?;
        Self::from_steering(&at, &ar, f_rf, w_rf, &paths.powers)
    }

    fn from_steering(at: &CMat, ar: &CMat, f_rf: Option<&CMat>, w_rf: Option<&CMat>, powers: &[f64]) -> Result<Self> {
        let tx = match f_rf {
            Some(f) => {
                if f.nrows() != at.nrows() {
                    return Err(invalid("F_RF row count does not match the transmit array"));
                }
                f.transpose() * at
            }
            None => at.clone(),
        };
        let rx = match w_rf {
            Some(w) => {
                if w.nrows() != ar.nrows() {
                    return Err(invalid("W_RF row count does not match the receive array"));
                }
                w.adjoint() * ar
            }
            None => ar.clone(),
        };
        Ok(CompressedPaths { tx, rx, powers: powers.to_vec() })
    }

    pub fn n_tx(&self) -> usize {
        self.tx.nrows()
    }

    pub fn n_rx(&self) -> usize {
        self.rx.nrows()
    }

    pub fn n_paths(&self) -> usize {
        self.powers.len()
    }

    /// Compressed channel for the given amplitudes.
    pub fn channel(&self, alpha: &CVec) -> CMat {
        let mut scaled = self.rx.clone();
        for (p, mut col) in scaled.column_iter_mut().enumerate() {
            col *= alpha[p];
        }
        scaled * self.tx.transpose()
    }

    /// `T = tx ◇ rx`.
    pub fn t_matrix(&self) -> CMat {
        khatri_rao(&self.tx, &self.rx).expect("tx and rx share the path count")
    }

    /// `T P T^H`.
    pub fn joint_correlation(&self) -> CMat {
        let t = self.t_matrix();
        let mut tp = t.clone();
        for (p, mut col) in tp.column_iter_mut().enumerate() {
            col *= c64(self.powers[p], 0.0);
        }
        tp * t.adjoint()
    }

    /// `E[H^H H] = sum_p P_p |rx_p|^2 conj(tx_p) tx_p^T`.
    pub fn tx_correlation(&self) -> CMat {
        let n = self.n_tx();
        let mut out = CMat::zeros(n, n);
        for p in 0..self.n_paths() {
            let w = self.powers[p] * self.rx.column(p).norm_squared();
            let t = self.tx.column(p);
            out += (t.conjugate() * t.transpose()) * c64(w, 0.0);
        }
        out
    }

    /// `E[H H^H] = sum_p P_p |tx_p|^2 rx_p rx_p^H`.
    pub fn rx_correlation(&self) -> CMat {
        let n = self.n_rx();
        let mut out = CMat::zeros(n, n);
        for p in 0..self.n_paths() {
            let w = self.powers[p] * self.tx.column(p).norm_squared();
            let u = self.rx.column(p);
            out += (u * u.adjoint()) * c64(w, 0.0);
        }
        out
    }

    /// Applies `m` to every receive factor.
    pub fn map_rx(&self, m: &CMat) -> CompressedPaths {
        CompressedPaths { tx: self.tx.clone(), rx: m * &self.rx, powers: self.powers.clone() }
    }
}
