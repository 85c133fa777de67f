//! Uniform rectangular arrays, 2D DFT codebooks and analog stage assembly.
//!
//! Element ordering is azimuth-major: element `(m_az, m_el)` sits at index
//! `m_az * n_el + m_el`, which matches `kron(dft(n_az), dft(n_el))`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{cis, kron, CMat, CVec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UraGeometry {
    pub n_az: usize,
    pub n_el: usize,
    #[serde(default = "half_wavelength")]
    pub spacing: f64,
}

fn half_wavelength() -> f64 {
    0.5
}

impl UraGeometry {
    pub fn new(n_az: usize, n_el: usize) -> Result<Self> {
        Self::with_spacing(n_az, n_el, 0.5)
    }

    pub fn with_spacing(n_az: usize, n_el: usize, spacing: f64) -> Result<Self> {
        let g = UraGeometry { n_az, n_el, spacing };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_az == 0 || self.n_el == 0 {
            return Err(invalid("array dimensions must be positive"));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(invalid("element spacing must be positive"));
        }
        Ok(())
    }

    /// Total element count.
    pub fn len(&self) -> usize {
        self.n_az * self.n_el
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[serde(alias = "fc", alias = "FC")]
    FullyConnected,
    #[serde(alias = "sc", alias = "SC")]
    SubConnected,
    #[serde(alias = "fd", alias = "FD")]
    FullDigital,
}

impl Architecture {
    pub fn label(&self) -> &'static str {
        match self {
            Architecture::FullyConnected => "FC",
            Architecture::SubConnected => "SC",
            Architecture::FullDigital => "FD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Tx,
    Rx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub architecture: Architecture,
    pub tx: UraGeometry,
    pub rx: UraGeometry,
    pub n_tx_rf: usize,
    pub n_rx_rf: usize,
    pub n_streams: usize,
}

impl HybridConfig {
    /// 8x8 transmitter, 16x8 receiver, 4 and 8 RF chains, one stream.
    pub fn default_with(architecture: Architecture) -> Self {
        let tx = UraGeometry { n_az: 8, n_el: 8, spacing: 0.5 };
        let rx = UraGeometry { n_az: 16, n_el: 8, spacing: 0.5 };
        let (n_tx_rf, n_rx_rf) = match architecture {
            Architecture::FullDigital => (tx.len(), rx.len()),
            _ => (4, 8),
        };
        HybridConfig { architecture, tx, rx, n_tx_rf, n_rx_rf, n_streams: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        self.tx.validate()?;
        self.rx.validate()?;
        let (nt, nr) = (self.tx.len(), self.rx.len());
        if self.n_tx_rf == 0 || self.n_rx_rf == 0 || self.n_streams == 0 {
            return Err(invalid("RF chain and stream counts must be positive"));
        }
        match self.architecture {
            Architecture::FullDigital => {
                if self.n_tx_rf != nt || self.n_rx_rf != nr {
                    return Err(invalid(format!(
                        "full digital needs one RF chain per antenna ({nt}, {nr}), got ({}, {})",
                        self.n_tx_rf, self.n_rx_rf
                    )));
                }
            }
            Architecture::FullyConnected | Architecture::SubConnected => {
                if self.n_tx_rf >= nt || self.n_rx_rf >= nr {
                    return Err(invalid(format!(
                        "hybrid arrays need fewer RF chains than antennas ({}/{nt}, {}/{nr})",
                        self.n_tx_rf, self.n_rx_rf
                    )));
                }
            }
        }
        if self.architecture == Architecture::SubConnected {
            self.sub_array(Side::Tx)?;
            self.sub_array(Side::Rx)?;
        }
        if self.n_streams > self.n_tx_rf.min(self.n_rx_rf) {
            return Err(invalid("n_streams exceeds min(n_tx_rf, n_rx_rf)"));
        }
        Ok(())
    }

    pub fn geometry(&self, side: Side) -> &UraGeometry {
        match side {
            Side::Tx => &self.tx,
            Side::Rx => &self.rx,
        }
    }

    pub fn n_rf(&self, side: Side) -> usize {
        match side {
            Side::Tx => self.n_tx_rf,
            Side::Rx => self.n_rx_rf,
        }
    }

    /// Geometry of one sub-array for the sub-connected layout.
    ///
    /// Sub-arrays are contiguous blocks of `N / n_rf` elements in the
    /// azimuth-major ordering, so they must tile whole elevation columns or
    /// split a single column evenly.
    pub fn sub_array(&self, side: Side) -> Result<UraGeometry> {
        let g = self.geometry(side);
        let n_rf = self.n_rf(side);
        let n = g.len();
        if n_rf == 0 || n % n_rf != 0 {
            return Err(invalid(format!(
                "sub-connected layout needs N = {n} divisible by n_rf = {n_rf}"
            )));
        }
        let nb = n / n_rf;
        if nb % g.n_el == 0 {
            Ok(UraGeometry { n_az: nb / g.n_el, n_el: g.n_el, spacing: g.spacing })
        } else if g.n_el % nb == 0 {
            Ok(UraGeometry { n_az: 1, n_el: nb, spacing: g.spacing })
        } else {
            Err(invalid(format!(
                "sub-array of {nb} elements does not tile a {}x{} array",
                g.n_az, g.n_el
            )))
        }
    }

    /// Codebook the alignment stage scans for this side.
    pub fn codebook(&self, side: Side) -> Result<Codebook> {
        match self.architecture {
            Architecture::SubConnected => {
                let sub = self.sub_array(side)?;
                let mut cb = dft_codebook_2d(sub.n_az, sub.n_el);
                cb.scope = CodebookScope::SubArray;
                Ok(cb)
            }
            _ => {
                let g = self.geometry(side);
                Ok(dft_codebook_2d(g.n_az, g.n_el))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookScope {
    FullArray,
    SubArray,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub matrix: CMat,
    pub scope: CodebookScope,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_angles(azimuth: f64, elevation: f64) -> Result<()> {
    if !(azimuth > -PI && azimuth <= PI) {
        return Err(invalid(format!("azimuth {azimuth} outside (-pi, pi]")));
    }
    if !(-PI / 2.0..=PI / 2.0).contains(&elevation) {
        return Err(invalid(format!("elevation {elevation} outside [-pi/2, pi/2]")));
    }
    Ok(())
}

/// Array response toward `(azimuth, elevation)`, unit-modulus entries.
pub fn steering_vector(g: &UraGeometry, azimuth: f64, elevation: f64) -> Result<CVec> {
    check_angles(azimuth, elevation)?;
    let u = azimuth.sin() * elevation.cos();
    let v = elevation.sin();
    let k = 2.0 * PI * g.spacing;
    Ok(CVec::from_fn(g.len(), |i, _| {
        let (m_az, m_el) = ((i / g.n_el) as f64, (i % g.n_el) as f64);
        cis(k * (m_az * u + m_el * v))
    }))
}

/// Steering vectors stacked as columns.
pub fn steering_matrix(g: &UraGeometry, directions: &[(f64, f64)]) -> Result<CMat> {
    let mut out = CMat::zeros(g.len(), directions.len());
    for (p, &(az, el)) in directions.iter().enumerate() {
        out.set_column(p, &steering_vector(g, az, el)?);
    }
    Ok(out)
}

/// Unitary DFT matrix with entries `exp(-j 2 pi m n / N) / sqrt(N)`.
pub fn dft(n: usize) -> CMat {
    let s = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, n, |m, k| {
        let phase = -2.0 * PI * ((m * k) % n) as f64 / n as f64;
        cis(phase) * s
    })
}

/// Full-array 2D DFT codebook `kron(dft(n1), dft(n2))`.
pub fn dft_codebook_2d(n1: usize, n2: usize) -> Codebook {
    Codebook { matrix: kron(&dft(n1), &dft(n2)), scope: CodebookScope::FullArray }
}

/// Direction whose half-wavelength steering vector matches codebook column
/// `(i_az, i_el)` of `dft_codebook_2d(n_az, n_el)`, if it exists.
pub fn grid_direction(n_az: usize, n_el: usize, i_az: usize, i_el: usize) -> Option<(f64, f64)> {
    // spatial frequency -2k/N wrapped into [-1, 1)
    let wrap = |k: usize, n: usize| {
        let x = -2.0 * k as f64 / n as f64;
        (x + 1.0).rem_euclid(2.0) - 1.0
    };
    let v = wrap(i_el, n_el);
    let u = wrap(i_az, n_az);
    let el = v.asin();
    let c = el.cos();
    if c <= 1e-12 {
        return if u.abs() < 1e-12 { Some((0.0, el)) } else { None };
    }
    let s = u / c;
    if s.abs() > 1.0 {
        return None;
    }
    Some((s.asin(), el))
}

fn check_distinct(indices: &[usize], n_rf: usize, codebook_len: usize) -> Result<()> {
    if indices.len() != n_rf {
        return Err(invalid(format!("expected {n_rf} beam indices, got {}", indices.len())));
    }
    for (k, &i) in indices.iter().enumerate() {
        if i >= codebook_len {
            return Err(invalid(format!("beam index {i} out of range ({codebook_len} beams)")));
        }
        if indices[..k].contains(&i) {
            return Err(invalid(format!("beam index {i} repeated")));
        }
    }
    Ok(())
}

/// Analog precoder (`Tx`) or combiner (`Rx`) from selected beam indices.
pub fn assemble_analog(config: &HybridConfig, side: Side, beam_indices: &[usize]) -> Result<CMat> {
    let g = config.geometry(side);
    let n = g.len();
    let n_rf = config.n_rf(side);
    match config.architecture {
        Architecture::FullDigital => Ok(CMat::identity(n, n)),
        Architecture::FullyConnected => {
            let cb = config.codebook(side)?;
            check_distinct(beam_indices, n_rf, cb.len())?;
            // codebook entries already have modulus 1/sqrt(N); the rescale is a no-op
            // kept so a differently normalized codebook would still meet the constraint
            let mut out = CMat::zeros(n, n_rf);
            for (k, &i) in beam_indices.iter().enumerate() {
                let col = cb.matrix.column(i);
                let scale = 1.0 / ((n as f64).sqrt() * col[0].norm());
                out.set_column(k, &col.scale(scale));
            }
            Ok(out)
        }
        Architecture::SubConnected => {
            let cb = config.codebook(side)?;
            check_distinct(beam_indices, n_rf, cb.len())?;
            let nb = n / n_rf;
            let mut out = CMat::zeros(n, n_rf);
            for (k, &i) in beam_indices.iter().enumerate() {
                for r in 0..nb {
                    out[(k * nb + r, k)] = cb.matrix[(r, i)];
                }
            }
            Ok(out)
        }
    }
}

/// Full-array beam used during alignment for codebook column `index`.
///
/// Fully connected probes are the codebook columns. Sub-connected probes
/// drive the first sub-array only, so the measured power reflects the
/// sub-array pattern rather than a replicated-array factor.
pub fn alignment_probe(config: &HybridConfig, side: Side, codebook: &Codebook, index: usize) -> Result<CVec> {
    let n = config.geometry(side).len();
    if index >= codebook.len() {
        return Err(invalid(format!("beam index {index} out of range")));
    }
    match codebook.scope {
        CodebookScope::FullArray => Ok(codebook.matrix.column(index).into_owned()),
        CodebookScope::SubArray => {
            let mut v = CVec::zeros(n);
            for r in 0..codebook.matrix.nrows() {
                v[r] = codebook.matrix[(r, index)];
            }
            Ok(v)
        }
    }
}

/// All alignment probes of one side as columns.
pub fn alignment_probes(config: &HybridConfig, side: Side) -> Result<CMat> {
    let cb = config.codebook(side)?;
    let n = config.geometry(side).len();
    let mut out = CMat::zeros(n, cb.len());
    for i in 0..cb.len() {
        out.set_column(i, &alignment_probe(config, side, &cb, i)?);
    }
    Ok(out)
}
