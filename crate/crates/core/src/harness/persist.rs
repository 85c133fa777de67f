//! Versioned binary store for beam lists and fitted subspace models.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "MVLRSTOR"
//! version    u32
//! config     32 bytes SHA-256 of the HybridConfig as JSON
//! seed       u64
//! count      u32
//! count x {
//!   name_len u32, name (UTF-8)
//!   rows u32, cols u32
//!   rows*cols x (re f64, im f64), column-major
//! }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::arrays::HybridConfig;
use crate::beam_alignment::{BeamList, BeamListEntry};
use crate::error::{Error, Result};
use crate::estimation::{Basis, SubspaceModel, Whitener};
use crate::numerics::{c64, CMat};
use crate::scenario::MvRegion;

pub const MAGIC: &[u8; 8] = b"MVLRSTOR";
pub const VERSION: u32 = 1;

pub fn config_hash(config: &HybridConfig) -> Result<[u8; 32]> {
    let json = serde_json::to_vec(config).map_err(|e| Error::Validation(e.to_string()))?;
    Ok(Sha256::digest(&json).into())
}

/// Named complex matrices tagged with the configuration they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Store {
    pub config_hash: [u8; 32],
    pub seed: u64,
    pub blocks: Vec<(String, CMat)>,
}

impl Store {
    pub fn new(config: &HybridConfig, seed: u64) -> Result<Self> {
        Ok(Store { config_hash: config_hash(config)?, seed, blocks: Vec::new() })
    }

    /// Adds or replaces a block.
    pub fn put(&mut self, name: impl Into<String>, m: CMat) {
        let name = name.into();
        match self.blocks.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = m,
            None => self.blocks.push((name, m)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&CMat> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Validation(format!("store has no block '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.iter().any(|(n, _)| n == name)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.config_hash)?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&len_u32(self.blocks.len())?.to_le_bytes())?;
        for (name, m) in &self.blocks {
            w.write_all(&len_u32(name.len())?.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&len_u32(m.nrows())?.to_le_bytes())?;
            w.write_all(&len_u32(m.ncols())?.to_le_bytes())?;
            for z in m.iter() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Version("file too short for a header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Version("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Version(format!("format version {version}, expected {VERSION}")));
        }
        let mut config_hash = [0u8; 32];
        r.read_exact(&mut config_hash)?;
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed)?;
        let count = read_u32(&mut r)? as usize;
        let mut blocks = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let n = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; n];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Validation("block name is not UTF-8".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 24));
            for _ in 0..rows * cols {
                let re = read_f64(&mut r)?;
                let im = read_f64(&mut r)?;
                data.push(c64(re, im));
            }
            blocks.push((name, CMat::from_vec(rows, cols, data)));
        }
        Ok(Store { config_hash, seed: u64::from_le_bytes(seed), blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Loads a store and checks it was written for `config`.
    pub fn load(path: &Path, config: &HybridConfig) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let store = Self::read_from(std::io::BufReader::new(f))?;
        store.check_config(config)?;
        Ok(store)
    }

    pub fn check_config(&self, config: &HybridConfig) -> Result<()> {
        if self.config_hash != config_hash(config)? {
            return Err(Error::Validation("store was written for a different hybrid configuration".into()));
        }
        Ok(())
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Validation(format!("length {n} does not fit the format")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn real_row(values: &[f64]) -> CMat {
    CMat::from_iterator(1, values.len(), values.iter().map(|&x| c64(x, 0.0)))
}

fn real_values(m: &CMat) -> Vec<f64> {
    m.iter().map(|z| z.re).collect()
}

fn region_block(r: &MvRegion) -> CMat {
    real_row(&[r.center[0], r.center[1], r.center[2], r.heading, r.radius])
}

fn region_from(m: &CMat) -> Result<MvRegion> {
    let v = real_values(m);
    if v.len() != 5 {
        return Err(Error::Validation("region block must hold 5 values".into()));
    }
    Ok(MvRegion { center: [v[0], v[1], v[2]], heading: v[3], radius: v[4] })
}

fn index_block(ix: &[usize]) -> CMat {
    CMat::from_iterator(1, ix.len(), ix.iter().map(|&i| c64(i as f64, 0.0)))
}

fn indices_from(m: &CMat) -> Vec<usize> {
    m.iter().map(|z| z.re as usize).collect()
}

/// Stores a beam list under `prefix/k/{analog,region,indices}` plus
/// `prefix/meta = [entries, heading_threshold]`.
pub fn put_beam_list(store: &mut Store, prefix: &str, list: &BeamList) {
    store.put(format!("{prefix}/meta"), real_row(&[list.entries.len() as f64, list.heading_threshold]));
    for (k, e) in list.entries.iter().enumerate() {
        store.put(format!("{prefix}/{k}/analog"), e.analog.clone());
        store.put(format!("{prefix}/{k}/region"), region_block(&e.region));
        store.put(format!("{prefix}/{k}/indices"), index_block(&e.indices));
    }
}

pub fn get_beam_list(store: &Store, prefix: &str) -> Result<BeamList> {
    let meta = real_values(store.get(&format!("{prefix}/meta"))?);
    if meta.len() != 2 {
        return Err(Error::Validation(format!("malformed '{prefix}/meta'")));
    }
    let mut entries = Vec::new();
    for k in 0..meta[0] as usize {
        entries.push(BeamListEntry {
            analog: store.get(&format!("{prefix}/{k}/analog"))?.clone(),
            region: region_from(store.get(&format!("{prefix}/{k}/region"))?)?,
            indices: indices_from(store.get(&format!("{prefix}/{k}/indices"))?),
        });
    }
    Ok(BeamList { entries, heading_threshold: meta[1] })
}

/// Stores a fitted model under `prefix/...`.
pub fn put_model(store: &mut Store, prefix: &str, m: &SubspaceModel) {
    let w = &m.whitener;
    let kind = match m.basis {
        Basis::Joint { .. } => 0.0,
        Basis::Disjoint { .. } => 1.0,
    };
    store.put(
        format!("{prefix}/meta"),
        real_row(&[kind, m.n_tx_rf as f64, m.n_rx_rf as f64, w.scale, w.noise_floor, w.n_tx_rf as f64]),
    );
    store.put(format!("{prefix}/whitener/fwd"), w.fwd.clone());
    store.put(format!("{prefix}/whitener/inv"), w.inv.clone());
    match &m.basis {
        Basis::Joint { u } => store.put(format!("{prefix}/u"), u.clone()),
        Basis::Disjoint { u_tx, u_rx } => {
            store.put(format!("{prefix}/u_tx"), u_tx.clone());
            store.put(format!("{prefix}/u_rx"), u_rx.clone());
        }
    }
    if let Some(r) = &m.region {
        store.put(format!("{prefix}/region"), region_block(r));
    }
}

pub fn get_model(store: &Store, prefix: &str) -> Result<SubspaceModel> {
    let meta = real_values(store.get(&format!("{prefix}/meta"))?);
    if meta.len() != 6 {
        return Err(Error::Validation(format!("malformed '{prefix}/meta'")));
    }
    let whitener = Whitener {
        scale: meta[3],
        fwd: store.get(&format!("{prefix}/whitener/fwd"))?.clone(),
        inv: store.get(&format!("{prefix}/whitener/inv"))?.clone(),
        noise_floor: meta[4],
        n_tx_rf: meta[5] as usize,
    };
    let basis = if meta[0] == 0.0 {
        Basis::Joint { u: store.get(&format!("{prefix}/u"))?.clone() }
    } else {
        Basis::Disjoint {
            u_tx: store.get(&format!("{prefix}/u_tx"))?.clone(),
            u_rx: store.get(&format!("{prefix}/u_rx"))?.clone(),
        }
    };
    let region_name = format!("{prefix}/region");
    let region = if store.contains(&region_name) { Some(region_from(store.get(&region_name)?)?) } else { None };
    Ok(SubspaceModel { basis, whitener, region, n_tx_rf: meta[1] as usize, n_rx_rf: meta[2] as usize })
}
