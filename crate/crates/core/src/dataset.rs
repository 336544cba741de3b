//! Observed fields on a space-time grid and their on-disk format.
//!
//! Layout of a dataset file, all integers little-endian:
//!
//! ```text
//! "SPDE" | version u16 | meta_len u64 | meta JSON | count u64 | count × f64 | checksum u64
//! ```
//!
//! The checksum is the first eight bytes of the SHA-256 digest of everything
//! before it, read as a little-endian `u64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{NoiseSpec, OperatorParams, SpaceTimeGrid, VolatilityProfile};
use crate::simulate::SimulationConfig;

pub const MAGIC: &[u8; 4] = b"SPDE";
pub const FORMAT_VERSION: u16 = 1;

/// Provenance of a dataset. Everything is optional so that externally
/// produced fields can be wrapped too.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub params: Option<OperatorParams>,
    pub noise: Option<NoiseSpec>,
    pub profile: Option<VolatilityProfile>,
    pub modes: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub replication: Option<u64>,
}

impl DatasetMeta {
    pub fn from_simulation(cfg: &SimulationConfig) -> Self {
        Self {
            params: Some(cfg.params.clone()),
            noise: Some(cfg.noise),
            profile: Some(cfg.profile.clone()),
            modes: Some(cfg.modes.counts().to_vec()),
            seed: Some(cfg.seed),
            replication: Some(cfg.replication),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u16,
    grid: SpaceTimeGrid,
    meta: DatasetMeta,
}

/// `X_{t_i}(y_j)` stored time-major: row `i` holds the flattened spatial slice
/// with the last axis varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDataset {
    grid: SpaceTimeGrid,
    values: Array2<f64>,
    meta: DatasetMeta,
}

impl FieldDataset {
    pub fn new(grid: SpaceTimeGrid, values: Array2<f64>, meta: DatasetMeta) -> Result<Self> {
        let want = (grid.n_time + 1, grid.space_len());
        if values.dim() != want {
            return Err(Error::Format(format!(
                "tensor shape {:?} does not match grid {want:?}",
                values.dim()
            )));
        }
        let ds = Self { grid, values, meta };
        if let Some(bad) = ds.boundary_nodes().find(|&f| ds.values.column(f).iter().any(|&v| v != 0.0)) {
            return Err(Error::Format(format!(
                "field is nonzero on boundary node {bad}"
            )));
        }
        Ok(ds)
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn flat_index(&self, j: &[usize]) -> usize {
        match *j {
            [j1] => j1,
            [j1, j2] => j1 * (self.grid.m_space[1] + 1) + j2,
            _ => panic!("spatial index must have 1 or 2 components"),
        }
    }

    pub fn at(&self, i: usize, j: &[usize]) -> f64 {
        self.values[[i, self.flat_index(j)]]
    }

    /// Time series at one spatial node.
    pub fn series(&self, j: &[usize]) -> ArrayView1<'_, f64> {
        self.values.column(self.flat_index(j))
    }

    pub fn slice(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        let shape = self.grid.space_shape();
        (0..self.grid.space_len()).filter(move |&f| match shape.as_slice() {
            [p] => f == 0 || f == p - 1,
            [p1, p2] => {
                let (j1, j2) = (f / p2, f % p2);
                j1 == 0 || j1 == p1 - 1 || j2 == 0 || j2 == p2 - 1
            }
            _ => false,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            version: FORMAT_VERSION,
            grid: self.grid.clone(),
            meta: self.meta.clone(),
        })?;
        let mut buf = Vec::with_capacity(header.len() + 8 * self.values.len() + 32);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in self.values.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let sum = checksum(&buf);
        buf.extend_from_slice(&sum.to_le_bytes());
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 2 + 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing SPDE magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version > FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        if bytes.len() < 4 + 2 + 8 + 8 + 8 {
            return Err(Error::Format("file truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let computed = checksum(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let mut cur = Cursor { buf: body, pos: 6 };
        let meta_len = cur.u64()? as usize;
        let header: Header = serde_json::from_slice(cur.take(meta_len)?)?;
        let count = cur.u64()? as usize;
        let raw = cur.take(count.checked_mul(8).ok_or_else(|| Error::Format("bad count".into()))?)?;
        if cur.pos != body.len() {
            return Err(Error::Format("trailing bytes after tensor".into()));
        }
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let shape = (header.grid.n_time + 1, header.grid.space_len());
        let values = Array2::from_shape_vec(shape, data)
            .map_err(|e| Error::Format(format!("tensor shape: {e}")))?;
        Self::new(header.grid, values, header.meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// One row per grid node: `i, j_1[, j_2], t, y_1[, y_2], value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.grid.dim();
        let mut head = vec!["i".to_string()];
        head.extend((1..=d).map(|k| format!("j{k}")));
        head.push("t".into());
        head.extend((1..=d).map(|k| format!("y{k}")));
        head.push("value".into());
        w.write_record(&head)?;
        let shape = self.grid.space_shape();
        for i in 0..=self.grid.n_time {
            let t = self.grid.time(i);
            for f in 0..self.grid.space_len() {
                let idx: Vec<usize> = if d == 1 { vec![f] } else { vec![f / shape[1], f % shape[1]] };
                let mut rec = vec![i.to_string()];
                rec.extend(idx.iter().map(|j| j.to_string()));
                rec.push(t.to_string());
                rec.extend(idx.iter().enumerate().map(|(k, &j)| self.grid.coord(k, j).to_string()));
                rec.push(self.values[[i, f]].to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("file truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{assemble_field, simulate_coefficients, InitialState, ModeSet};

    fn sample() -> FieldDataset {
        let cfg = SimulationConfig {
            params: OperatorParams::new_1d(0.0, 0.2, 0.2).unwrap(),
            noise: NoiseSpec::cylindrical(),
            profile: VolatilityProfile::single_change(0.5, 1.0, 1.8).unwrap(),
            n_time: 12,
            modes: ModeSet::new(vec![10]).unwrap(),
            seed: 3,
            replication: 7,
            initial: InitialState::Zero,
        };
        let c = simulate_coefficients(&cfg).unwrap();
        assemble_field(&c, &SpaceTimeGrid::new(12, vec![20]).unwrap()).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let ds = sample();
        let bytes = ds.to_bytes().unwrap();
        let back = FieldDataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.meta().seed, Some(3));
        assert_eq!(back.meta().replication, Some(7));
        // same input, same bytes
        assert_eq!(sample().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupted_header_is_a_checksum_error() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[20] ^= 0x01;
        assert!(matches!(FieldDataset::from_bytes(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4..6].copy_from_slice(&2u16.to_le_bytes());
        assert!(matches!(
            FieldDataset::from_bytes(&bytes),
            Err(Error::Version { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(FieldDataset::from_bytes(&bytes[..bytes.len() / 2]).is_err());
        assert!(FieldDataset::from_bytes(&bytes[..3]).is_err());
    }

    #[test]
    fn file_round_trip_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample();
        let path = dir.path().join("field.spde");
        ds.save(&path).unwrap();
        assert_eq!(FieldDataset::load(&path).unwrap(), ds);

        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "i,j1,t,y1,value");
        assert_eq!(lines.len(), 1 + 13 * 21);
        let row: Vec<_> = lines[1 + 5 * 21 + 4].split(',').collect();
        assert_eq!(row[0], "5");
        assert_eq!(row[1], "4");
        assert_eq!(row[4].parse::<f64>().unwrap(), ds.at(5, &[4]));
    }

    #[test]
    fn nonzero_boundary_is_rejected() {
        let grid = SpaceTimeGrid::new(2, vec![4]).unwrap();
        let mut v = Array2::zeros((3, 5));
        v[[1, 4]] = 1.0;
        assert!(FieldDataset::new(grid.clone(), v, DatasetMeta::default()).is_err());
        let mut v = Array2::zeros((3, 5));
        v[[1, 2]] = 1.0;
        assert!(FieldDataset::new(grid, v, DatasetMeta::default()).is_ok());
    }
}
