//! The compressed on-disk representation.
//!
//! A TDBC archive is a header (dimensions, quadrature weights, time-step
//! policy) followed by length-prefixed per-step records, each holding the
//! core tensor and the bases at one instant. Records are little-endian
//! 64-bit floats and appendable; a truncated tail loses only the last
//! incomplete record. A companion TDBT format stores one raw dense tensor
//! per file for snapshot exchange.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, TdbError};
use crate::state::TdbState;
use crate::tensor::{DenseTensor, ModeWeights, MultiRank};

const TDBC_MAGIC: &[u8; 4] = b"TDBC";
const TDBT_MAGIC: &[u8; 4] = b"TDBT";
const TDBC_VERSION: u32 = 1;
const TDBT_VERSION: u32 = 1;

/// Archive-level metadata written once at the front of the file.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveHeader {
    pub dims: Vec<usize>,
    pub weights: ModeWeights,
    pub dt: f64,
    pub integrator_id: u8,
    pub derivative_id: u8,
    pub created: String,
}

impl ArchiveHeader {
    pub fn validate(&self) -> Result<()> {
        self.weights.check_dims(&self.dims)
    }
}

/// Flags attached to each record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecordFlags {
    pub reinit: bool,
    pub rank_changed: bool,
}

impl RecordFlags {
    fn to_byte(self) -> u8 {
        (self.reinit as u8) | ((self.rank_changed as u8) << 1)
    }

    fn from_byte(b: u8) -> Self {
        Self {
            reinit: b & 1 != 0,
            rank_changed: b & 2 != 0,
        }
    }
}

/// One stored step: time, multirank, error at write time, core and bases.
#[derive(Debug, Clone)]
pub struct ArchiveRecord {
    pub time: f64,
    pub ranks: Vec<usize>,
    pub flags: RecordFlags,
    pub eps: f64,
    pub core: DenseTensor,
    /// Basis matrices stored column-major, one per mode.
    pub bases: Vec<Vec<f64>>,
}

impl ArchiveRecord {
    pub fn to_state(&self, header: &ArchiveHeader) -> Result<TdbState> {
        let mut bases = Vec::with_capacity(self.ranks.len());
        for (n, cols) in self.bases.iter().enumerate() {
            let nn = header.dims[n];
            let r = self.ranks[n];
            if cols.len() != nn * r {
                return Err(TdbError::ShapeMismatch {
                    context: format!("record basis {n}: {} values for {nn}x{r}", cols.len()),
                });
            }
            bases.push(nalgebra::DMatrix::from_column_slice(nn, r, cols));
        }
        TdbState::new(self.time, self.core.clone(), bases, header.weights.clone())
    }

    pub fn from_state(state: &TdbState, flags: RecordFlags, eps: f64) -> Self {
        Self {
            time: state.time,
            ranks: state.multirank().ranks().to_vec(),
            flags,
            eps,
            core: state.core.clone(),
            bases: state
                .bases
                .iter()
                .map(|b| b.as_slice().to_vec())
                .collect(),
        }
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(TdbError::Format {
                path: self.path.to_string(),
                context: format!("unexpected end of data at offset {}", self.pos),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn encode_header(h: &ArchiveHeader) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(TDBC_MAGIC);
    put_u32(&mut buf, TDBC_VERSION);
    put_u32(&mut buf, h.dims.len() as u32);
    for &d in &h.dims {
        put_u64(&mut buf, d as u64);
    }
    for w in h.weights.modes() {
        for &x in w {
            put_f64(&mut buf, x);
        }
    }
    put_f64(&mut buf, h.dt);
    buf.push(h.integrator_id);
    buf.push(h.derivative_id);
    put_u32(&mut buf, h.created.len() as u32);
    buf.extend_from_slice(h.created.as_bytes());
    buf
}

fn encode_record(rec: &ArchiveRecord) -> Vec<u8> {
    let mut payload = Vec::new();
    put_f64(&mut payload, rec.time);
    for &r in &rec.ranks {
        put_u64(&mut payload, r as u64);
    }
    payload.push(rec.flags.to_byte());
    put_f64(&mut payload, rec.eps);
    for &v in rec.core.values() {
        put_f64(&mut payload, v);
    }
    for b in &rec.bases {
        for &v in b {
            put_f64(&mut payload, v);
        }
    }
    let mut buf = Vec::with_capacity(payload.len() + 8);
    put_u64(&mut buf, payload.len() as u64);
    buf.extend_from_slice(&payload);
    buf
}

/// Append-only archive writer. One writer owns the file handle.
pub struct ArchiveWriter {
    out: BufWriter<File>,
    header: ArchiveHeader,
    last_time: Option<f64>,
    records_written: usize,
}

impl ArchiveWriter {
    pub fn create(path: impl AsRef<Path>, header: ArchiveHeader) -> Result<Self> {
        header.validate()?;
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        out.write_all(&encode_header(&header))?;
        out.flush()?;
        Ok(Self {
            out,
            header,
            last_time: None,
            records_written: 0,
        })
    }

    pub fn header(&self) -> &ArchiveHeader {
        &self.header
    }

    pub fn records_written(&self) -> usize {
        self.records_written
    }

    /// Durably append one record; times must be strictly increasing.
    pub fn append(&mut self, state: &TdbState, flags: RecordFlags, eps: f64) -> Result<()> {
        if state.dims() != self.header.dims {
            return Err(TdbError::ShapeMismatch {
                context: format!(
                    "append: state dims {:?} vs archive dims {:?}",
                    state.dims(),
                    self.header.dims
                ),
            });
        }
        if let Some(prev) = self.last_time {
            if state.time <= prev {
                return Err(TdbError::UnorderedTime {
                    prev,
                    t: state.time,
                });
            }
        }
        let rec = ArchiveRecord::from_state(state, flags, eps);
        self.out.write_all(&encode_record(&rec))?;
        self.out.flush()?;
        self.last_time = Some(state.time);
        self.records_written += 1;
        Ok(())
    }
}

/// Fully parsed archive. Records stop at the last complete one, so a file
/// truncated mid-record is still readable.
pub struct Archive {
    pub header: ArchiveHeader,
    pub records: Vec<ArchiveRecord>,
    pub path: PathBuf,
}

impl Archive {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let path_str = path.display().to_string();
        let mut data = Vec::new();
        BufReader::new(File::open(&path)?).read_to_end(&mut data)?;
        let mut cur = Cursor {
            data: &data,
            pos: 0,
            path: &path_str,
        };

        if cur.take(4)? != TDBC_MAGIC {
            return Err(TdbError::Format {
                path: path_str,
                context: "bad magic, not a TDBC archive".into(),
            });
        }
        let version = cur.u32()?;
        if version != TDBC_VERSION {
            return Err(TdbError::Format {
                path: path_str,
                context: format!("unsupported version {version}"),
            });
        }
        let p = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(p);
        for _ in 0..p {
            dims.push(cur.u64()? as usize);
        }
        let mut weights = Vec::with_capacity(p);
        for &d in &dims {
            weights.push(cur.f64_vec(d)?);
        }
        let weights = ModeWeights::new(weights)?;
        let dt = cur.f64()?;
        let integrator_id = cur.take(1)?[0];
        let derivative_id = cur.take(1)?[0];
        let created_len = cur.u32()? as usize;
        let created = String::from_utf8(cur.take(created_len)?.to_vec()).map_err(|_| {
            TdbError::Format {
                path: path_str.clone(),
                context: "header creation string is not UTF-8".into(),
            }
        })?;
        let header = ArchiveHeader {
            dims,
            weights,
            dt,
            integrator_id,
            derivative_id,
            created,
        };

        let mut records = Vec::new();
        loop {
            // stop at EOF or at an incomplete trailing record
            if cur.pos + 8 > cur.data.len() {
                break;
            }
            let len = u64::from_le_bytes(cur.data[cur.pos..cur.pos + 8].try_into().unwrap())
                as usize;
            if cur.pos + 8 + len > cur.data.len() {
                break;
            }
            cur.pos += 8;
            let end = cur.pos + len;
            let time = cur.f64()?;
            let mut ranks = Vec::with_capacity(p);
            for _ in 0..p {
                ranks.push(cur.u64()? as usize);
            }
            let flags = RecordFlags::from_byte(cur.take(1)?[0]);
            let eps = cur.f64()?;
            let core_len: usize = ranks.iter().product();
            let core = DenseTensor::from_values(&ranks, cur.f64_vec(core_len)?)?;
            let mut bases = Vec::with_capacity(p);
            for (n, &r) in ranks.iter().enumerate() {
                bases.push(cur.f64_vec(header.dims[n] * r)?);
            }
            if cur.pos != end {
                return Err(TdbError::Format {
                    path: path_str.clone(),
                    context: format!("record length mismatch at offset {}", cur.pos),
                });
            }
            if let Some(last) = records.last() {
                let last: &ArchiveRecord = last;
                if time <= last.time {
                    return Err(TdbError::UnorderedTime {
                        prev: last.time,
                        t: time,
                    });
                }
            }
            records.push(ArchiveRecord {
                time,
                ranks,
                flags,
                eps,
                core,
                bases,
            });
        }

        Ok(Self {
            header,
            records,
            path,
        })
    }

    pub fn time_range(&self) -> Option<(f64, f64)> {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => Some((a.time, b.time)),
            _ => None,
        }
    }

    /// Record with the greatest time <= t_query (nearest-previous policy).
    pub fn record_at(&self, t_query: f64) -> Result<&ArchiveRecord> {
        let (t0, t1) = self.time_range().ok_or_else(|| TdbError::Degenerate {
            context: "archive holds no records".into(),
        })?;
        if t_query < t0 || t_query > t1 {
            return Err(TdbError::TimeOutOfRange {
                t: t_query,
                t0,
                t1,
            });
        }
        let idx = self
            .records
            .partition_point(|r| r.time <= t_query)
            .saturating_sub(1);
        Ok(&self.records[idx])
    }

    /// Decompress the snapshot at the nearest-previous stored time.
    pub fn reconstruct_at(&self, t_query: f64) -> Result<DenseTensor> {
        let rec = self.record_at(t_query)?;
        Ok(rec.to_state(&self.header)?.reconstruct())
    }
}

/// Instantaneous storage ratio of the full data to the TDB components.
pub fn compression_ratio(dims: &[usize], ranks: &MultiRank) -> f64 {
    let full: f64 = dims.iter().map(|&d| d as f64).product();
    let bases: f64 = ranks
        .ranks()
        .iter()
        .zip(dims)
        .map(|(&r, &n)| (r * n) as f64)
        .sum();
    let core: f64 = ranks.ranks().iter().map(|&r| r as f64).product();
    full / (bases + core)
}

/// Time-harmonic mean of per-interval compression ratios.
pub fn weighted_compression_ratio(intervals: &[(f64, f64, f64)]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(TdbError::Degenerate {
            context: "weighted CR of empty interval list".into(),
        });
    }
    let t0 = intervals[0].0;
    let tm = intervals[intervals.len() - 1].1;
    if tm <= t0 {
        return Err(TdbError::Degenerate {
            context: "weighted CR over a zero-length span".into(),
        });
    }
    let mut denom = 0.0;
    let mut prev_end = t0;
    for &(start, end, cr) in intervals {
        if (start - prev_end).abs() > 1e-12 * tm.abs().max(1.0) || end <= start {
            return Err(TdbError::UnorderedTime {
                prev: prev_end,
                t: start,
            });
        }
        denom += (end - start) / cr;
        prev_end = end;
    }
    Ok((tm - t0) / denom)
}

/// Write one dense tensor in the raw TDBT format.
pub fn write_raw_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    let mut buf = Vec::with_capacity(t.len() * 8 + 64);
    buf.extend_from_slice(TDBT_MAGIC);
    put_u32(&mut buf, TDBT_VERSION);
    put_u32(&mut buf, t.order() as u32);
    for &d in t.dims() {
        put_u64(&mut buf, d as u64);
    }
    for &v in t.values() {
        put_f64(&mut buf, v);
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

/// Read one dense tensor from a TDBT file.
pub fn read_raw_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path_str = path.as_ref().display().to_string();
    let mut data = Vec::new();
    BufReader::new(File::open(path.as_ref())?).read_to_end(&mut data)?;
    let mut cur = Cursor {
        data: &data,
        pos: 0,
        path: &path_str,
    };
    if cur.take(4)? != TDBT_MAGIC {
        return Err(TdbError::Format {
            path: path_str,
            context: "bad magic, not a TDBT tensor".into(),
        });
    }
    let version = cur.u32()?;
    if version != TDBT_VERSION {
        return Err(TdbError::Format {
            path: path_str,
            context: format!("unsupported version {version}"),
        });
    }
    let p = cur.u32()? as usize;
    let mut dims = Vec::with_capacity(p);
    for _ in 0..p {
        dims.push(cur.u64()? as usize);
    }
    let len: usize = dims.iter().product();
    let values = cur.f64_vec(len)?;
    DenseTensor::from_values(&dims, values)
}
