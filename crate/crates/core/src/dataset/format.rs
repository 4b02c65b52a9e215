//! The BHG1 binary layout. Everything is little-endian.
//!
//! ```text
//! header   magic "BHG1" | version u16 | n u32 | probe_count u32
//!          | record_count u32 | flags u32 | vocab_size u32
//! probes   probe_count × { label_len u16, label utf-8, w n×f32, b f32,
//!                          accuracy f32, f1 f32 }
//! unembed  vocab_size × n f32, row-major          (flag bit 0)
//! records  record_count × { record_id u64, token1 u32, token2 u32,
//!          p1 f32, p2 f32, z, v1, v2, y_greedy, y_branch (n×f32 each),
//!          active_count u32, active ids u32[],
//!          cp_greedy f32, cp_branch f32            (flag bit 1) }
//! ```
//!
//! Flag bit 2 records that `z` was taken after the final normalization. Other
//! flag bits must be zero, and the file must end after the last record.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BHG1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 26;

pub const FLAG_UNEMBED: u32 = 1;
pub const FLAG_EVAL: u32 = 1 << 1;
pub const FLAG_Z_POST_NORM: u32 = 1 << 2;
const KNOWN_FLAGS: u32 = FLAG_UNEMBED | FLAG_EVAL | FLAG_Z_POST_NORM;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u16,
    pub n: u32,
    pub probe_count: u32,
    pub record_count: u32,
    pub flags: u32,
    pub vocab_size: u32,
}

impl DatasetHeader {
    pub fn has_unembed(&self) -> bool {
        self.flags & FLAG_UNEMBED != 0
    }
    pub fn has_eval(&self) -> bool {
        self.flags & FLAG_EVAL != 0
    }
    pub fn z_post_norm(&self) -> bool {
        self.flags & FLAG_Z_POST_NORM != 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOnDisk {
    pub label: String,
    pub w: Vec<f32>,
    pub b: f32,
    pub accuracy: f32,
    pub f1: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOnDisk {
    pub cp_greedy: f32,
    pub cp_branch: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordOnDisk {
    pub record_id: u64,
    pub token1: u32,
    pub token2: u32,
    pub p1: f32,
    pub p2: f32,
    pub z: Vec<f32>,
    pub v1: Vec<f32>,
    pub v2: Vec<f32>,
    pub y_greedy: Vec<f32>,
    pub y_branch: Vec<f32>,
    pub active: Vec<u32>,
    pub eval: Option<EvalOnDisk>,
}

/// A whole file held in its on-disk precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub probes: Vec<ProbeOnDisk>,
    /// `vocab_size × n`, row-major.
    pub unembed: Option<Vec<f32>>,
    pub records: Vec<RecordOnDisk>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Truncated(format!("{what} needs {len} bytes at offset {}, {} remain", self.pos, self.buf.len() - self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| Error::Truncated(what.to_string()))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

fn decode_header(c: &mut Cursor) -> Result<DatasetHeader> {
    if c.buf.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!("file has {} bytes, header needs {HEADER_LEN}", c.buf.len())));
    }
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::MalformedHeader(format!("bad magic {magic:02x?}")));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {version}")));
    }
    let h = DatasetHeader {
        version,
        n: c.u32("n")?,
        probe_count: c.u32("probe_count")?,
        record_count: c.u32("record_count")?,
        flags: c.u32("flags")?,
        vocab_size: c.u32("vocab_size")?,
    };
    if h.n < 4 {
        return Err(Error::MalformedHeader(format!("dimension n = {} is below 4", h.n)));
    }
    if h.flags & !KNOWN_FLAGS != 0 {
        return Err(Error::MalformedHeader(format!("unknown flag bits {:#x}", h.flags & !KNOWN_FLAGS)));
    }
    if h.has_unembed() == (h.vocab_size == 0) {
        return Err(Error::MalformedHeader(format!(
            "vocab_size {} inconsistent with unembed flag {}",
            h.vocab_size,
            h.has_unembed()
        )));
    }
    Ok(h)
}

impl Dataset {
    /// Structural decode only: layout, lengths, and header fields. Value
    /// checks are the job of [`crate::dataset::validate_dataset`].
    pub fn decode_unchecked(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf, pos: 0 };
        let header = decode_header(&mut c)?;
        let n = header.n as usize;

        let mut probes = Vec::with_capacity((header.probe_count as usize).min(1 << 16));
        for i in 0..header.probe_count {
            let what = format!("probe {i}");
            let len = c.u16(&what)? as usize;
            let label = std::str::from_utf8(c.take(len, &what)?)
                .map_err(|_| Error::InvalidProbeLabel(format!("probe {i}: label is not UTF-8")))?
                .to_string();
            probes.push(ProbeOnDisk {
                label,
                w: c.f32s(n, &what)?,
                b: c.f32(&what)?,
                accuracy: c.f32(&what)?,
                f1: c.f32(&what)?,
            });
        }

        let unembed = if header.has_unembed() {
            Some(c.f32s(header.vocab_size as usize * n, "unembedding matrix")?)
        } else {
            None
        };

        let mut records = Vec::with_capacity((header.record_count as usize).min(1 << 16));
        for i in 0..header.record_count {
            let what = format!("record {i}");
            let record_id = c.u64(&what)?;
            let token1 = c.u32(&what)?;
            let token2 = c.u32(&what)?;
            let p1 = c.f32(&what)?;
            let p2 = c.f32(&what)?;
            let z = c.f32s(n, &what)?;
            let v1 = c.f32s(n, &what)?;
            let v2 = c.f32s(n, &what)?;
            let y_greedy = c.f32s(n, &what)?;
            let y_branch = c.f32s(n, &what)?;
            let count = c.u32(&what)? as usize;
            let active = c
                .take(count.checked_mul(4).ok_or_else(|| Error::Truncated(what.clone()))?, &what)?
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let eval = if header.has_eval() {
                Some(EvalOnDisk { cp_greedy: c.f32(&what)?, cp_branch: c.f32(&what)? })
            } else {
                None
            };
            records.push(RecordOnDisk { record_id, token1, token2, p1, p2, z, v1, v2, y_greedy, y_branch, active, eval });
        }
        let rest = buf.len() - c.pos;
        if rest != 0 {
            return Err(Error::TrailingBytes(rest as u64));
        }
        Ok(Self { header, probes, unembed, records })
    }

    pub fn read_unchecked(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
        Self::decode_unchecked(&buf)
    }

    /// Decodes and then rejects the first value-level fault.
    pub fn decode(buf: &[u8]) -> Result<Self> {
        let ds = Self::decode_unchecked(buf)?;
        super::validate_dataset(&ds).into_result()?;
        Ok(ds)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let ds = Self::read_unchecked(path)?;
        super::validate_dataset(&ds).into_result()?;
        Ok(ds)
    }

    /// Checks that every vector has the header's lengths and that the
    /// optional blocks agree with the flags.
    pub fn check_shape(&self) -> Result<()> {
        let h = &self.header;
        let n = h.n as usize;
        let bad = |what: String| Err(Error::MalformedHeader(what));
        if self.probes.len() != h.probe_count as usize || self.records.len() != h.record_count as usize {
            return bad("counts do not match contents".into());
        }
        if self.unembed.as_ref().map(|u| u.len()) != h.has_unembed().then_some(h.vocab_size as usize * n) {
            return bad("unembedding block does not match header".into());
        }
        for p in &self.probes {
            if p.w.len() != n || p.label.len() > u16::MAX as usize {
                return bad(format!("probe {} has wrong shape", p.label));
            }
        }
        for r in &self.records {
            let lens = [r.z.len(), r.v1.len(), r.v2.len(), r.y_greedy.len(), r.y_branch.len()];
            if lens.iter().any(|&l| l != n) || r.eval.is_some() != h.has_eval() {
                return bad(format!("record {} has wrong shape", r.record_id));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.check_shape()?;
        let mut out = Vec::new();
        let h = &self.header;
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&h.version.to_le_bytes());
        for x in [h.n, h.probe_count, h.record_count, h.flags, h.vocab_size] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let put = |out: &mut Vec<u8>, xs: &[f32]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for p in &self.probes {
            out.extend_from_slice(&(p.label.len() as u16).to_le_bytes());
            out.extend_from_slice(p.label.as_bytes());
            put(&mut out, &p.w);
            put(&mut out, &[p.b, p.accuracy, p.f1]);
        }
        if let Some(u) = &self.unembed {
            put(&mut out, u);
        }
        for r in &self.records {
            out.extend_from_slice(&r.record_id.to_le_bytes());
            out.extend_from_slice(&r.token1.to_le_bytes());
            out.extend_from_slice(&r.token2.to_le_bytes());
            put(&mut out, &[r.p1, r.p2]);
            for v in [&r.z, &r.v1, &r.v2, &r.y_greedy, &r.y_branch] {
                put(&mut out, v);
            }
            out.extend_from_slice(&(r.active.len() as u32).to_le_bytes());
            for id in &r.active {
                out.extend_from_slice(&id.to_le_bytes());
            }
            if let Some(e) = r.eval {
                put(&mut out, &[e.cp_greedy, e.cp_branch]);
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.encode()?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }
}
