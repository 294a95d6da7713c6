//! EMB1 embedding files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EMB1"
//! 4       2     version (1), u16 LE
//! 6       2     flags, u16 LE
//! 8       4     row count N, u32 LE
//! 12      4     dimension d, u32 LE
//! 16      4Nd   rows, f32 LE, row-major
//! ...     4N    labels, i32 LE (only with FLAG_LABELS)
//! ```
//!
//! With [`FLAG_TRIPLE`] every logical sample spans three consecutive rows
//! (original, zeros variant, rand variant) and N is a multiple of 3. With
//! [`FLAG_PROBABILITIES`] each row is a probability vector over the
//! accompanying task's classes in ascending id order. [`FLAG_SOURCE`] marks
//! data drawn from the source domain.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::klda::ClassId;
use crate::pipeline::{Domain, Samples, ScoreTable, TaskSpec};

use super::{checked_size, Reader};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

pub const FLAG_LABELS: u16 = 1 << 0;
pub const FLAG_TRIPLE: u16 = 1 << 1;
pub const FLAG_PROBABILITIES: u16 = 1 << 2;
pub const FLAG_SOURCE: u16 = 1 << 3;
const KNOWN_FLAGS: u16 = FLAG_LABELS | FLAG_TRIPLE | FLAG_PROBABILITIES | FLAG_SOURCE;

/// Decoded header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub flags: u16,
    pub count: u32,
    pub dim: u32,
}

impl Header {
    pub fn has_labels(&self) -> bool {
        self.flags & FLAG_LABELS != 0
    }

    pub fn is_triple(&self) -> bool {
        self.flags & FLAG_TRIPLE != 0
    }

    pub fn is_probabilities(&self) -> bool {
        self.flags & FLAG_PROBABILITIES != 0
    }

    pub fn is_source(&self) -> bool {
        self.flags & FLAG_SOURCE != 0
    }

    /// Exact file length implied by the header.
    pub fn file_len(&self) -> Result<u64> {
        let cells = checked_size(u64::from(self.count), u64::from(self.dim), 8)?;
        let mut len = checked_size(cells, 4, 8)?;
        if self.has_labels() {
            len += 4 * u64::from(self.count);
        }
        Ok(len + HEADER_LEN as u64)
    }

    pub fn parse(bytes: &[u8]) -> Result<Header> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}, expected \"EMB1\"", &bytes[..4])));
        }
        let mut r = Reader::new(bytes);
        r.take(4, "header")?;
        let version = r.u16("header")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let flags = r.u16("header")?;
        if flags & !KNOWN_FLAGS != 0 {
            return Err(Error::format(6, format!("unknown flag bits {:#06x}", flags & !KNOWN_FLAGS)));
        }
        if flags & FLAG_TRIPLE != 0 && flags & FLAG_PROBABILITIES != 0 {
            return Err(Error::format(6, "a probability table cannot use the triple layout"));
        }
        let count = r.u32("header")?;
        let dim = r.u32("header")?;
        if flags & FLAG_TRIPLE != 0 && count % 3 != 0 {
            return Err(Error::format(8, format!("triple layout needs a multiple of 3 rows, got {count}")));
        }
        if dim == 0 && count > 0 {
            return Err(Error::format(12, "zero dimension with a non-empty payload"));
        }
        Ok(Header {
            version,
            flags,
            count,
            dim,
        })
    }
}

/// Rows of an EMB1 file with their flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Emb1 {
    pub flags: u16,
    pub dim: usize,
    pub count: usize,
    /// `count × dim` values, row-major.
    pub data: Vec<f32>,
    pub labels: Option<Vec<ClassId>>,
}

impl Emb1 {
    pub fn new(dim: usize, data: Vec<f32>, labels: Option<Vec<ClassId>>) -> Result<Self> {
        if dim == 0 && !data.is_empty() {
            return Err(Error::invalid("zero dimension with a non-empty payload"));
        }
        let count = if dim == 0 { labels.as_ref().map_or(0, Vec::len) } else { data.len() / dim };
        if count * dim != data.len() {
            return Err(Error::shape(format!("a multiple of {dim} values"), data.len()));
        }
        if let Some(l) = &labels {
            if l.len() != count {
                return Err(Error::shape(format!("{count} labels"), l.len()));
            }
        }
        if count > u32::MAX as usize || dim > u32::MAX as usize {
            return Err(Error::invalid("too many rows or columns for EMB1"));
        }
        let flags = if labels.is_some() { FLAG_LABELS } else { 0 };
        Ok(Emb1 {
            flags,
            dim,
            count,
            data,
            labels,
        })
    }

    /// Rows of `x`, rounded to f32.
    pub fn from_array(x: &Array2<f64>, labels: Option<Vec<ClassId>>) -> Result<Self> {
        Emb1::new(x.ncols(), x.iter().map(|&v| v as f32).collect(), labels)
    }

    pub fn with_flag(mut self, flag: u16, on: bool) -> Self {
        if on {
            self.flags |= flag;
        } else {
            self.flags &= !flag;
        }
        self
    }

    pub fn header(&self) -> Header {
        Header {
            version: VERSION,
            flags: self.flags,
            count: self.count as u32,
            dim: self.dim as u32,
        }
    }

    pub fn is_source(&self) -> bool {
        self.header().is_source()
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.count, self.dim), |(i, j)| f64::from(self.data[i * self.dim + j]))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = self.header();
        Header::parse(&header_bytes(&header)).map_err(|e| Error::invalid(e.to_string()))?;
        if header.has_labels() != self.labels.is_some() {
            return Err(Error::invalid("label flag does not match the label section"));
        }
        let mut out = Vec::with_capacity(header.file_len()? as usize);
        out.extend_from_slice(&header_bytes(&header));
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for l in labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let header = Header::parse(bytes)?;
        check_len(&header, bytes.len() as u64)?;
        let count = header.count as usize;
        let dim = header.dim as usize;
        let mut r = Reader::new(bytes);
        r.take(HEADER_LEN, "header")?;
        let data = r
            .take(4 * count * dim, "payload")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        let labels = if header.has_labels() {
            Some(
                r.take(4 * count, "labels")?
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                    .collect(),
            )
        } else {
            None
        };
        r.finish()?;
        Ok(Emb1 {
            flags: header.flags,
            dim,
            count,
            data,
            labels,
        })
    }

    /// Builds a task from this file. The class set defaults to the distinct labels.
    pub fn to_task(&self, task_id: usize, domain: Domain, class_set: Option<Vec<ClassId>>) -> Result<TaskSpec> {
        if self.header().is_probabilities() {
            return Err(Error::Protocol("a probability table is not a sample file".into()));
        }
        let classes = match (class_set, &self.labels) {
            (Some(c), _) => c,
            (None, Some(l)) => {
                let mut c = l.clone();
                c.sort_unstable();
                c.dedup();
                c
            }
            (None, None) => return Err(Error::invalid(format!("task {task_id} needs an explicit class set"))),
        };
        let x = self.to_array();
        let (samples, labels) = if self.header().is_triple() {
            let labels = self.labels.as_ref().map(|l| l.iter().step_by(3).copied().collect());
            (Samples::Triples(x), labels)
        } else {
            (Samples::Embeddings(x), self.labels.clone())
        };
        TaskSpec::new(task_id, classes, domain, samples, labels)
    }

    /// Inserts this probability table into `table` for `task`.
    pub fn add_scores(&self, table: &mut ScoreTable, task_id: usize, class_set: &[ClassId]) -> Result<()> {
        if !self.header().is_probabilities() {
            return Err(Error::invalid("file is not flagged as a probability table"));
        }
        if self.dim != class_set.len() {
            return Err(Error::shape(format!("{} score columns", class_set.len()), self.dim));
        }
        let mut rows = self.to_array();
        for (i, mut row) in rows.rows_mut().into_iter().enumerate() {
            let total = row.sum();
            if (total - 1.0).abs() > 1e-5 || row.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidProbability(format!("score row {i} sums to {total}")));
            }
            row /= total;
        }
        table.insert(task_id, class_set.to_vec(), rows)
    }
}

fn header_bytes(h: &Header) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[..4].copy_from_slice(MAGIC);
    out[4..6].copy_from_slice(&h.version.to_le_bytes());
    out[6..8].copy_from_slice(&h.flags.to_le_bytes());
    out[8..12].copy_from_slice(&h.count.to_le_bytes());
    out[12..16].copy_from_slice(&h.dim.to_le_bytes());
    out
}

fn check_len(header: &Header, actual: u64) -> Result<()> {
    let expected = header.file_len()?;
    if actual < expected {
        return Err(Error::format(
            actual,
            format!("truncated payload: header declares {expected} bytes, file has {actual}"),
        ));
    }
    if actual > expected {
        return Err(Error::format(expected, format!("{} trailing bytes", actual - expected)));
    }
    Ok(())
}

/// Reads only the header, checking it against the file length.
pub fn read_header(path: &Path) -> Result<Header> {
    let mut file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut buf = Vec::with_capacity(HEADER_LEN);
    file.by_ref().take(HEADER_LEN as u64).read_to_end(&mut buf)?;
    let header = Header::parse(&buf)?;
    check_len(&header, len)?;
    Ok(header)
}

pub fn read_emb1(path: &Path) -> Result<Emb1> {
    // Sizes are validated against the header before the payload is read.
    let header = read_header(path)?;
    let mut bytes = Vec::with_capacity(header.file_len()? as usize);
    File::open(path)?.read_to_end(&mut bytes)?;
    Emb1::decode(&bytes)
}

pub fn write_emb1(batch: &Emb1, path: &Path) -> Result<()> {
    std::fs::write(path, batch.encode()?)?;
    Ok(())
}
