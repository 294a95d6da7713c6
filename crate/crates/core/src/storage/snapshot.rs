//! KLDA model snapshots.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "KLDA"
//! 4       2     version (1)
//! 6       2     flags: bit0 weighted, bit1 normalized mean, bit2 recursive
//!               covariance, bit3 frequency-scale convention, bit4 absolute
//!               ridge, bit5 finalized
//! 8       8     feature dimension D
//! 16      8     class count M
//! 24      8     input dimension d
//! 32      8     feature-map seed
//! 40      8     sigma, f64
//! 48      8     ridge value, f64
//! 56      8     N_total
//! 64      8     N_prev
//! 72      8     total weight, f64
//! 80      24·M  class table: id i64, count u64, weight sum f64
//! ...     8·M·D class means, f64
//! ...     8·M·D class centroids, f64
//! ...     8·D·D second-moment matrix, f64 (pooled scatter or covariance)
//! ```
//!
//! All integers are little-endian u64 unless noted. The frequency matrix is
//! not stored; it is regenerated from the seed.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::klda::{ClassStats, CovarianceRule, KldaConfig, KldaModel, MeanMode, Ridge, Weighting};
use crate::rff::{FrequencyConvention, RffMap, RffParams};

use super::{checked_size, put_f64s, Reader};

pub const MAGIC: &[u8; 4] = b"KLDA";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 80;

const WEIGHTED: u16 = 1 << 0;
const NORMALIZED: u16 = 1 << 1;
const RECURSIVE: u16 = 1 << 2;
const FREQUENCY_SCALE: u16 = 1 << 3;
const ABSOLUTE_RIDGE: u16 = 1 << 4;
const FINALIZED: u16 = 1 << 5;
const KNOWN: u16 = (1 << 6) - 1;

/// A model with the feature map it was trained against.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub model: KldaModel,
    pub rff: RffParams,
    pub input_dim: usize,
}

impl Snapshot {
    pub fn new(model: KldaModel, rff: &RffMap) -> Self {
        Snapshot {
            model,
            rff: *rff.params(),
            input_dim: rff.input_dim(),
        }
    }

    pub fn feature_map(&self) -> Result<RffMap> {
        RffMap::sample(self.rff, self.input_dim)
    }

    pub fn encode(&self) -> Vec<u8> {
        let m = &self.model;
        let config = m.config();
        let mut flags = 0u16;
        if config.weighting == Weighting::Weighted {
            flags |= WEIGHTED;
        }
        if config.mean_mode == MeanMode::Normalized {
            flags |= NORMALIZED;
        }
        if config.covariance_rule == CovarianceRule::Recursive {
            flags |= RECURSIVE;
        }
        if self.rff.convention == FrequencyConvention::FrequencyScale {
            flags |= FREQUENCY_SCALE;
        }
        let ridge = match config.ridge {
            Ridge::Relative(v) => v,
            Ridge::Absolute(v) => {
                flags |= ABSOLUTE_RIDGE;
                v
            }
        };
        if m.is_finalized() {
            flags |= FINALIZED;
        }
        let dim = m.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + 24 * m.num_classes() + 8 * dim * (2 * m.num_classes() + dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&flags.to_le_bytes());
        for v in [
            dim as u64,
            m.num_classes() as u64,
            self.input_dim as u64,
            self.rff.seed,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_f64s(&mut out, [self.rff.sigma, ridge]);
        out.extend_from_slice(&m.total_count().to_le_bytes());
        out.extend_from_slice(&m.prev_count().to_le_bytes());
        put_f64s(&mut out, [m.total_weight()]);
        for c in m.classes() {
            out.extend_from_slice(&i64::from(c.class_id).to_le_bytes());
            out.extend_from_slice(&c.count.to_le_bytes());
            put_f64s(&mut out, [c.weight_sum]);
        }
        for c in m.classes() {
            put_f64s(&mut out, c.mean.iter().copied());
        }
        for c in m.classes() {
            put_f64s(&mut out, c.centroid().iter().copied());
        }
        put_f64s(&mut out, m.second_moment().iter().copied());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::format(0, "bad magic, expected \"KLDA\""));
        }
        let mut r = Reader::new(bytes);
        r.take(4, "header")?;
        let version = r.u16("header")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let flags = r.u16("header")?;
        if flags & !KNOWN != 0 {
            return Err(Error::format(6, format!("unknown flag bits {:#06x}", flags & !KNOWN)));
        }
        if flags & WEIGHTED == 0 && flags & NORMALIZED != 0 {
            return Err(Error::format(6, "normalized mean mode on an unweighted model"));
        }
        let dim = r.u64("header")?;
        let classes = r.u64("header")?;
        let input_dim = r.u64("header")?;
        let seed = r.u64("header")?;
        let sigma = r.f64("header")?;
        let ridge_value = r.f64("header")?;
        let total_count = r.u64("header")?;
        let prev_count = r.u64("header")?;
        let total_weight = r.f64("header")?;

        if dim == 0 || input_dim == 0 {
            return Err(Error::format(8, "zero feature or input dimension"));
        }
        // Validate the declared size against the buffer before allocating.
        let table = checked_size(classes, 24, 16)?;
        let vectors = checked_size(checked_size(classes, dim, 16)?, 16, 16)?;
        let matrix = checked_size(checked_size(dim, dim, 8)?, 8, 8)?;
        let expected = (HEADER_LEN as u64)
            .checked_add(table)
            .and_then(|v| v.checked_add(vectors))
            .and_then(|v| v.checked_add(matrix))
            .ok_or_else(|| Error::format(8, "declared size overflows"))?;
        if (bytes.len() as u64) < expected {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated snapshot: header declares {expected} bytes"),
            ));
        }
        let (dim, classes) = (dim as usize, classes as usize);

        let mut ids = Vec::with_capacity(classes);
        for _ in 0..classes {
            let at = r.offset();
            let id = r.i64("class table")?;
            let id = i32::try_from(id).map_err(|_| Error::format(at, format!("class id {id} out of range")))?;
            if ids.last().is_some_and(|&(prev, _, _)| prev >= id) {
                return Err(Error::format(at, "class ids must be strictly increasing"));
            }
            ids.push((id, r.u64("class table")?, r.f64("class table")?));
        }
        let mut means = Vec::with_capacity(classes);
        for _ in 0..classes {
            means.push(Array1::from(r.f64s(dim, "class means")?));
        }
        let mut stats = BTreeMap::new();
        for ((id, count, weight_sum), mean) in ids.into_iter().zip(means) {
            let centroid = Array1::from(r.f64s(dim, "class centroids")?);
            stats.insert(
                id,
                ClassStats {
                    class_id: id,
                    mean,
                    count,
                    weight_sum,
                    centroid,
                },
            );
        }
        let second = Array2::from_shape_vec((dim, dim), r.f64s(dim * dim, "matrix")?)
            .expect("exact element count");
        r.finish()?;

        let config = KldaConfig {
            weighting: if flags & WEIGHTED != 0 { Weighting::Weighted } else { Weighting::Unweighted },
            mean_mode: if flags & NORMALIZED != 0 { MeanMode::Normalized } else { MeanMode::Literal },
            covariance_rule: if flags & RECURSIVE != 0 { CovarianceRule::Recursive } else { CovarianceRule::Pooled },
            ridge: if flags & ABSOLUTE_RIDGE != 0 {
                Ridge::Absolute(ridge_value)
            } else {
                Ridge::Relative(ridge_value)
            },
        };
        let rff = RffParams {
            feature_dim: dim,
            sigma,
            convention: if flags & FREQUENCY_SCALE != 0 {
                FrequencyConvention::FrequencyScale
            } else {
                FrequencyConvention::Bandwidth
            },
            seed,
        };
        rff.validate().map_err(|e| Error::format(40, e.to_string()))?;
        let mut model = KldaModel::from_parts(config, dim, stats, second, (total_count, prev_count), total_weight)
            .map_err(|e| Error::format(6, e.to_string()))?;
        if flags & FINALIZED != 0 {
            model.finalize()?;
        }
        Ok(Snapshot {
            model,
            rff,
            input_dim: input_dim as usize,
        })
    }
}

pub fn save(snapshot: &Snapshot, path: &Path) -> Result<()> {
    std::fs::write(path, snapshot.encode())?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Snapshot> {
    Snapshot::decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::klda::WeightedBatch;
    use ndarray::Array2;
    use rand::Rng;

    fn trained(config: KldaConfig, weighted: bool) -> Snapshot {
        let rff = RffMap::sample(RffParams::new(16, 1.5).with_seed(4), 3).unwrap();
        let mut r = crate::rng::stream(8, 0);
        let x = Array2::from_shape_simple_fn((30, 3), || r.gen::<f64>());
        let z = rff.map_batch(x.view()).unwrap();
        let labels = (0..30).map(|i| (i % 3) * 7 - 2).collect();
        let weights = (0..30).map(|_| if weighted { r.gen::<f64>() } else { 1.0 }).collect();
        let mut model = KldaModel::new(16, config).unwrap();
        model.update(&WeightedBatch::new(z, labels, weights).unwrap()).unwrap();
        model.finalize().unwrap();
        Snapshot::new(model, &rff)
    }

    #[test]
    fn round_trip_preserves_model() {
        for (config, weighted) in [
            (KldaConfig::unweighted(), false),
            (KldaConfig::weighted(MeanMode::Normalized).with_ridge(Ridge::Absolute(0.01)), true),
            (KldaConfig::weighted(MeanMode::Literal).with_rule(CovarianceRule::Recursive), true),
        ] {
            let snap = trained(config, weighted);
            let bytes = snap.encode();
            let back = Snapshot::decode(&bytes).unwrap();
            assert_eq!(back.model, snap.model);
            assert_eq!(back.rff, snap.rff);
            assert_eq!(back.encode(), bytes);
            let a = snap.feature_map().unwrap();
            let b = back.feature_map().unwrap();
            assert_eq!(a.omega(), b.omega());
        }
    }

    #[test]
    fn damaged_snapshots_fail_with_offsets() {
        let bytes = trained(KldaConfig::unweighted(), false).encode();
        let mut bad = bytes.clone();
        bad[1] = 0;
        assert!(matches!(Snapshot::decode(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(
            Snapshot::decode(&bytes[..bytes.len() - 3]),
            Err(Error::Format { .. })
        ));
        let mut huge = bytes.clone();
        huge[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(Snapshot::decode(&huge), Err(Error::Format { .. })));
        for cut in 0..HEADER_LEN {
            assert!(Snapshot::decode(&bytes[..cut]).is_err());
        }
    }
}
