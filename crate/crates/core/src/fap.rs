//! Frequency-aware augmentation with a one-level orthonormal Haar transform.
//!
//! A grid is split into `LL`, `LH`, `HL` and `HH` bands. Band names give the
//! filter along the width first (row pass), then along the height (column
//! pass): `LH` is low-pass across each row and high-pass down each column.
//! The augmented triple keeps `LL` and either zeroes the three high bands or
//! replaces them with seeded Gaussian noise.
//!
//! Odd sizes are padded by replicating the last row/column; the inverse crops
//! back to the original support.

use std::f64::consts::FRAC_1_SQRT_2;

use ndarray::{s, Array1, Array3, ArrayView2, ArrayViewMut2, Axis};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

/// Multi-channel grid, indexed `(channel, row, column)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub data: Array3<f64>,
}

impl Grid {
    pub fn new(data: Array3<f64>) -> Self {
        Grid { data }
    }

    pub fn from_rows(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let data = Array3::from_shape_vec((1, height, width), values)
            .map_err(|e| Error::shape(format!("{height}x{width} values"), e))?;
        Ok(Grid { data })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.data.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubBands {
    pub ll: Array3<f64>,
    pub lh: Array3<f64>,
    pub hl: Array3<f64>,
    pub hh: Array3<f64>,
    /// Height and width of the grid before padding.
    pub original: (usize, usize),
}

impl SubBands {
    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn high_bands_mut(&mut self) -> [&mut Array3<f64>; 3] {
        [&mut self.lh, &mut self.hl, &mut self.hh]
    }
}

fn analysis_pair(a: f64, b: f64) -> (f64, f64) {
    ((a + b) * FRAC_1_SQRT_2, (a - b) * FRAC_1_SQRT_2)
}

fn synthesis_pair(lo: f64, hi: f64) -> (f64, f64) {
    ((lo + hi) * FRAC_1_SQRT_2, (lo - hi) * FRAC_1_SQRT_2)
}

fn padded_channel(channel: ArrayView2<'_, f64>) -> ndarray::Array2<f64> {
    let (h, w) = channel.dim();
    let (ph, pw) = (h + h % 2, w + w % 2);
    ndarray::Array2::from_shape_fn((ph, pw), |(i, j)| channel[[i.min(h - 1), j.min(w - 1)]])
}

// The row pass then column pass of the separable transform collapse, per 2x2
// block [[a, b], [c, d]], to the four sums below; the two 1/sqrt(2) factors
// combine into an exact division by 2.

/// One-level 2D analysis, rows then columns.
pub fn dwt2(x: &Grid) -> Result<SubBands> {
    let (c, h, w) = x.data.dim();
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::invalid(format!("empty grid {c}x{h}x{w}")));
    }
    let (bh, bw) = (h.div_ceil(2), w.div_ceil(2));
    let mut bands = SubBands {
        ll: Array3::zeros((c, bh, bw)),
        lh: Array3::zeros((c, bh, bw)),
        hl: Array3::zeros((c, bh, bw)),
        hh: Array3::zeros((c, bh, bw)),
        original: (h, w),
    };
    for ch in 0..c {
        let p = padded_channel(x.data.index_axis(Axis(0), ch));
        for i in 0..bh {
            for j in 0..bw {
                let (a, b) = (p[[2 * i, 2 * j]], p[[2 * i, 2 * j + 1]]);
                let (c, d) = (p[[2 * i + 1, 2 * j]], p[[2 * i + 1, 2 * j + 1]]);
                bands.ll[[ch, i, j]] = ((a + b) + (c + d)) / 2.0;
                bands.lh[[ch, i, j]] = ((a + b) - (c + d)) / 2.0;
                bands.hl[[ch, i, j]] = ((a - b) + (c - d)) / 2.0;
                bands.hh[[ch, i, j]] = ((a - b) - (c - d)) / 2.0;
            }
        }
    }
    Ok(bands)
}

fn synthesize_channel(
    ll: ArrayView2<'_, f64>,
    lh: ArrayView2<'_, f64>,
    hl: ArrayView2<'_, f64>,
    hh: ArrayView2<'_, f64>,
    mut out: ArrayViewMut2<'_, f64>,
) {
    let (h, w) = out.dim();
    for i in 0..h {
        for j in 0..w {
            let (bi, bj) = (i / 2, j / 2);
            let (l, lh, hl, hh) = (ll[[bi, bj]], lh[[bi, bj]], hl[[bi, bj]], hh[[bi, bj]]);
            out[[i, j]] = match (i % 2, j % 2) {
                (0, 0) => ((l + lh) + (hl + hh)) / 2.0,
                (0, _) => ((l + lh) - (hl + hh)) / 2.0,
                (_, 0) => ((l - lh) + (hl - hh)) / 2.0,
                _ => ((l - lh) - (hl - hh)) / 2.0,
            };
        }
    }
}

/// Exact inverse of [`dwt2`], cropped to the original size.
pub fn idwt2(bands: &SubBands) -> Result<Grid> {
    let dim = bands.ll.dim();
    for (name, band) in [("LH", &bands.lh), ("HL", &bands.hl), ("HH", &bands.hh)] {
        if band.dim() != dim {
            return Err(Error::shape(format!("{name} band of shape {dim:?}"), format!("{:?}", band.dim())));
        }
    }
    let (c, bh, bw) = dim;
    let (h, w) = bands.original;
    if h > 2 * bh || w > 2 * bw || h + 1 < 2 * bh || w + 1 < 2 * bw {
        return Err(Error::shape(
            format!("original size within one pixel of {}x{}", 2 * bh, 2 * bw),
            format!("{h}x{w}"),
        ));
    }
    let mut out = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        synthesize_channel(
            bands.ll.index_axis(Axis(0), ch),
            bands.lh.index_axis(Axis(0), ch),
            bands.hl.index_axis(Axis(0), ch),
            bands.hh.index_axis(Axis(0), ch),
            out.slice_mut(s![ch, .., ..]),
        );
    }
    Ok(Grid { data: out })
}

/// Original sample plus its zeroed-high-band and noisy-high-band variants.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented<T> {
    pub original: T,
    pub zeros: T,
    pub rand: T,
}

impl<T> Augmented<T> {
    pub fn into_array(self) -> [T; 3] {
        [self.original, self.zeros, self.rand]
    }
}

fn noise(scale: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, scale).map_err(|e| Error::invalid(format!("noise scale {scale}: {e}")))
}

/// Builds `{x, x_zeros, x_rand}`. High-band noise is `N(0, noise_scale²)`
/// drawn from `seed`, band by band (`LH`, `HL`, `HH`) in row-major order.
pub fn augment(x: &Grid, seed: u64, noise_scale: f64) -> Result<Augmented<Grid>> {
    let dist = noise(noise_scale)?;
    let mut bands = dwt2(x)?;
    for band in bands.high_bands_mut() {
        band.fill(0.0);
    }
    let zeros = idwt2(&bands)?;
    let mut r = rng::stream(seed, 0);
    for band in bands.high_bands_mut() {
        band.mapv_inplace(|_| dist.sample(&mut r));
    }
    let rand = idwt2(&bands)?;
    Ok(Augmented {
        original: x.clone(),
        zeros,
        rand,
    })
}

/// One-level 1D Haar analysis of a vector, returning `(low, high)`.
pub fn dwt1(x: &[f64]) -> Result<(Array1<f64>, Array1<f64>)> {
    if x.is_empty() {
        return Err(Error::invalid("empty signal"));
    }
    let half = x.len().div_ceil(2);
    let at = |i: usize| x[i.min(x.len() - 1)];
    let mut low = Array1::zeros(half);
    let mut high = Array1::zeros(half);
    for k in 0..half {
        let (lo, hi) = analysis_pair(at(2 * k), at(2 * k + 1));
        low[k] = lo;
        high[k] = hi;
    }
    Ok((low, high))
}

/// Inverse of [`dwt1`], cropped to `len` samples.
pub fn idwt1(low: &Array1<f64>, high: &Array1<f64>, len: usize) -> Result<Vec<f64>> {
    if low.len() != high.len() {
        return Err(Error::shape(format!("high band of length {}", low.len()), high.len()));
    }
    if len > 2 * low.len() || len + 1 < 2 * low.len() {
        return Err(Error::shape(format!("length near {}", 2 * low.len()), len));
    }
    let mut out = Vec::with_capacity(2 * low.len());
    for (&lo, &hi) in low.iter().zip(high.iter()) {
        let (a, b) = synthesis_pair(lo, hi);
        out.push(a);
        out.push(b);
    }
    out.truncate(len);
    Ok(out)
}

/// Vector counterpart of [`augment`].
pub fn augment1(x: &[f64], seed: u64, noise_scale: f64) -> Result<Augmented<Vec<f64>>> {
    let dist = noise(noise_scale)?;
    let (low, high) = dwt1(x)?;
    let zeros = idwt1(&low, &Array1::zeros(high.len()), x.len())?;
    let mut r = rng::stream(seed, 0);
    let noisy = Array1::from_shape_simple_fn(high.len(), || dist.sample(&mut r));
    let rand = idwt1(&low, &noisy, x.len())?;
    Ok(Augmented {
        original: x.to_vec(),
        zeros,
        rand,
    })
}

/// Fixed 8×8 conformance grid: `((7i + 3j) mod 11) / 4 − 1`.
pub fn golden_grid() -> Grid {
    let values = (0..64)
        .map(|k| {
            let (i, j) = (k / 8, k % 8);
            ((7 * i + 3 * j) % 11) as f64 / 4.0 - 1.0
        })
        .collect();
    Grid::from_rows(8, 8, values).expect("8x8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    fn random_grid(c: usize, h: usize, w: usize, seed: u64) -> Grid {
        let mut r = rng::stream(seed, 5);
        Grid::new(Array3::from_shape_simple_fn((c, h, w), || StandardNormal.sample(&mut r)))
    }

    /// Separable oracle: 1D Haar across every row, then down every column of
    /// each half, independent of the block implementation.
    fn separable_oracle(x: &Grid, ch: usize) -> [ndarray::Array2<f64>; 4] {
        let (h, w) = (x.height(), x.width());
        let mut lo_rows = ndarray::Array2::<f64>::zeros((h, w / 2));
        let mut hi_rows = ndarray::Array2::<f64>::zeros((h, w / 2));
        for i in 0..h {
            let row: Vec<f64> = x.data.slice(s![ch, i, ..]).to_vec();
            let (lo, hi) = dwt1(&row).unwrap();
            lo_rows.row_mut(i).assign(&lo);
            hi_rows.row_mut(i).assign(&hi);
        }
        let column_pass = |m: &ndarray::Array2<f64>| {
            let mut lo = ndarray::Array2::<f64>::zeros((h / 2, w / 2));
            let mut hi = ndarray::Array2::<f64>::zeros((h / 2, w / 2));
            for j in 0..w / 2 {
                let col: Vec<f64> = m.column(j).to_vec();
                let (l, hh) = dwt1(&col).unwrap();
                lo.column_mut(j).assign(&l);
                hi.column_mut(j).assign(&hh);
            }
            (lo, hi)
        };
        let (ll, lh) = column_pass(&lo_rows);
        let (hl, hh) = column_pass(&hi_rows);
        [ll, lh, hl, hh]
    }

    fn max_abs(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_grid_has_only_ll() {
        let x = Grid::new(Array3::from_elem((2, 6, 4), 1.5));
        let b = dwt2(&x).unwrap();
        assert!(b.ll.iter().all(|&v| (v - 3.0).abs() < 1e-14));
        for band in [&b.lh, &b.hl, &b.hh] {
            assert!(band.iter().all(|&v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn checkerboard_lands_in_hh() {
        let x = Grid::from_rows(4, 4, (0..16).map(|k| if (k / 4 + k % 4) % 2 == 0 { 1.0 } else { -1.0 }).collect())
            .unwrap();
        let b = dwt2(&x).unwrap();
        assert!(b.ll.iter().all(|v| v.abs() < 1e-14));
        assert!(b.lh.iter().all(|v| v.abs() < 1e-14));
        assert!(b.hl.iter().all(|v| v.abs() < 1e-14));
        assert!(b.hh.iter().all(|v| (v.abs() - 2.0).abs() < 1e-14));
    }

    #[test]
    fn bands_match_separable_filtering() {
        let x = random_grid(2, 8, 6, 11);
        let b = dwt2(&x).unwrap();
        for ch in 0..2 {
            let expected = separable_oracle(&x, ch);
            for (band, e) in [&b.ll, &b.lh, &b.hl, &b.hh].iter().zip(expected.iter()) {
                let got = band.index_axis(Axis(0), ch);
                for (g, e) in got.iter().zip(e.iter()) {
                    assert!((g - e).abs() < 1e-13);
                }
            }
        }
        // 2x2 tile [[a, b], [c, d]] against the direct four-pixel sums
        let (a, bb, c, d) = (1.0, -2.0, 0.5, 4.0);
        let tile = dwt2(&Grid::from_rows(2, 2, vec![a, bb, c, d]).unwrap()).unwrap();
        assert_eq!(tile.ll[[0, 0, 0]], (a + bb + c + d) / 2.0);
        assert_eq!(tile.lh[[0, 0, 0]], (a + bb - c - d) / 2.0);
        assert_eq!(tile.hl[[0, 0, 0]], (a - bb + c - d) / 2.0);
        assert_eq!(tile.hh[[0, 0, 0]], (a - bb - c + d) / 2.0);
    }

    #[test]
    fn energy_and_reconstruction() {
        let x = random_grid(1, 32, 32, 1);
        let b = dwt2(&x).unwrap();
        assert!((b.energy() - x.energy()).abs() <= 1e-9 * x.energy());
        let x = random_grid(3, 64, 64, 2);
        let back = idwt2(&dwt2(&x).unwrap()).unwrap();
        assert!(max_abs(&back.data, &x.data) < 1e-9);
    }

    #[test]
    fn odd_sizes_reconstruct_on_original_support() {
        let x = random_grid(1, 7, 5, 3);
        let b = dwt2(&x).unwrap();
        assert_eq!(b.ll.dim(), (1, 4, 3));
        let back = idwt2(&b).unwrap();
        assert_eq!(back.data.dim(), (1, 7, 5));
        assert!(max_abs(&back.data, &x.data) < 1e-12);
    }

    #[test]
    fn zero_bands_give_zero_grid() {
        let b = SubBands {
            ll: Array3::zeros((1, 3, 3)),
            lh: Array3::zeros((1, 3, 3)),
            hl: Array3::zeros((1, 3, 3)),
            hh: Array3::zeros((1, 3, 3)),
            original: (6, 6),
        };
        assert!(idwt2(&b).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ll_only_reconstruction_is_block_upsampling() {
        let x = random_grid(1, 6, 8, 4);
        let mut b = dwt2(&x).unwrap();
        for band in b.high_bands_mut() {
            band.fill(0.0);
        }
        let y = idwt2(&b).unwrap();
        for i in 0..6 {
            for j in 0..8 {
                let expected = b.ll[[0, i / 2, j / 2]] / 2.0;
                assert!((y.data[[0, i, j]] - expected).abs() < 1e-13);
                // also equal to the mean of the original 2x2 block
                let (bi, bj) = (2 * (i / 2), 2 * (j / 2));
                let mean = (x.data[[0, bi, bj]] + x.data[[0, bi + 1, bj]] + x.data[[0, bi, bj + 1]] + x.data[[0, bi + 1, bj + 1]]) / 4.0;
                assert!((y.data[[0, i, j]] - mean).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn mismatched_bands_are_rejected() {
        let mut b = dwt2(&random_grid(1, 4, 4, 5)).unwrap();
        b.hh = Array3::zeros((1, 2, 3));
        assert!(matches!(idwt2(&b), Err(Error::Shape { .. })));
        assert!(matches!(dwt2(&Grid::new(Array3::zeros((1, 0, 4)))), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn augmentation_properties() {
        let flat = Grid::new(Array3::from_elem((1, 8, 8), -0.75));
        let aug = augment(&flat, 1, 1.0).unwrap();
        assert_eq!(aug.zeros, flat);

        let x = random_grid(2, 16, 16, 6);
        let aug = augment(&x, 9, 1.0).unwrap();
        assert!(aug.zeros.energy() <= x.energy());
        let ll = dwt2(&x).unwrap().ll;
        assert!(max_abs(&dwt2(&aug.zeros).unwrap().ll, &ll) < 1e-9);
        assert!(max_abs(&dwt2(&aug.rand).unwrap().ll, &ll) < 1e-9);
        let again = augment(&x, 9, 1.0).unwrap();
        assert!(aug.rand.data.iter().zip(again.rand.data.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let other = augment(&x, 10, 1.0).unwrap();
        assert_ne!(aug.rand, other.rand);
    }

    #[test]
    fn vector_variant() {
        let x = [1.0, 3.0, -2.0, 0.5, 4.0];
        let (lo, hi) = dwt1(&x).unwrap();
        let back = idwt1(&lo, &hi, x.len()).unwrap();
        for (a, b) in back.iter().zip(x) {
            assert!((a - b).abs() < 1e-14);
        }
        let even = [0.2, -1.0, 7.0, 3.0];
        let (lo, hi) = dwt1(&even).unwrap();
        let energy: f64 = lo.iter().chain(hi.iter()).map(|v| v * v).sum();
        assert!((energy - even.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12);
        let aug = augment1(&even, 3, 1.0).unwrap();
        assert!((aug.zeros[0] - (0.2 - 1.0) / 2.0).abs() < 1e-14);
        let aug2 = augment1(&even, 3, 1.0).unwrap();
        assert_eq!(aug.rand, aug2.rand);
        for v in augment1(&[2.0; 6], 0, 1.0).unwrap().zeros {
            assert!((v - 2.0).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn transform_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let x = random_grid(1, 6, 10, seed);
            let y = random_grid(1, 6, 10, seed.wrapping_add(1));
            let combo = Grid::new(&x.data * a + &y.data * b);
            let (bx, by, bc) = (dwt2(&x).unwrap(), dwt2(&y).unwrap(), dwt2(&combo).unwrap());
            for (band_c, band_x, band_y) in [(&bc.ll, &bx.ll, &by.ll), (&bc.lh, &bx.lh, &by.lh), (&bc.hl, &bx.hl, &by.hl), (&bc.hh, &bx.hh, &by.hh)] {
                let expected = band_x * a + band_y * b;
                prop_assert!(max_abs(band_c, &expected) < 1e-9);
            }
        }

        #[test]
        fn vector_round_trip(x in prop::collection::vec(-100.0f64..100.0, 1..40)) {
            let (lo, hi) = dwt1(&x).unwrap();
            let back = idwt1(&lo, &hi, x.len()).unwrap();
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let aug = augment1(&x, 1, 1.0).unwrap();
            if x.len() % 2 == 0 {
                let e = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>();
                prop_assert!(e(&aug.zeros) <= e(&x) * (1.0 + 1e-12) + 1e-12);
            }
        }
    }
}
