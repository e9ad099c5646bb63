//! Feature quantization for histogram split finding.
//!
//! Each feature gets an ascending list of cut values. A value `x` falls in
//! bin `#{cuts <= x}`, so a split after bin `b` sends `x < cuts[b]` left.
//! When a feature has no more distinct values than allowed bins, the cuts are
//! the midpoints between consecutive distinct values and binning is exact.

use rayon::prelude::*;

/// Cuts and codes for one chunk of features.
type ChunkCuts = (Vec<Vec<f32>>, Vec<Vec<u16>>);

/// Bin storage: one byte per value when at most 256 bins are used.
#[derive(Clone, Debug)]
pub(crate) enum BinCodes {
    U8(Vec<u8>),
    U16(Vec<u16>),
}

/// Feature-major quantized matrix.
#[derive(Clone, Debug)]
pub struct BinnedMatrix {
    n_rows: usize,
    cuts: Vec<Vec<f32>>,
    codes: BinCodes,
}

/// Cut point strictly above `lo` and not above `hi`.
fn midpoint(lo: f32, hi: f32) -> f32 {
    let mid = ((lo as f64 + hi as f64) * 0.5) as f32;
    if mid > lo {
        mid
    } else {
        hi
    }
}

/// Cuts for one feature column, at most `max_bins - 1` of them.
pub fn feature_cuts(column: &[f32], max_bins: usize) -> Vec<f32> {
    let mut sorted = column.to_vec();
    sorted.sort_unstable_by(|a, b| a.total_cmp(b));
    cuts_from_sorted(&sorted, max_bins)
}

fn cuts_from_sorted(sorted: &[f32], max_bins: usize) -> Vec<f32> {
    let n = sorted.len();
    let n_distinct = 1 + sorted.windows(2).filter(|w| w[0] != w[1]).count();
    if n == 0 {
        return Vec::new();
    }
    if n_distinct <= max_bins {
        return sorted
            .windows(2)
            .filter(|w| w[0] != w[1])
            .map(|w| midpoint(w[0], w[1]))
            .collect();
    }
    // Quantile cuts: boundaries at ranks q * n / max_bins, moved forward to
    // the next change of value.
    let mut cuts: Vec<f32> = Vec::with_capacity(max_bins - 1);
    for q in 1..max_bins {
        let mut i = (q * n / max_bins).max(1);
        while i < n && sorted[i - 1] == sorted[i] {
            i += 1;
        }
        if i >= n {
            break;
        }
        let c = midpoint(sorted[i - 1], sorted[i]);
        if cuts.last().is_none_or(|&last| c > last) {
            cuts.push(c);
        }
    }
    cuts
}

/// Sort key that orders like `f32::total_cmp`.
#[inline]
fn order_key(x: f32) -> u32 {
    let b = x.to_bits();
    if b >> 31 == 1 {
        !b
    } else {
        b | 0x8000_0000
    }
}

/// Cuts and bin codes of one column from a single sort.
fn quantize_column(col: &[f32], max_bins: usize, codes: &mut [u16]) -> Vec<f32> {
    let mut keys: Vec<u64> = col
        .iter()
        .enumerate()
        .map(|(i, &x)| ((order_key(x) as u64) << 32) | i as u64)
        .collect();
    keys.sort_unstable();
    let sorted: Vec<f32> = keys.iter().map(|&k| col[(k & 0xFFFF_FFFF) as usize]).collect();
    let cuts = cuts_from_sorted(&sorted, max_bins);
    let mut bin = 0;
    for (&k, &x) in keys.iter().zip(&sorted) {
        while bin < cuts.len() && cuts[bin] <= x {
            bin += 1;
        }
        codes[(k & 0xFFFF_FFFF) as usize] = bin as u16;
    }
    cuts
}

#[cfg(test)]
fn bin_of(cuts: &[f32], x: f32) -> usize {
    cuts.partition_point(|&c| c <= x)
}

impl BinnedMatrix {
    /// Quantizes row-major data. All rows must have the same length.
    pub fn from_rows(rows: &[&[f32]], max_bins: usize) -> Self {
        let n_rows = rows.len();
        let n_features = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == n_features), "ragged rows");
        assert!(max_bins >= 2, "need at least two bins");
        assert!(max_bins <= 1 << 16, "at most 65536 bins");
        assert!(n_rows < 1 << 32, "too many rows");

        const CHUNK: usize = 64;
        let per_chunk: Vec<ChunkCuts> = (0..n_features.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(n_features);
                let mut columns = vec![Vec::with_capacity(n_rows); hi - lo];
                for row in rows {
                    for (col, &x) in columns.iter_mut().zip(&row[lo..hi]) {
                        col.push(x);
                    }
                }
                let mut cuts = Vec::with_capacity(hi - lo);
                let mut codes = Vec::with_capacity(hi - lo);
                for col in &columns {
                    let mut k = vec![0u16; n_rows];
                    cuts.push(quantize_column(col, max_bins, &mut k));
                    codes.push(k);
                }
                (cuts, codes)
            })
            .collect();

        let mut cuts = Vec::with_capacity(n_features);
        let wide = max_bins > 256;
        let mut codes8 = Vec::new();
        let mut codes16 = Vec::new();
        if wide {
            codes16.reserve(n_rows * n_features);
        } else {
            codes8.reserve(n_rows * n_features);
        }
        for (c, k) in per_chunk {
            cuts.extend(c);
            for col in k {
                if wide {
                    codes16.extend_from_slice(&col);
                } else {
                    codes8.extend(col.iter().map(|&b| b as u8));
                }
            }
        }
        let codes = if wide {
            BinCodes::U16(codes16)
        } else {
            BinCodes::U8(codes8)
        };
        Self { n_rows, cuts, codes }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.cuts.len()
    }

    pub fn cuts(&self, feature: usize) -> &[f32] {
        &self.cuts[feature]
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }

    pub(crate) fn codes(&self) -> &BinCodes {
        &self.codes
    }

    pub fn bin(&self, feature: usize, row: usize) -> usize {
        let i = feature * self.n_rows + row;
        match &self.codes {
            BinCodes::U8(c) => c[i] as usize,
            BinCodes::U16(c) => c[i] as usize,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_cuts_for_few_values() {
        let cuts = feature_cuts(&[3.0, 1.0, 2.0, 1.0], 256);
        assert_eq!(cuts, vec![1.5, 2.5]);
        assert_eq!(bin_of(&cuts, 1.0), 0);
        assert_eq!(bin_of(&cuts, 1.5), 1);
        assert_eq!(bin_of(&cuts, 3.0), 2);
        assert!(feature_cuts(&[7.0; 5], 256).is_empty());
    }

    #[test]
    fn adjacent_floats_still_separate() {
        let a = 1.0f32;
        let b = f32::from_bits(a.to_bits() + 1);
        let cuts = feature_cuts(&[a, b], 4);
        assert_eq!(cuts.len(), 1);
        assert!(bin_of(&cuts, a) != bin_of(&cuts, b));
    }

    #[test]
    fn quantile_cuts_are_bounded_and_balanced() {
        let col: Vec<f32> = (0..10_000).map(|i| (i as f32 * 0.37).sin()).collect();
        let cuts = feature_cuts(&col, 16);
        assert!(cuts.len() <= 15 && cuts.len() >= 14);
        assert!(cuts.windows(2).all(|w| w[0] < w[1]));
        let mut counts = [0usize; 16];
        for &x in &col {
            counts[bin_of(&cuts, x)] += 1;
        }
        assert!(counts.iter().all(|&c| c > 400 && c < 900), "{counts:?}");
    }

    #[test]
    fn codes_agree_with_cut_search() {
        let col: Vec<f32> = (0..5000).map(|i| ((i * 7919) % 613) as f32 * 0.01 - 2.0).chain([-0.0, 0.0]).collect();
        for max_bins in [2, 16, 256, 1000] {
            let mut codes = vec![0u16; col.len()];
            let cuts = quantize_column(&col, max_bins, &mut codes);
            assert_eq!(cuts, feature_cuts(&col, max_bins));
            for (&x, &c) in col.iter().zip(&codes) {
                assert_eq!(c as usize, bin_of(&cuts, x));
            }
        }
    }

    #[test]
    fn matrix_layout() {
        let rows: Vec<Vec<f32>> = vec![vec![0.0, 5.0], vec![1.0, 5.0], vec![2.0, 6.0]];
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let m = BinnedMatrix::from_rows(&refs, 256);
        assert_eq!(m.n_features(), 2);
        assert_eq!((m.bin(0, 0), m.bin(0, 1), m.bin(0, 2)), (0, 1, 2));
        assert_eq!((m.bin(1, 0), m.bin(1, 1), m.bin(1, 2)), (0, 0, 1));
        let wide = BinnedMatrix::from_rows(&refs, 1000);
        assert!(matches!(wide.codes(), BinCodes::U16(_)));
        assert_eq!(wide.bin(0, 2), 2);
    }
}
