//! Quality-scaled quantization of DCT coefficients.
//!
//! Table scaling follows the IJG/libjpeg convention applied to the ITU-T
//! T.81 Annex K base tables: scale = 5000/q for q < 50 else 200 - 2q, and
//! each entry is clamp(floor((base * scale + 50) / 100), 1, 255).

use super::{CoeffBlock, QualityFactor};

/// Annex K luminance base table (row-major, natural order).
const BASE_LUMA: [[u16; 8]; 8] = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
];

/// Annex K chrominance base table.
const BASE_CHROMA: [[u16; 8]; 8] = [
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
];

/// 8x8 grid of quantization divisors, each in [1, 255].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTable {
    pub entries: [[u16; 8]; 8],
}

fn scale_table(base: &[[u16; 8]; 8], quality: QualityFactor) -> QuantTable {
    let q = u32::from(quality.get());
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut entries = [[0u16; 8]; 8];
    for (r, row) in base.iter().enumerate() {
        for (c, &b) in row.iter().enumerate() {
            entries[r][c] = ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16;
        }
    }
    QuantTable { entries }
}

/// Scaled (luminance, chrominance) tables for a quality factor.
pub fn build_quant_tables(quality: QualityFactor) -> (QuantTable, QuantTable) {
    (
        scale_table(&BASE_LUMA, quality),
        scale_table(&BASE_CHROMA, quality),
    )
}

/// Divide each coefficient by its table entry, round half away from zero,
/// and multiply back. This is the only lossy arithmetic in the codec.
pub fn quantize_dequantize(coeffs: &CoeffBlock, table: &QuantTable) -> CoeffBlock {
    let mut out = [[0.0f64; 8]; 8];
    for (u, row) in out.iter_mut().enumerate() {
        for (v, slot) in row.iter_mut().enumerate() {
            let step = f64::from(table.entries[u][v]);
            *slot = (coeffs.coeffs[u][v] / step).round() * step;
        }
    }
    CoeffBlock { coeffs: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn q(v: u32) -> QualityFactor {
        QualityFactor::new(v).unwrap()
    }

    #[test]
    fn quality_50_reproduces_base_tables() {
        let (luma, chroma) = build_quant_tables(q(50));
        assert_eq!(luma.entries, BASE_LUMA);
        assert_eq!(chroma.entries, BASE_CHROMA);
    }

    #[test]
    fn quality_100_is_all_ones() {
        let (luma, chroma) = build_quant_tables(q(100));
        assert!(luma.entries.iter().flatten().all(|&v| v == 1));
        assert!(chroma.entries.iter().flatten().all(|&v| v == 1));
    }

    #[test]
    fn quality_10_scales_by_500() {
        // base 16, scale 5000/10 = 500: floor((16*500 + 50)/100) = 80.
        let (luma, _) = build_quant_tables(q(10));
        assert_eq!(luma.entries[0][0], 80);
    }

    #[test]
    fn entries_stay_in_byte_range() {
        for quality in 1..=100 {
            let (luma, chroma) = build_quant_tables(q(quality));
            for &v in luma.entries.iter().flatten().chain(chroma.entries.iter().flatten()) {
                assert!((1..=255).contains(&v), "entry {v} at quality {quality}");
            }
        }
    }

    #[test]
    fn entries_non_increasing_in_quality() {
        let mut prev = build_quant_tables(q(1));
        for quality in 2..=100 {
            let cur = build_quant_tables(q(quality));
            for r in 0..8 {
                for c in 0..8 {
                    assert!(
                        cur.0.entries[r][c] <= prev.0.entries[r][c],
                        "luma ({r},{c}) grew from q{} to q{quality}",
                        quality - 1
                    );
                    assert!(
                        cur.1.entries[r][c] <= prev.1.entries[r][c],
                        "chroma ({r},{c}) grew from q{} to q{quality}",
                        quality - 1
                    );
                }
            }
            prev = cur;
        }
    }

    #[test]
    fn unit_table_rounds_to_integers() {
        let table = QuantTable { entries: [[1; 8]; 8] };
        let mut coeffs = CoeffBlock { coeffs: [[0.0; 8]; 8] };
        coeffs.coeffs[0][0] = 3.4;
        coeffs.coeffs[0][1] = -3.5;
        coeffs.coeffs[1][0] = 2.5;
        let out = quantize_dequantize(&coeffs, &table);
        assert_eq!(out.coeffs[0][0], 3.0);
        assert_eq!(out.coeffs[0][1], -4.0, "half away from zero on negatives");
        assert_eq!(out.coeffs[1][0], 3.0, "half away from zero on positives");
    }

    #[test]
    fn hand_computed_step() {
        // 100 / 40 = 2.5 -> rounds to 3 -> 120.
        let table = QuantTable { entries: [[40; 8]; 8] };
        let mut coeffs = CoeffBlock { coeffs: [[0.0; 8]; 8] };
        coeffs.coeffs[2][5] = 100.0;
        let out = quantize_dequantize(&coeffs, &table);
        assert_eq!(out.coeffs[2][5], 120.0);
    }

    #[test]
    fn reconstruction_error_bounded_by_half_step() {
        let mut rng = Rng::new(41);
        for quality in [5u32, 25, 50, 75, 95] {
            let (luma, _) = build_quant_tables(q(quality));
            let mut coeffs = [[0.0f64; 8]; 8];
            for row in &mut coeffs {
                for v in row.iter_mut() {
                    *v = rng.next_range_f64(-1024.0, 1024.0);
                }
            }
            let input = CoeffBlock { coeffs };
            let out = quantize_dequantize(&input, &luma);
            for u in 0..8 {
                for v in 0..8 {
                    let err = (out.coeffs[u][v] - input.coeffs[u][v]).abs();
                    let bound = f64::from(luma.entries[u][v]) / 2.0;
                    assert!(err <= bound + 1e-12, "error {err} exceeds step/2 {bound}");
                }
            }
        }
    }
}
