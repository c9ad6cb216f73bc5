//! Property tests for the codec and attack invariants.

#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;

use carm_core::codec::{
    build_quant_tables, compress, dct2d_8x8, idct2d_8x8, quantize_dequantize, CoeffBlock, ImageU8,
    QualityFactor,
};

fn arb_block() -> impl Strategy<Value = [[f64; 8]; 8]> {
    prop::array::uniform8(prop::array::uniform8(-256.0f64..256.0))
}

proptest! {
    #[test]
    fn dct_round_trip_and_parseval(block in arb_block()) {
        let coeffs = dct2d_8x8(&block);
        let back = idct2d_8x8(&coeffs);
        let mut worst = 0.0f64;
        let mut e_spatial = 0.0f64;
        let mut e_freq = 0.0f64;
        for x in 0..8 {
            for y in 0..8 {
                worst = worst.max((block[x][y] - back[x][y]).abs());
                e_spatial += block[x][y] * block[x][y];
                e_freq += coeffs.coeffs[x][y] * coeffs.coeffs[x][y];
            }
        }
        prop_assert!(worst < 1e-9, "round trip drift {worst}");
        prop_assert!((e_spatial - e_freq).abs() <= 1e-9 * e_spatial.max(1.0));
    }

    #[test]
    fn quantization_error_is_within_half_step(block in arb_block(), quality in 1u32..=100) {
        let (luma, _) = build_quant_tables(QualityFactor::new(quality).unwrap());
        let coeffs = CoeffBlock { coeffs: block };
        let out = quantize_dequantize(&coeffs, &luma);
        for u in 0..8 {
            for v in 0..8 {
                let err = (out.coeffs[u][v] - block[u][v]).abs();
                prop_assert!(err <= f64::from(luma.entries[u][v]) / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn compress_preserves_dims_and_byte_range(
        w in 1usize..24,
        h in 1usize..24,
        quality in 1u32..=100,
        seed in any::<u64>(),
    ) {
        let mut rng = carm_core::rng::Rng::new(seed);
        let data: Vec<u8> = (0..w * h * 3).map(|_| rng.next_below(256) as u8).collect();
        let img = ImageU8::new(w, h, data).unwrap();
        let q = QualityFactor::new(quality).unwrap();
        let out = compress(&img, q);
        prop_assert_eq!((out.width(), out.height()), (w, h));
        prop_assert_eq!(out, compress(&img, q), "must be deterministic");
    }
}
