//! Orthonormal 8x8 type-II DCT and its inverse.
//!
//! F(u,v) = 1/4 C(u)C(v) sum f(x,y) cos((2x+1)u pi/16) cos((2y+1)v pi/16)
//! with C(0) = 1/sqrt(2), C(k>0) = 1. Computed as two passes against a
//! precomputed basis matrix in 64-bit floats; the orthonormal scaling makes
//! the inverse the exact transpose and preserves energy (Parseval).

#![allow(clippy::needless_range_loop)]

use std::sync::OnceLock;

/// 8x8 block of DCT-domain coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffBlock {
    pub coeffs: [[f64; 8]; 8],
}

/// Row u of the basis matrix holds C(u)/2 * cos((2x+1)u pi/16) over x.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0f64; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let c = if u == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5
                    * c
                    * ((2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        m
    })
}

/// Forward 2-D DCT of a level-shifted 8x8 sample block.
pub fn dct2d_8x8(block: &[[f64; 8]; 8]) -> CoeffBlock {
    let d = basis();
    // rows = D * block
    let mut rows = [[0.0f64; 8]; 8];
    for u in 0..8 {
        for y in 0..8 {
            let mut acc = 0.0;
            for x in 0..8 {
                acc += d[u][x] * block[x][y];
            }
            rows[u][y] = acc;
        }
    }
    // coeffs = rows * D^T
    let mut coeffs = [[0.0f64; 8]; 8];
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                acc += rows[u][y] * d[v][y];
            }
            coeffs[u][v] = acc;
        }
    }
    CoeffBlock { coeffs }
}

/// Inverse 2-D DCT; exact inverse of [`dct2d_8x8`] up to floating-point error.
pub fn idct2d_8x8(coeffs: &CoeffBlock) -> [[f64; 8]; 8] {
    let d = basis();
    // rows = D^T * coeffs
    let mut rows = [[0.0f64; 8]; 8];
    for x in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                acc += d[u][x] * coeffs.coeffs[u][v];
            }
            rows[x][v] = acc;
        }
    }
    // block = rows * D
    let mut block = [[0.0f64; 8]; 8];
    for x in 0..8 {
        for y in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                acc += rows[x][v] * d[v][y];
            }
            block[x][y] = acc;
        }
    }
    block
}
