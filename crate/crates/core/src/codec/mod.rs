//! In-memory JPEG lossy transform.
//!
//! [`compress`] runs the lossy half of a baseline JPEG codec — color
//! conversion, 4:2:0 chroma subsampling, blocked 8x8 DCT, quality-scaled
//! quantization — and immediately decodes again. Entropy coding is omitted:
//! it is lossless and cannot change a single pixel of the decoded image, so
//! the encode-decode round trip below produces exactly the pixels a real
//! JPEG viewer would show.
//!
//! All rounding in this module is half-away-from-zero (`f64::round`), applied
//! uniformly so round trips are reproducible.

mod color;
mod dct;
mod quant;
mod sample;

pub use color::{rgb_to_ycbcr, ycbcr_to_rgb, YCbCrFull};
pub use dct::{dct2d_8x8, idct2d_8x8, CoeffBlock};
pub use quant::{build_quant_tables, quantize_dequantize, QuantTable};
pub use sample::{subsample_420, upsample_420};

use std::fmt;

/// Errors from codec operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodecError {
    /// Quality factor outside [1, 100].
    InvalidQuality(u32),
    /// Image buffer length does not match width x height x 3.
    BadImageBuffer { width: usize, height: usize, len: usize },
    /// Zero width or height.
    EmptyImage,
    /// Plane lengths disagree with the stated dimensions.
    PlaneMismatch { expected: usize, got: usize },
    /// Upsample target dims do not satisfy the ceil-half relation.
    BadUpsampleTarget {
        source: (usize, usize),
        target: (usize, usize),
    },
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecError::InvalidQuality(q) => write!(f, "quality factor {q} outside [1, 100]"),
            CodecError::BadImageBuffer { width, height, len } => write!(
                f,
                "image buffer has {len} bytes, expected {width}x{height}x3 = {}",
                width * height * 3
            ),
            CodecError::EmptyImage => write!(f, "image dimensions must be positive"),
            CodecError::PlaneMismatch { expected, got } => {
                write!(f, "plane has {got} samples, expected {expected}")
            }
            CodecError::BadUpsampleTarget { source, target } => write!(
                f,
                "cannot upsample {}x{} plane to {}x{}: source must be the ceil-half of the target",
                source.0, source.1, target.0, target.1
            ),
        }
    }
}

impl std::error::Error for CodecError {}

/// Interleaved 8-bit RGB raster, the unit of compression and classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, CodecError> {
        if width == 0 || height == 0 {
            return Err(CodecError::EmptyImage);
        }
        if data.len() != width * height * 3 {
            return Err(CodecError::BadImageBuffer {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(ImageU8 { width, height, data })
    }

    /// Solid-color image.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, CodecError> {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        ImageU8::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Quality factor in [1, 100]; lower means more aggressive quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QualityFactor(u8);

impl QualityFactor {
    pub fn new(q: u32) -> Result<Self, CodecError> {
        if (1..=100).contains(&q) {
            Ok(QualityFactor(q as u8))
        } else {
            Err(CodecError::InvalidQuality(q))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl fmt::Display for QualityFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Y plane at full resolution plus Cb/Cr at 4:2:0 (ceil-half) resolution.
#[derive(Debug, Clone)]
pub struct YCbCrPlanes {
    pub y: Vec<u8>,
    pub cb: Vec<u8>,
    pub cr: Vec<u8>,
    pub luma_dims: (usize, usize),
    pub chroma_dims: (usize, usize),
}

impl YCbCrPlanes {
    pub fn new(
        y: Vec<u8>,
        cb: Vec<u8>,
        cr: Vec<u8>,
        luma_dims: (usize, usize),
    ) -> Result<Self, CodecError> {
        let chroma_dims = (ceil_half(luma_dims.0), ceil_half(luma_dims.1));
        if y.len() != luma_dims.0 * luma_dims.1 {
            return Err(CodecError::PlaneMismatch {
                expected: luma_dims.0 * luma_dims.1,
                got: y.len(),
            });
        }
        let chroma_len = chroma_dims.0 * chroma_dims.1;
        for plane in [&cb, &cr] {
            if plane.len() != chroma_len {
                return Err(CodecError::PlaneMismatch {
                    expected: chroma_len,
                    got: plane.len(),
                });
            }
        }
        Ok(YCbCrPlanes {
            y,
            cb,
            cr,
            luma_dims,
            chroma_dims,
        })
    }
}

pub(crate) fn ceil_half(n: usize) -> usize {
    n.div_ceil(2)
}

/// Round half away from zero and clamp to the byte range.
pub(crate) fn round_clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Color-convert and 4:2:0-subsample an image: the first two stages of the
/// encode path.
pub fn ycbcr_420(img: &ImageU8) -> YCbCrPlanes {
    let dims = (img.width(), img.height());
    let full = rgb_to_ycbcr(img);
    let (cb, _) = subsample_420(&full.cb, dims);
    let (cr, _) = subsample_420(&full.cr, dims);
    YCbCrPlanes::new(full.y, cb, cr, dims).expect("subsampled planes satisfy the 4:2:0 relation")
}

/// Encode-then-decode an RGB image at the given quality factor.
///
/// Deterministic, dimension-preserving, and pure: two calls with the same
/// arguments produce bit-identical outputs.
pub fn compress(img: &ImageU8, quality: QualityFactor) -> ImageU8 {
    let (luma_q, chroma_q) = build_quant_tables(quality);
    let planes = ycbcr_420(img);
    let (dims, chroma_dims) = (planes.luma_dims, planes.chroma_dims);

    let y_dec = transform_plane(&planes.y, dims, &luma_q);
    let cb_dec = transform_plane(&planes.cb, chroma_dims, &chroma_q);
    let cr_dec = transform_plane(&planes.cr, chroma_dims, &chroma_q);

    let cb_up = upsample_420(&cb_dec, chroma_dims, dims)
        .expect("subsampled dims satisfy the ceil-half relation");
    let cr_up = upsample_420(&cr_dec, chroma_dims, dims)
        .expect("subsampled dims satisfy the ceil-half relation");

    ycbcr_to_rgb(&y_dec, &cb_up, &cr_up, dims).expect("planes share the image dimensions")
}

/// DCT-quantize-reconstruct one plane: pad to block multiples by edge
/// replication, level-shift, transform each 8x8 block, then crop back.
fn transform_plane(plane: &[u8], dims: (usize, usize), table: &QuantTable) -> Vec<u8> {
    let (w, h) = dims;
    let wp = w.next_multiple_of(8);
    let hp = h.next_multiple_of(8);

    let mut padded = vec![0u8; wp * hp];
    for y in 0..hp {
        let sy = y.min(h - 1);
        for x in 0..wp {
            let sx = x.min(w - 1);
            padded[y * wp + x] = plane[sy * w + sx];
        }
    }

    let mut out = vec![0u8; wp * hp];
    let mut block = [[0.0f64; 8]; 8];
    for by in (0..hp).step_by(8) {
        for bx in (0..wp).step_by(8) {
            for (r, row) in block.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = f64::from(padded[(by + r) * wp + bx + c]) - 128.0;
                }
            }
            let coeffs = dct2d_8x8(&block);
            let kept = quantize_dequantize(&coeffs, table);
            let rec = idct2d_8x8(&kept);
            for (r, row) in rec.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    out[(by + r) * wp + bx + c] = round_clamp_u8(v + 128.0);
                }
            }
        }
    }

    let mut cropped = vec![0u8; w * h];
    for y in 0..h {
        cropped[y * w..(y + 1) * w].copy_from_slice(&out[y * wp..y * wp + w]);
    }
    cropped
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_image(rng: &mut Rng, w: usize, h: usize) -> ImageU8 {
        let data: Vec<u8> = (0..w * h * 3).map(|_| rng.next_below(256) as u8).collect();
        ImageU8::new(w, h, data).unwrap()
    }

    #[test]
    fn image_buffer_validation() {
        assert_eq!(
            ImageU8::new(2, 2, vec![0; 11]).unwrap_err(),
            CodecError::BadImageBuffer {
                width: 2,
                height: 2,
                len: 11
            }
        );
        assert_eq!(ImageU8::new(0, 2, vec![]).unwrap_err(), CodecError::EmptyImage);
    }

    #[test]
    fn quality_factor_range() {
        assert!(QualityFactor::new(1).is_ok());
        assert!(QualityFactor::new(100).is_ok());
        assert_eq!(QualityFactor::new(0).unwrap_err(), CodecError::InvalidQuality(0));
        assert_eq!(QualityFactor::new(101).unwrap_err(), CodecError::InvalidQuality(101));
    }

    #[test]
    fn ycbcr_planes_enforce_420_dims() {
        // (7, 5) luma means ceil-half chroma of (4, 3) = 12 samples.
        assert!(YCbCrPlanes::new(vec![0; 35], vec![0; 12], vec![0; 12], (7, 5)).is_ok());
        let err = YCbCrPlanes::new(vec![0; 35], vec![0; 8], vec![0; 12], (7, 5)).unwrap_err();
        assert_eq!(err, CodecError::PlaneMismatch { expected: 12, got: 8 });
        let err = YCbCrPlanes::new(vec![0; 30], vec![0; 12], vec![0; 12], (7, 5)).unwrap_err();
        assert_eq!(err, CodecError::PlaneMismatch { expected: 35, got: 30 });
    }

    #[test]
    fn ycbcr_420_has_ceil_half_chroma() {
        let mut rng = Rng::new(13);
        let img = random_image(&mut rng, 9, 5);
        let planes = ycbcr_420(&img);
        assert_eq!(planes.luma_dims, (9, 5));
        assert_eq!(planes.chroma_dims, (5, 3));
        assert_eq!(planes.y.len(), 45);
        assert_eq!(planes.cb.len(), 15);
        assert_eq!(planes.cr.len(), 15);
    }

    #[test]
    fn compress_is_deterministic() {
        let mut rng = Rng::new(11);
        let img = random_image(&mut rng, 37, 23);
        let q = QualityFactor::new(60).unwrap();
        assert_eq!(compress(&img, q), compress(&img, q));
    }

    #[test]
    fn compress_preserves_dimensions() {
        let mut rng = Rng::new(3);
        for (w, h) in [(8, 8), (32, 32), (17, 9), (1, 1), (33, 48)] {
            let img = random_image(&mut rng, w, h);
            let out = compress(&img, QualityFactor::new(50).unwrap());
            assert_eq!((out.width(), out.height()), (w, h));
        }
    }

    #[test]
    fn uniform_gray_is_a_fixed_point_at_every_quality() {
        let img = ImageU8::filled(20, 12, [128, 128, 128]).unwrap();
        for q in [1, 10, 20, 50, 75, 90, 100] {
            let out = compress(&img, QualityFactor::new(q).unwrap());
            assert_eq!(out, img, "quality {q} altered a uniform gray image");
        }
    }

    #[test]
    fn grayscale_at_q100_deviates_at_most_2() {
        let mut rng = Rng::new(21);
        for _ in 0..5 {
            let w = 16 + rng.next_below(20) as usize;
            let h = 16 + rng.next_below(20) as usize;
            let mut data = Vec::with_capacity(w * h * 3);
            for _ in 0..w * h {
                let v = rng.next_below(256) as u8;
                data.extend_from_slice(&[v, v, v]);
            }
            let img = ImageU8::new(w, h, data).unwrap();
            let out = compress(&img, QualityFactor::new(100).unwrap());
            let worst = img
                .data()
                .iter()
                .zip(out.data())
                .map(|(&a, &b)| (i16::from(a) - i16::from(b)).abs())
                .max()
                .unwrap();
            assert!(worst <= 2, "q=100 grayscale deviation {worst} > 2");
        }
    }

    #[test]
    fn grayscale_stays_grayscale() {
        // Chroma neutrality: R=G=B inputs keep Cb=Cr=128 through the whole
        // pipeline, so the output must again satisfy R=G=B per pixel.
        let mut rng = Rng::new(22);
        let w = 24;
        let h = 18;
        let mut data = Vec::with_capacity(w * h * 3);
        for _ in 0..w * h {
            let v = rng.next_below(256) as u8;
            data.extend_from_slice(&[v, v, v]);
        }
        let img = ImageU8::new(w, h, data).unwrap();

        let full = rgb_to_ycbcr(&img);
        assert!(full.cb.iter().all(|&v| v == 128), "Cb not neutral before pipeline");
        assert!(full.cr.iter().all(|&v| v == 128), "Cr not neutral before pipeline");

        for q in [20, 60, 100] {
            let out = compress(&img, QualityFactor::new(q).unwrap());
            let full_out = rgb_to_ycbcr(&out);
            assert!(full_out.cb.iter().all(|&v| v == 128), "Cb drifted at q={q}");
            assert!(full_out.cr.iter().all(|&v| v == 128), "Cr drifted at q={q}");
            for px in out.data().chunks_exact(3) {
                assert!(px[0] == px[1] && px[1] == px[2], "color leaked at q={q}");
            }
        }
    }

    #[test]
    fn lower_quality_does_not_sharpen() {
        // Coarse sanity: mean absolute error vs. the input grows (weakly)
        // as quality drops on a random image.
        let mut rng = Rng::new(77);
        let img = random_image(&mut rng, 32, 32);
        let mae = |q: u32| {
            let out = compress(&img, QualityFactor::new(q).unwrap());
            img.data()
                .iter()
                .zip(out.data())
                .map(|(&a, &b)| (i16::from(a) - i16::from(b)).unsigned_abs() as u64)
                .sum::<u64>() as f64
                / img.data().len() as f64
        };
        let at_90 = mae(90);
        let at_20 = mae(20);
        assert!(
            at_20 >= at_90,
            "expected more distortion at q=20 ({at_20}) than q=90 ({at_90})"
        );
    }
}
