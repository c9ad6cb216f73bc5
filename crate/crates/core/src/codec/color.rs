//! BT.601 full-range (JFIF) color conversion.

use super::{round_clamp_u8, CodecError, ImageU8};

/// All three planes at full (luma) resolution.
#[derive(Debug, Clone)]
pub struct YCbCrFull {
    pub y: Vec<u8>,
    pub cb: Vec<u8>,
    pub cr: Vec<u8>,
    pub width: usize,
    pub height: usize,
}

/// RGB to YCbCr, each output rounded half away from zero and clamped.
///
/// Chroma is not yet subsampled here; `compress` pairs this with
/// [`super::subsample_420`].
pub fn rgb_to_ycbcr(img: &ImageU8) -> YCbCrFull {
    let n = img.width() * img.height();
    let mut y = Vec::with_capacity(n);
    let mut cb = Vec::with_capacity(n);
    let mut cr = Vec::with_capacity(n);
    for px in img.data().chunks_exact(3) {
        let r = f64::from(px[0]);
        let g = f64::from(px[1]);
        let b = f64::from(px[2]);
        y.push(round_clamp_u8(0.299 * r + 0.587 * g + 0.114 * b));
        cb.push(round_clamp_u8(128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b));
        cr.push(round_clamp_u8(128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b));
    }
    YCbCrFull {
        y,
        cb,
        cr,
        width: img.width(),
        height: img.height(),
    }
}

/// JFIF inverse conversion; all planes must be at full (luma) resolution.
pub fn ycbcr_to_rgb(
    y: &[u8],
    cb: &[u8],
    cr: &[u8],
    dims: (usize, usize),
) -> Result<ImageU8, CodecError> {
    let expected = dims.0 * dims.1;
    for plane in [y, cb, cr] {
        if plane.len() != expected {
            return Err(CodecError::PlaneMismatch {
                expected,
                got: plane.len(),
            });
        }
    }
    let mut data = Vec::with_capacity(expected * 3);
    for i in 0..expected {
        let yv = f64::from(y[i]);
        let cbv = f64::from(cb[i]) - 128.0;
        let crv = f64::from(cr[i]) - 128.0;
        data.push(round_clamp_u8(yv + 1.402 * crv));
        data.push(round_clamp_u8(yv - 0.344136 * cbv - 0.714136 * crv));
        data.push(round_clamp_u8(yv + 1.772 * cbv));
    }
    ImageU8::new(dims.0, dims.1, data)
}
