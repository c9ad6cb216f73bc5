//! 4:2:0 chroma subsampling and its decode-path inverse.

use super::{ceil_half, CodecError};

/// Halve a plane in both axes: each output sample is the mean of the
/// corresponding 2x2 input block, rounded half away from zero. Odd edges are
/// handled by replicating the last row/column before averaging.
pub fn subsample_420(plane: &[u8], dims: (usize, usize)) -> (Vec<u8>, (usize, usize)) {
    let (w, h) = dims;
    assert_eq!(plane.len(), w * h, "plane length must match dims");
    let cw = ceil_half(w);
    let ch = ceil_half(h);
    let mut out = Vec::with_capacity(cw * ch);
    for oy in 0..ch {
        for ox in 0..cw {
            let x0 = ox * 2;
            let y0 = oy * 2;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let sum = u32::from(plane[y0 * w + x0])
                + u32::from(plane[y0 * w + x1])
                + u32::from(plane[y1 * w + x0])
                + u32::from(plane[y1 * w + x1]);
            out.push((f64::from(sum) / 4.0).round() as u8);
        }
    }
    (out, (cw, ch))
}

/// Replicate each chroma sample over its 2x2 luma-resolution footprint,
/// cropped to `target_dims`. The source must be the ceil-half of the target
/// in each axis.
pub fn upsample_420(
    plane: &[u8],
    src_dims: (usize, usize),
    target_dims: (usize, usize),
) -> Result<Vec<u8>, CodecError> {
    let (sw, sh) = src_dims;
    let (tw, th) = target_dims;
    if sw != ceil_half(tw) || sh != ceil_half(th) || plane.len() != sw * sh {
        return Err(CodecError::BadUpsampleTarget {
            source: src_dims,
            target: target_dims,
        });
    }
    let mut out = Vec::with_capacity(tw * th);
    for y in 0..th {
        for x in 0..tw {
            out.push(plane[(y / 2) * sw + x / 2]);
        }
    }
    Ok(out)
}
