//! Seeded synthetic image classes for desk-scale experiments.
//!
//! Classes differ by shape (filled square, circle, cross, horizontal
//! stripes), drawn bright on a dark noisy background with seeded jitter in
//! position, size, and color. The shapes are large and low-frequency, so a
//! small convolutional network learns them quickly and they survive heavy
//! JPEG compression.

use super::{DataError, Dataset};
use crate::codec::ImageU8;
use crate::rng::Rng;

/// Deterministically generate `classes * per_class` labeled images.
pub fn generate_synthetic(
    classes: usize,
    per_class: usize,
    dims: (usize, usize),
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes < 2 {
        return Err(DataError::Malformed(format!(
            "synthetic dataset needs at least 2 classes, got {classes}"
        )));
    }
    let (w, h) = dims;
    if w < 8 || h < 8 {
        return Err(DataError::Malformed(format!(
            "synthetic images must be at least 8x8, got {w}x{h}"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut images = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        for _ in 0..per_class {
            images.push(render(class, dims, &mut rng));
            labels.push(class);
        }
    }
    Dataset::new(images, labels, classes, "synthetic")
}

fn render(class: usize, (w, h): (usize, usize), rng: &mut Rng) -> ImageU8 {
    let bg = 20 + rng.next_below(40) as i32;
    // Every class shares the same bright foreground distribution; beyond the
    // four base shapes, classes are separated by a deterministic tint.
    let tint = (class / 4) as i32 * 35;
    let fg = [
        (175 + rng.next_below(70) as i32 + tint).min(255),
        (175 + rng.next_below(70) as i32).max(tint).min(255),
        (175 + rng.next_below(70) as i32 - tint).max(90),
    ];

    let cx = w as i32 / 2 + rng.next_below(5) as i32 - 2;
    let cy = h as i32 / 2 + rng.next_below(5) as i32 - 2;
    let reach = (w.min(h) as i32) * 3 / 10 + rng.next_below(3) as i32;

    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h as i32 {
        for x in 0..w as i32 {
            let dx = x - cx;
            let dy = y - cy;
            let inside = match class % 4 {
                0 => dx.abs() <= reach && dy.abs() <= reach,
                1 => dx * dx + dy * dy <= reach * reach,
                2 => {
                    (dx.abs() <= reach / 3 && dy.abs() <= reach)
                        || (dy.abs() <= reach / 3 && dx.abs() <= reach)
                }
                _ => dx.abs() <= reach && dy.abs() <= reach && dy.rem_euclid(6) < 3,
            };
            for &channel in &fg {
                let base = if inside { channel } else { bg };
                let noise = rng.next_below(21) as i32 - 10;
                data.push((base + noise).clamp(0, 255) as u8);
            }
        }
    }
    ImageU8::new(w, h, data).expect("rendered buffer matches dims")
}
