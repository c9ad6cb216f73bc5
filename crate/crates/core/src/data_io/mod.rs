//! Dataset ingestion, model persistence, and CSV emission.

mod files;
mod model_file;
mod suite;
mod synthetic;

pub use files::{
    load_cifar10, load_dataset, load_ppm_dir, read_ppm, resize_nearest, save_dataset, write_ppm,
};
pub use model_file::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use suite::{load_suite, save_suite};
pub use synthetic::generate_synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::codec::{CodecError, ImageU8};
use crate::defense::SweepRecord;
use crate::nn::NnError;

#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    /// File does not start with the expected magic bytes.
    BadMagic,
    /// Same container, incompatible format version.
    UnsupportedVersion(u16),
    /// Stored checksum does not match the payload.
    CrcMismatch { stored: u32, computed: u32 },
    /// File ended before the declared content.
    Truncated { context: &'static str },
    /// Byte length is not a whole number of records.
    BadRecordSize { len: u64, record: u64 },
    InvalidLabel { label: usize, classes: usize },
    MismatchedLengths { images: usize, labels: usize },
    NonUniformDims,
    Malformed(String),
    Nn(NnError),
    Codec(CodecError),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io(e) => write!(f, "i/o error: {e}"),
            DataError::BadMagic => write!(f, "bad magic bytes"),
            DataError::UnsupportedVersion(v) => write!(f, "unsupported format version {v}"),
            DataError::CrcMismatch { stored, computed } => {
                write!(f, "crc mismatch: stored {stored:#010x}, computed {computed:#010x}")
            }
            DataError::Truncated { context } => write!(f, "truncated file while reading {context}"),
            DataError::BadRecordSize { len, record } => {
                write!(f, "{len} bytes is not a multiple of the {record}-byte record size")
            }
            DataError::InvalidLabel { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            DataError::MismatchedLengths { images, labels } => {
                write!(f, "{images} images but {labels} labels")
            }
            DataError::NonUniformDims => write!(f, "dataset images must share one size"),
            DataError::Malformed(msg) => write!(f, "malformed input: {msg}"),
            DataError::Nn(e) => write!(f, "model error: {e}"),
            DataError::Codec(e) => write!(f, "image error: {e}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e)
    }
}

impl From<NnError> for DataError {
    fn from(e: NnError) -> Self {
        DataError::Nn(e)
    }
}

impl From<CodecError> for DataError {
    fn from(e: CodecError) -> Self {
        DataError::Codec(e)
    }
}

/// Labeled image collection with uniform dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<ImageU8>,
    labels: Vec<usize>,
    class_count: usize,
    name: String,
}

impl Dataset {
    pub fn new(
        images: Vec<ImageU8>,
        labels: Vec<usize>,
        class_count: usize,
        name: impl Into<String>,
    ) -> Result<Self, DataError> {
        if images.len() != labels.len() {
            return Err(DataError::MismatchedLengths {
                images: images.len(),
                labels: labels.len(),
            });
        }
        for &label in &labels {
            if label >= class_count {
                return Err(DataError::InvalidLabel { label, classes: class_count });
            }
        }
        if let Some(first) = images.first() {
            let dims = (first.width(), first.height());
            if images.iter().any(|i| (i.width(), i.height()) != dims) {
                return Err(DataError::NonUniformDims);
            }
        }
        Ok(Dataset {
            images,
            labels,
            class_count,
            name: name.into(),
        })
    }

    pub fn images(&self) -> &[ImageU8] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// (width, height) of the images; None when empty.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.images.first().map(|i| (i.width(), i.height()))
    }

    /// New dataset with every image replaced by `f(image)`; labels kept.
    pub fn map_images(&self, name: impl Into<String>, f: impl Fn(&ImageU8) -> ImageU8) -> Dataset {
        Dataset {
            images: self.images.iter().map(f).collect(),
            labels: self.labels.clone(),
            class_count: self.class_count,
            name: name.into(),
        }
    }

    /// Replace one image; panics on dimension or index misuse.
    pub(crate) fn with_image(&mut self, index: usize, image: ImageU8) {
        assert_eq!(
            (image.width(), image.height()),
            (self.images[index].width(), self.images[index].height()),
            "replacement image must keep the dataset dimensions"
        );
        self.images[index] = image;
    }
}

/// Serialize sweep records:
/// `model_id,train_quality,test_quality,attack,epsilon,accuracy,misclass_success`
/// with the no-compression sentinel written as the literal `phi`, rates to
/// six decimal places, and rows in caller order.
pub fn write_sweep_csv(records: &[SweepRecord], path: &Path) -> Result<(), DataError> {
    let mut out = Vec::new();
    render_sweep_csv(records, &mut out);
    std::fs::write(path, out)?;
    Ok(())
}

/// In-memory rendering of the sweep CSV, byte-deterministic.
pub fn render_sweep_csv(records: &[SweepRecord], out: &mut Vec<u8>) {
    out.extend_from_slice(b"model_id,train_quality,test_quality,attack,epsilon,accuracy,misclass_success\n");
    for r in records {
        let misclass = match r.misclass_success {
            Some(v) => format!("{v:.6}"),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{}",
            r.model_id,
            r.train_quality_label(),
            r.test_quality_label(),
            r.attack,
            r.epsilon,
            r.accuracy,
            misclass
        );
    }
}

/// Sidecar metadata stored next to persisted datasets.
pub type SidecarMeta = BTreeMap<String, String>;

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, v: u8) -> ImageU8 {
        ImageU8::filled(w, h, [v, v, v]).unwrap()
    }

    #[test]
    fn dataset_rejects_mismatched_lengths() {
        let err = Dataset::new(vec![img(2, 2, 0)], vec![], 2, "t").unwrap_err();
        assert!(matches!(err, DataError::MismatchedLengths { images: 1, labels: 0 }));
    }

    #[test]
    fn dataset_rejects_out_of_range_labels() {
        let err = Dataset::new(vec![img(2, 2, 0)], vec![2], 2, "t").unwrap_err();
        assert!(matches!(err, DataError::InvalidLabel { label: 2, classes: 2 }));
    }

    #[test]
    fn dataset_rejects_mixed_dims() {
        let err = Dataset::new(vec![img(2, 2, 0), img(3, 2, 0)], vec![0, 1], 2, "t").unwrap_err();
        assert!(matches!(err, DataError::NonUniformDims));
    }
}
