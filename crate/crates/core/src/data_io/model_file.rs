//! Binary model container: magic `CARM`, format version, architecture
//! descriptor, named little-endian f32 tensor blobs, trailing CRC32.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use super::DataError;
use crate::nn::{LayerSpec, Model, NetworkSpec};
use crate::tensor::Tensor;

pub const MODEL_FORMAT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"CARM";

fn crc_table() -> &'static [u32; 256] {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xedb8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *slot = c;
        }
        table
    })
}

/// CRC-32 (IEEE, reflected), as used by zip/zlib.
pub(crate) fn crc32(bytes: &[u8]) -> u32 {
    let table = crc_table();
    let mut c = 0xffff_ffffu32;
    for &b in bytes {
        c = table[((c ^ u32::from(b)) & 0xff) as usize] ^ (c >> 8);
    }
    c ^ 0xffff_ffff
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::Truncated { context });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, c: &'static str) -> Result<u8, DataError> {
        Ok(self.take(1, c)?[0])
    }
    fn u16(&mut self, c: &'static str) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.take(2, c)?.try_into().unwrap()))
    }
    fn u32(&mut self, c: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, c)?.try_into().unwrap()))
    }
    fn u64(&mut self, c: &'static str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8, c)?.try_into().unwrap()))
    }
    fn f32(&mut self, c: &'static str) -> Result<f32, DataError> {
        Ok(f32::from_le_bytes(self.take(4, c)?.try_into().unwrap()))
    }
}

fn write_spec(w: &mut Writer, spec: &NetworkSpec) {
    w.u32(spec.input.0 as u32);
    w.u32(spec.input.1 as u32);
    w.u32(spec.input.2 as u32);
    w.u32(spec.classes as u32);
    w.u32(spec.layers.len() as u32);
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv { filters } => {
                w.u8(0);
                w.u32(*filters as u32);
            }
            LayerSpec::MaxPool { size, stride } => {
                w.u8(1);
                w.u32(*size as u32);
                w.u32(*stride as u32);
            }
            LayerSpec::Relu => w.u8(2),
            LayerSpec::Dropout { rate } => {
                w.u8(3);
                w.f32(*rate);
            }
            LayerSpec::Flatten => w.u8(4),
            LayerSpec::Dense { units } => {
                w.u8(5);
                w.u32(*units as u32);
            }
            LayerSpec::Softmax => w.u8(6),
        }
    }
}

fn read_spec(r: &mut Reader) -> Result<NetworkSpec, DataError> {
    let c = r.u32("spec input")? as usize;
    let h = r.u32("spec input")? as usize;
    let w = r.u32("spec input")? as usize;
    let classes = r.u32("spec classes")? as usize;
    let layer_count = r.u32("spec layer count")? as usize;
    if layer_count > 4096 {
        return Err(DataError::Malformed(format!("implausible layer count {layer_count}")));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let layer = match r.u8("layer tag")? {
            0 => LayerSpec::Conv {
                filters: r.u32("conv filters")? as usize,
            },
            1 => LayerSpec::MaxPool {
                size: r.u32("pool size")? as usize,
                stride: r.u32("pool stride")? as usize,
            },
            2 => LayerSpec::Relu,
            3 => LayerSpec::Dropout {
                rate: r.f32("dropout rate")?,
            },
            4 => LayerSpec::Flatten,
            5 => LayerSpec::Dense {
                units: r.u32("dense units")? as usize,
            },
            6 => LayerSpec::Softmax,
            tag => return Err(DataError::Malformed(format!("unknown layer tag {tag}"))),
        };
        layers.push(layer);
    }
    Ok(NetworkSpec {
        input: (c, h, w),
        classes,
        layers,
    })
}

/// Serialize a model; `load_model(save_model(m))` is bit-exact.
pub fn save_model(model: &Model, path: &Path) -> Result<(), DataError> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(MODEL_FORMAT_VERSION);
    write_spec(&mut w, model.spec());
    w.u64(model.rng_seed());
    w.u32(model.params().len() as u32);
    for (name, tensor) in model.params() {
        w.u16(name.len() as u16);
        w.0.extend_from_slice(name.as_bytes());
        w.u8(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            w.u32(d as u32);
        }
        for &v in tensor.data() {
            w.f32(v);
        }
    }
    let crc = crc32(&w.0);
    w.u32(crc);
    std::fs::write(path, w.0)?;
    Ok(())
}

/// Load and validate a model file. Bad magic, an unsupported version, and a
/// checksum failure are reported as distinct errors; the reconstructed
/// parameters are re-validated against the architecture descriptor.
pub fn load_model(path: &Path) -> Result<Model, DataError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < MAGIC.len() {
        return Err(DataError::BadMagic);
    }
    if &bytes[..4] != MAGIC {
        return Err(DataError::BadMagic);
    }
    let mut r = Reader { bytes: &bytes, pos: 4 };
    let version = r.u16("version")?;
    if version != MODEL_FORMAT_VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    if bytes.len() < 8 {
        return Err(DataError::Truncated { context: "crc" });
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32(&bytes[..bytes.len() - 4]);
    if stored != computed {
        return Err(DataError::CrcMismatch { stored, computed });
    }

    let spec = read_spec(&mut r)?;
    let rng_seed = r.u64("rng seed")?;
    let tensor_count = r.u32("tensor count")? as usize;
    if tensor_count > 4096 {
        return Err(DataError::Malformed(format!("implausible tensor count {tensor_count}")));
    }
    let mut params = BTreeMap::new();
    for _ in 0..tensor_count {
        let name_len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| DataError::Malformed("tensor name is not utf-8".into()))?
            .to_string();
        let ndim = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("tensor dims")? as usize);
        }
        let len: usize = shape.iter().product();
        if len > (1 << 28) {
            return Err(DataError::Malformed(format!("implausible tensor length {len}")));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f32("tensor data")?);
        }
        params.insert(name, Tensor::new(shape, data));
    }
    if r.pos != bytes.len() - 4 {
        return Err(DataError::Malformed("trailing bytes before checksum".into()));
    }
    Ok(Model::from_parts(spec, params, rng_seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, ArchId};

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("carm-model-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn crc32_known_vectors() {
        assert_eq!(crc32(b""), 0);
        assert_eq!(crc32(b"123456789"), 0xcbf4_3926);
    }

    #[test]
    fn model_round_trips_bit_exactly() {
        let dir = tmpdir("roundtrip");
        let model = build_network(ArchId::Toy, (16, 16, 3), 4, 42).unwrap();
        let path = dir.join("m.carm");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.spec(), model.spec());
        assert_eq!(back.rng_seed(), model.rng_seed());
        for (name, t) in model.params() {
            let other = &back.params()[name];
            assert_eq!(t.shape(), other.shape());
            for (a, b) in t.data().iter().zip(other.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "tensor {name} drifted");
            }
        }
    }

    #[test]
    fn flipped_byte_fails_crc() {
        let dir = tmpdir("crc");
        let model = build_network(ArchId::Toy, (16, 16, 3), 4, 7).unwrap();
        let path = dir.join("m.carm");
        save_model(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_model(&path).unwrap_err(), DataError::CrcMismatch { .. }));
    }

    #[test]
    fn bad_magic_and_version_are_distinct_errors() {
        let dir = tmpdir("magic");
        let model = build_network(ArchId::Toy, (16, 16, 3), 4, 7).unwrap();
        let path = dir.join("m.carm");
        save_model(&model, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_model(&path).unwrap_err(), DataError::BadMagic));

        let mut bad_version = good.clone();
        bad_version[4] = 0xff;
        // The version field is protected by the crc too, so recompute it.
        let crc = crc32(&bad_version[..bad_version.len() - 4]);
        let n = bad_version.len();
        bad_version[n - 4..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bad_version).unwrap();
        assert!(matches!(
            load_model(&path).unwrap_err(),
            DataError::UnsupportedVersion(_)
        ));
    }

    #[test]
    fn loaded_spec_mismatch_is_caller_checkable() {
        let dir = tmpdir("speccheck");
        let toy = build_network(ArchId::Toy, (16, 16, 3), 4, 7).unwrap();
        let path = dir.join("m.carm");
        save_model(&toy, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let expected = build_network(ArchId::Cifar10, (32, 32, 3), 10, 7).unwrap();
        assert_ne!(loaded.spec(), expected.spec(), "caller can reject the wrong arch");
    }
}
