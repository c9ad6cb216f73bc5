//! File formats: CIFAR-10 binary batches, the generic dataset container,
//! and binary PPM (P6).

use std::collections::BTreeMap;
use std::path::Path;

use super::{DataError, Dataset, SidecarMeta};
use crate::codec::ImageU8;

const CIFAR_DIM: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_DIM * CIFAR_DIM;
const CIFAR_CLASSES: usize = 10;

/// Load CIFAR-10 binary batches: each 3073-byte record is one label byte
/// followed by 3072 channel-planar pixel bytes. `path` may be a single
/// batch file or a directory, in which case every `*.bin` inside is loaded
/// in filename order.
pub fn load_cifar10(path: &Path) -> Result<Dataset, DataError> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "bin") {
                files.push(p);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(DataError::Malformed(format!(
                "no .bin batch files in {}",
                path.display()
            )));
        }
    } else {
        files.push(path.to_path_buf());
    }

    let mut images = Vec::new();
    let mut labels = Vec::new();
    for file in files {
        let bytes = std::fs::read(&file)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(DataError::BadRecordSize {
                len: bytes.len() as u64,
                record: CIFAR_RECORD as u64,
            });
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            let label = record[0] as usize;
            if label >= CIFAR_CLASSES {
                return Err(DataError::InvalidLabel {
                    label,
                    classes: CIFAR_CLASSES,
                });
            }
            labels.push(label);
            images.push(planar_to_image(&record[1..], CIFAR_DIM, CIFAR_DIM));
        }
    }
    Dataset::new(images, labels, CIFAR_CLASSES, "cifar10")
}

fn planar_to_image(planar: &[u8], w: usize, h: usize) -> ImageU8 {
    let plane = w * h;
    let mut data = vec![0u8; plane * 3];
    for i in 0..plane {
        data[i * 3] = planar[i];
        data[i * 3 + 1] = planar[plane + i];
        data[i * 3 + 2] = planar[2 * plane + i];
    }
    ImageU8::new(w, h, data).expect("buffer sized for dims")
}

fn image_to_planar(img: &ImageU8) -> Vec<u8> {
    let plane = img.width() * img.height();
    let mut out = vec![0u8; plane * 3];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        out[i] = px[0];
        out[plane + i] = px[1];
        out[2 * plane + i] = px[2];
    }
    out
}

/// Persist a dataset in the CIFAR-style record layout (label byte + planar
/// RGB) plus a `<path>.meta` text sidecar carrying dimensions, class count,
/// and any extra provenance entries (attack tag, epsilon, seed).
pub fn save_dataset(ds: &Dataset, path: &Path, extra: &SidecarMeta) -> Result<(), DataError> {
    let (w, h) = ds.dims().unwrap_or((0, 0));
    let mut bytes = Vec::with_capacity(ds.len() * (1 + 3 * w * h));
    for (img, &label) in ds.images().iter().zip(ds.labels()) {
        bytes.push(label as u8);
        bytes.extend_from_slice(&image_to_planar(img));
    }
    std::fs::write(path, bytes)?;

    let mut meta = String::new();
    meta.push_str("format=carm-dataset\nversion=1\n");
    meta.push_str(&format!("width={w}\nheight={h}\n"));
    meta.push_str(&format!("classes={}\n", ds.class_count()));
    meta.push_str(&format!("count={}\n", ds.len()));
    meta.push_str(&format!("name={}\n", ds.name()));
    for (k, v) in extra {
        meta.push_str(&format!("{k}={v}\n"));
    }
    std::fs::write(sidecar_path(path), meta)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta");
    std::path::PathBuf::from(s)
}

/// Load a dataset written by [`save_dataset`], returning the sidecar's
/// extra entries alongside it.
pub fn load_dataset(path: &Path) -> Result<(Dataset, SidecarMeta), DataError> {
    let meta_text = std::fs::read_to_string(sidecar_path(path))?;
    let mut fields = BTreeMap::new();
    for line in meta_text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DataError::Malformed(format!("sidecar line '{line}' is not key=value")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get_usize = |key: &str| -> Result<usize, DataError> {
        fields
            .get(key)
            .ok_or_else(|| DataError::Malformed(format!("sidecar missing '{key}'")))?
            .parse()
            .map_err(|_| DataError::Malformed(format!("sidecar '{key}' is not a number")))
    };
    let w = get_usize("width")?;
    let h = get_usize("height")?;
    let classes = get_usize("classes")?;
    let name = fields.get("name").cloned().unwrap_or_else(|| "dataset".into());

    let bytes = std::fs::read(path)?;
    let record = 1 + 3 * w * h;
    if record == 1 || bytes.len() % record != 0 {
        return Err(DataError::BadRecordSize {
            len: bytes.len() as u64,
            record: record as u64,
        });
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for rec in bytes.chunks_exact(record) {
        let label = rec[0] as usize;
        if label >= classes {
            return Err(DataError::InvalidLabel { label, classes });
        }
        labels.push(label);
        images.push(planar_to_image(&rec[1..], w, h));
    }
    let ds = Dataset::new(images, labels, classes, name)?;

    let known = ["format", "version", "width", "height", "classes", "count", "name"];
    let extra: SidecarMeta = fields
        .into_iter()
        .filter(|(k, _)| !known.contains(&k.as_str()))
        .collect();
    Ok((ds, extra))
}

/// Write binary PPM (P6, maxval 255).
pub fn write_ppm(img: &ImageU8, path: &Path) -> Result<(), DataError> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    std::fs::write(path, out)?;
    Ok(())
}

/// Read binary PPM (P6, maxval 255). Header comments (`#`) are skipped.
pub fn read_ppm(path: &Path) -> Result<ImageU8, DataError> {
    let bytes = std::fs::read(path)?;
    if !bytes.starts_with(b"P6") {
        return Err(DataError::BadMagic);
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comment lines.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(DataError::Truncated { context: "ppm header" }),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::Malformed("ppm header field is not a number".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| DataError::Malformed("ppm header field overflow".into()))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(DataError::Malformed(format!("ppm maxval {maxval}, only 255 supported")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(DataError::Malformed("missing raster separator".into())),
    }
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(DataError::Truncated { context: "ppm raster" });
    }
    Ok(ImageU8::new(w, h, bytes[pos..pos + need].to_vec())?)
}

/// Nearest-neighbor resize.
pub fn resize_nearest(img: &ImageU8, new_w: usize, new_h: usize) -> ImageU8 {
    let (w, h) = (img.width(), img.height());
    let mut data = Vec::with_capacity(new_w * new_h * 3);
    for y in 0..new_h {
        let sy = y * h / new_h;
        for x in 0..new_w {
            let sx = x * w / new_w;
            data.extend_from_slice(&img.pixel(sx, sy));
        }
    }
    ImageU8::new(new_w, new_h, data).expect("buffer sized for dims")
}

/// Load a directory of PPM images with a label index file. The index's
/// first line is `classes <K>`; each following line is `<filename> <label>`.
/// Every image is rescaled to `target_dims` with nearest-neighbor sampling.
pub fn load_ppm_dir(
    dir: &Path,
    index_file: &Path,
    target_dims: (usize, usize),
) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(index_file)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| DataError::Malformed("empty label index".into()))?;
    let classes: usize = header
        .strip_prefix("classes ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| DataError::Malformed("label index must start with 'classes <K>'".into()))?;

    let mut images = Vec::new();
    let mut labels = Vec::new();
    for line in lines {
        let (file, label) = line
            .rsplit_once(' ')
            .ok_or_else(|| DataError::Malformed(format!("bad index line '{line}'")))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| DataError::Malformed(format!("bad label in '{line}'")))?;
        if label >= classes {
            return Err(DataError::InvalidLabel { label, classes });
        }
        let img = read_ppm(&dir.join(file.trim()))?;
        images.push(resize_nearest(&img, target_dims.0, target_dims.1));
        labels.push(label);
    }
    Dataset::new(images, labels, classes, "ppmdir")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::generate_synthetic;
    use crate::rng::Rng;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("carm-files-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn synthetic_cifar_batch(rng: &mut Rng, records: usize) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(records * CIFAR_RECORD);
        for _ in 0..records {
            bytes.push(rng.next_below(10) as u8);
            for _ in 0..3072 {
                bytes.push(rng.next_below(256) as u8);
            }
        }
        bytes
    }

    #[test]
    fn cifar_batch_round_trips() {
        let dir = tmpdir("cifar");
        let mut rng = Rng::new(1);
        let bytes = synthetic_cifar_batch(&mut rng, 7);
        let file = dir.join("data_batch_1.bin");
        std::fs::write(&file, &bytes).unwrap();

        let ds = load_cifar10(&file).unwrap();
        assert_eq!(ds.len(), 7);
        assert_eq!(ds.dims(), Some((32, 32)));
        assert_eq!(ds.class_count(), 10);

        // Re-serialize through save_dataset and compare record bytes.
        let out = dir.join("copy.ds");
        save_dataset(&ds, &out, &SidecarMeta::new()).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), bytes);
    }

    #[test]
    fn cifar_rejects_truncated_file() {
        let dir = tmpdir("cifar-trunc");
        let mut rng = Rng::new(2);
        let mut bytes = synthetic_cifar_batch(&mut rng, 3);
        bytes.pop();
        let file = dir.join("bad.bin");
        std::fs::write(&file, &bytes).unwrap();
        assert!(matches!(
            load_cifar10(&file).unwrap_err(),
            DataError::BadRecordSize { .. }
        ));
    }

    #[test]
    fn cifar_rejects_bad_label() {
        let dir = tmpdir("cifar-label");
        let mut rng = Rng::new(3);
        let mut bytes = synthetic_cifar_batch(&mut rng, 2);
        bytes[0] = 10;
        let file = dir.join("bad.bin");
        std::fs::write(&file, &bytes).unwrap();
        assert!(matches!(
            load_cifar10(&file).unwrap_err(),
            DataError::InvalidLabel { label: 10, classes: 10 }
        ));
    }

    #[test]
    fn cifar_loads_directory_in_filename_order() {
        let dir = tmpdir("cifar-dir");
        let mut rng = Rng::new(4);
        let a = synthetic_cifar_batch(&mut rng, 2);
        let b = synthetic_cifar_batch(&mut rng, 3);
        std::fs::write(dir.join("batch_2.bin"), &b).unwrap();
        std::fs::write(dir.join("batch_1.bin"), &a).unwrap();
        std::fs::write(dir.join("readme.txt"), "ignored").unwrap();
        let ds = load_cifar10(&dir).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.labels()[0] as u8, a[0]);
        assert_eq!(ds.labels()[2] as u8, b[0]);
    }

    #[test]
    fn dataset_round_trips_with_sidecar() {
        let dir = tmpdir("ds");
        let ds = generate_synthetic(3, 4, (16, 16), 5).unwrap();
        let mut extra = SidecarMeta::new();
        extra.insert("attack".into(), "fgsm".into());
        extra.insert("epsilon".into(), "0.020000".into());
        let path = dir.join("set.ds");
        save_dataset(&ds, &path, &extra).unwrap();
        let (back, meta) = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(meta.get("attack").unwrap(), "fgsm");
        assert_eq!(meta.get("epsilon").unwrap(), "0.020000");
    }

    #[test]
    fn ppm_round_trips() {
        let dir = tmpdir("ppm");
        let mut rng = Rng::new(6);
        let data: Vec<u8> = (0..9 * 5 * 3).map(|_| rng.next_below(256) as u8).collect();
        let img = ImageU8::new(9, 5, data).unwrap();
        let path = dir.join("img.ppm");
        write_ppm(&img, &path).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_accepts_comments_and_rejects_other_maxval() {
        let dir = tmpdir("ppm-hdr");
        let path = dir.join("c.ppm");
        std::fs::write(&path, b"P6\n# comment\n2 1\n255\nabcdef").unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!(img.data(), b"abcdef");

        let path = dir.join("m.ppm");
        std::fs::write(&path, b"P6\n2 1\n65535\nabcdef").unwrap();
        assert!(matches!(read_ppm(&path).unwrap_err(), DataError::Malformed(_)));
    }

    #[test]
    fn resize_nearest_maps_corners() {
        let img = ImageU8::new(2, 2, vec![10, 0, 0, 20, 0, 0, 30, 0, 0, 40, 0, 0]).unwrap();
        let big = resize_nearest(&img, 4, 4);
        assert_eq!(big.pixel(0, 0)[0], 10);
        assert_eq!(big.pixel(3, 0)[0], 20);
        assert_eq!(big.pixel(0, 3)[0], 30);
        assert_eq!(big.pixel(3, 3)[0], 40);
    }

    #[test]
    fn ppm_dir_loader_reads_index() {
        let dir = tmpdir("ppmdir");
        let ds = generate_synthetic(2, 2, (12, 10), 8).unwrap();
        for (i, img) in ds.images().iter().enumerate() {
            write_ppm(img, &dir.join(format!("img{i}.ppm"))).unwrap();
        }
        let index = dir.join("labels.txt");
        std::fs::write(
            &index,
            "classes 2\nimg0.ppm 0\nimg1.ppm 0\nimg2.ppm 1\nimg3.ppm 1\n",
        )
        .unwrap();
        let loaded = load_ppm_dir(&dir, &index, (8, 8)).unwrap();
        assert_eq!(loaded.len(), 4);
        assert_eq!(loaded.dims(), Some((8, 8)));
        assert_eq!(loaded.labels(), &[0, 0, 1, 1]);
    }
}
