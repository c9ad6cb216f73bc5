//! Dataset source resolution shared by every subcommand.
//!
//! Accepted forms:
//! - `synthetic:CLASSES:PER_CLASS:DIM` — seeded generator (seed comes from
//!   the run seed)
//! - `ppmdir:DIR:INDEX:SIZE` — directory of PPMs with a label index,
//!   rescaled to SIZE x SIZE
//! - a `.bin` file or a directory — CIFAR-10 binary batches
//! - anything else — a dataset written by `carm attack`/`carm compress`
//!   (records plus `.meta` sidecar)

use std::path::Path;

use carm_core::data_io::{self, Dataset, SidecarMeta};

use crate::CliError;

pub fn load_source(spec: &str, seed: u64) -> Result<(Dataset, SidecarMeta), CliError> {
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [classes, per_class, dim] = parts.as_slice() else {
            return Err(CliError::Usage(format!(
                "bad synthetic spec '{spec}', want synthetic:CLASSES:PER_CLASS:DIM"
            )));
        };
        let parse = |v: &str, what: &str| -> Result<usize, CliError> {
            v.parse()
                .map_err(|_| CliError::Usage(format!("bad {what} in synthetic spec '{spec}'")))
        };
        let ds = data_io::generate_synthetic(
            parse(classes, "class count")?,
            parse(per_class, "per-class count")?,
            (parse(dim, "dimension")?, parse(dim, "dimension")?),
            seed,
        )
        .map_err(|e| CliError::Pipeline(e.to_string()))?;
        return Ok((ds, SidecarMeta::new()));
    }

    if let Some(rest) = spec.strip_prefix("ppmdir:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [dir, index, size] = parts.as_slice() else {
            return Err(CliError::Usage(format!(
                "bad ppmdir spec '{spec}', want ppmdir:DIR:INDEX:SIZE"
            )));
        };
        let size: usize = size
            .parse()
            .map_err(|_| CliError::Usage(format!("bad size in ppmdir spec '{spec}'")))?;
        let ds = data_io::load_ppm_dir(Path::new(dir), Path::new(index), (size, size))
            .map_err(|e| CliError::Pipeline(e.to_string()))?;
        return Ok((ds, SidecarMeta::new()));
    }

    let path = Path::new(spec);
    if path.is_dir() || path.extension().is_some_and(|e| e == "bin") {
        let ds = data_io::load_cifar10(path).map_err(|e| CliError::Pipeline(e.to_string()))?;
        return Ok((ds, SidecarMeta::new()));
    }
    data_io::load_dataset(path).map_err(|e| CliError::Pipeline(e.to_string()))
}
