//! Flag parsing and config layering.
//!
//! Every option is `--key value` (or `--key=value`). Values resolve with
//! this precedence, highest first: command-line flag, `--config` file entry,
//! the `CARM_SEED` environment variable (seed only), built-in default.
//! Unknown flags and unknown config keys are usage errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::CliError;

pub struct Args {
    sub: &'static str,
    allowed: &'static [&'static str],
    flags: BTreeMap<String, String>,
    file: BTreeMap<String, String>,
    consumed: std::cell::RefCell<Vec<String>>,
}

impl Args {
    /// Parse argv for one subcommand, loading `--config` if present.
    pub fn parse(
        sub: &'static str,
        allowed: &'static [&'static str],
        argv: &[String],
    ) -> Result<Args, CliError> {
        let mut flags = BTreeMap::new();
        let mut i = 0;
        while i < argv.len() {
            let token = &argv[i];
            let Some(stripped) = token.strip_prefix("--") else {
                return Err(CliError::Usage(format!(
                    "carm {sub}: unexpected argument '{token}'"
                )));
            };
            let (key, value) = match stripped.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let value = argv.get(i + 1).ok_or_else(|| {
                        CliError::Usage(format!("carm {sub}: flag --{stripped} needs a value"))
                    })?;
                    i += 1;
                    (stripped.to_string(), value.clone())
                }
            };
            if key != "config" && !allowed.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("carm {sub}: unknown flag --{key}")));
            }
            flags.insert(key, value);
            i += 1;
        }

        let mut file = BTreeMap::new();
        if let Some(path) = flags.get("config") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Pipeline(format!("cannot read config {path}: {e}")))?;
            for (line_no, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(CliError::Usage(format!(
                        "{path}:{}: expected key=value, got '{line}'",
                        line_no + 1
                    )));
                };
                let k = k.trim();
                if !allowed.contains(&k) {
                    return Err(CliError::Usage(format!(
                        "{path}:{}: unknown key '{k}' for carm {sub}",
                        line_no + 1
                    )));
                }
                file.insert(k.to_string(), v.trim().to_string());
            }
        }

        Ok(Args {
            sub,
            allowed,
            flags,
            file,
            consumed: std::cell::RefCell::new(Vec::new()),
        })
    }

    fn raw(&self, key: &str) -> Option<String> {
        debug_assert!(
            self.allowed.contains(&key) || key == "seed",
            "getter for undeclared key {key}"
        );
        self.consumed.borrow_mut().push(key.to_string());
        if let Some(v) = self.flags.get(key) {
            return Some(v.clone());
        }
        if let Some(v) = self.file.get(key) {
            return Some(v.clone());
        }
        if key == "seed" {
            if let Ok(v) = std::env::var("CARM_SEED") {
                return Some(v);
            }
        }
        None
    }

    pub fn str_opt(&self, key: &str) -> Option<String> {
        self.raw(key)
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or_else(|| default.to_string())
    }

    pub fn require(&self, key: &str) -> Result<String, CliError> {
        self.raw(key)
            .ok_or_else(|| CliError::Usage(format!("carm {}: missing required --{key}", self.sub)))
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                CliError::Usage(format!("carm {}: --{key} got unparseable value '{v}'", self.sub))
            }),
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parse_or("seed", 0)
    }

    pub fn threads(&self) -> Result<usize, CliError> {
        self.parse_or("threads", 0)
    }

    /// One sorted `key=value` line of everything this run resolved, for the
    /// reproducibility log.
    pub fn resolved_log(&self) -> String {
        let mut keys: Vec<String> = self.consumed.borrow().clone();
        keys.sort();
        keys.dedup();
        let mut out = String::new();
        for key in keys {
            if let Some(v) = self.flags.get(&key).or_else(|| self.file.get(&key)) {
                let _ = write!(out, " {key}={v}");
            } else if key == "seed" {
                if let Ok(v) = std::env::var("CARM_SEED") {
                    let _ = write!(out, " seed={v} (from CARM_SEED)");
                }
            }
        }
        out
    }
}
