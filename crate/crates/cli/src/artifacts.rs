//! Artifact files in the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use specguard_core::signals::Trajectory;

pub const PROFILE: &str = "accuracy_profile.json";
pub const HISTORY: &str = "falsification_history.csv";
pub const CERTIFICATE: &str = "certificate.json";
pub const VALIDATION: &str = "validation_report.json";
pub const TRACES: &str = "validation_traces.csv";
pub const PLOT_DEVIATIONS: &str = "plot_deviation_histogram.csv";
pub const PLOT_CONVERGENCE: &str = "plot_convergence.csv";
pub const PLOT_TRACES: &str = "plot_validation_traces.csv";

/// Subcommand that produces each artifact.
pub fn producer(name: &str) -> &'static str {
    match name {
        PROFILE => "calibrate",
        HISTORY => "falsify",
        CERTIFICATE => "certify",
        VALIDATION | TRACES => "validate",
        _ => "report",
    }
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    /// Writes through a temporary file so an interrupted write never leaves a truncated artifact.
    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Reads an upstream artifact, naming the stage that produces it when missing.
    pub fn read(&self, name: &str) -> Result<String> {
        let path = self.path(name);
        if !path.is_file() {
            bail!("missing {} in {}; run `specguard {}` first", name, self.root.display(), producer(name));
        }
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let text = self.read(name)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", self.path(name).display()))
    }

    pub fn sha256(&self, name: &str) -> Result<String> {
        let bytes = fs::read(self.path(name)).with_context(|| format!("hashing {name}"))?;
        Ok(format!("sha256:{}", hex::encode(Sha256::digest(&bytes))))
    }
}

/// Long-format trace table: `source,t,x1..xn`, one row per sample.
pub fn traces_to_csv(traces: &[(String, Trajectory)]) -> String {
    let dim = traces.first().map_or(0, |(_, t)| t.dim());
    let mut out = String::from("source,t");
    for i in 1..=dim {
        write!(out, ",x{i}").unwrap();
    }
    out.push('\n');
    for (source, tr) in traces {
        for (t, x) in tr.samples() {
            write!(out, "{source},{t}").unwrap();
            for v in x {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Inverse of [`traces_to_csv`], preserving source order.
pub fn traces_from_csv(text: &str) -> Result<Vec<(String, Trajectory)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().context("empty trace file")?;
    let width = header.split(',').count();
    if width < 3 || !header.starts_with("source,t,") {
        bail!("unexpected trace header {header:?}");
    }
    let mut out: Vec<(String, Vec<f64>, Vec<Vec<f64>>)> = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            bail!("trace row {}: expected {width} fields", i + 2);
        }
        let nums = fields[1..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("trace row {}", i + 2))?;
        if out.last().is_none_or(|(s, _, _)| s != fields[0]) {
            out.push((fields[0].to_string(), Vec::new(), Vec::new()));
        }
        let entry = out.last_mut().expect("just pushed");
        entry.1.push(nums[0]);
        entry.2.push(nums[1..].to_vec());
    }
    out.into_iter().map(|(s, t, x)| Ok((s, Trajectory::new(t, x)?))).collect()
}
