//! Writes a run's artifacts, the shared report files and `manifest.txt`.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::commands::{Artifact, RunOutput};
use crate::config::{flatten, ExperimentConfig};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Adds `reports.txt`, `report_items.csv` and `summary.csv` to the run's own
/// artifacts.
pub fn standard_artifacts(out: &RunOutput) -> Result<Vec<Artifact>, CliError> {
    let mut text = String::new();
    for r in &out.reports {
        write!(text, "{r}").expect("writing to a String");
    }
    writeln!(
        text,
        "# overall {}",
        if out.passed() { "PASS" } else { "FAIL" }
    )
    .expect("writing to a String");

    let mut items = csv::Writer::from_writer(Vec::new());
    items.write_record(["report", "label", "lhs", "rhs", "margin", "pass"])?;
    for r in &out.reports {
        for i in &r.items {
            items.write_record([
                &r.name,
                &i.label,
                &i.lhs.to_string(),
                &i.rhs.to_string(),
                &i.margin.to_string(),
                &i.pass.to_string(),
            ])?;
        }
    }

    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record(["metric", "value"])?;
    for (k, v) in &out.summary {
        summary.write_record([k, v])?;
    }

    let mut all = out.artifacts.clone();
    all.push(Artifact {
        name: "reports.txt".into(),
        bytes: text.into_bytes(),
    });
    all.push(Artifact {
        name: "report_items.csv".into(),
        bytes: items
            .into_inner()
            .map_err(|e| CliError::Io(e.to_string()))?,
    });
    all.push(Artifact {
        name: "summary.csv".into(),
        bytes: summary
            .into_inner()
            .map_err(|e| CliError::Io(e.to_string()))?,
    });
    Ok(all)
}

/// `key=value` lines: command, status, every parameter the command reads,
/// input hashes and one hash per artifact. Thread count and output directory
/// are left out.
pub fn render_manifest(
    config: &ExperimentConfig,
    out: &RunOutput,
    artifacts: &[Artifact],
) -> String {
    let mut m = String::new();
    writeln!(m, "command={}", config.command.name()).expect("writing to a String");
    writeln!(m, "status={}", if out.passed() { "pass" } else { "fail" })
        .expect("writing to a String");
    for (k, v) in flatten(config) {
        if !config
            .command
            .uses_section(k.split('.').next().unwrap_or_default())
        {
            continue;
        }
        writeln!(m, "param.{k}={v}").expect("writing to a String");
    }
    for input in &out.inputs {
        writeln!(
            m,
            "input.{}.sha256={}",
            input.name,
            sha256_hex(&input.bytes)
        )
        .expect("writing to a String");
    }
    let mut sorted: Vec<&Artifact> = artifacts.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    for a in sorted {
        writeln!(m, "artifact.{}.sha256={}", a.name, sha256_hex(&a.bytes))
            .expect("writing to a String");
    }
    m
}

/// Writes everything under `dir` (created if missing) and returns the
/// manifest text.
pub fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    out: &RunOutput,
) -> Result<String, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let artifacts = standard_artifacts(out)?;
    for a in &artifacts {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.bytes)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    let manifest = render_manifest(config, out, &artifacts);
    let path = dir.join(MANIFEST);
    std::fs::write(&path, &manifest)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(manifest)
}
