use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::Global;

/// Written next to every command's outputs. Holds no timestamps or absolute
/// paths, so identical runs produce identical manifests.
#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    global: &'a Global,
    config: Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn hashes(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            Ok((name, sha256_file(p)?))
        })
        .collect()
}

pub fn manifest_path(out_dir: &Path, command: &str) -> std::path::PathBuf {
    out_dir.join(format!("manifest.{command}.json"))
}

pub fn write(
    out_dir: &Path,
    command: &str,
    global: &Global,
    config: Value,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let manifest = Manifest {
        command,
        version: trajbench::VERSION,
        global,
        config,
        inputs: hashes(inputs)?,
        outputs: hashes(outputs)?,
    };
    let path = manifest_path(out_dir, command);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
