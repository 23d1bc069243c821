//! Run manifests: each command records the tool version, its full argument
//! set, input content hashes, and the artifacts it wrote, so `fprobe rerun`
//! can reproduce a run and flag drifted inputs. No timestamps or host state
//! go in; the file itself is deterministic for a given invocation.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "fprobe";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// The command's argument struct, paths resolved to absolute.
    pub args: serde_json::Value,
    /// FPROBE_THREADS at run time, if it was set.
    pub threads: Option<usize>,
    /// input path -> sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Artifact file names, relative to the output directory.
    pub outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl Manifest {
    pub fn new(command: &str, args: impl Serialize, threads: Option<usize>) -> Result<Self> {
        Ok(Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: serde_json::to_value(args)?,
            threads,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)? + "\n";
        fs::write(out_dir.join("manifest.json"), body)
            .with_context(|| format!("write manifest under {}", out_dir.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("read manifest {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.tool != TOOL {
            bail!("manifest names tool {:?}, expected {:?}", m.tool, TOOL);
        }
        Ok(m)
    }

    /// Re-hash every recorded input; rerun only promises byte-identical
    /// outputs when the inputs are byte-identical too.
    pub fn verify_inputs(&self) -> Result<()> {
        for (path, want) in &self.inputs {
            let got = sha256_file(Path::new(path))?;
            if &got != want {
                bail!(
                    "input {path} changed since this manifest was written \
                     (sha256 now {got}, recorded {want})"
                );
            }
        }
        Ok(())
    }
}

/// Create the output directory and return it as an absolute path.
pub fn prepare_out_dir(out: &Path) -> Result<std::path::PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("create {}", out.display()))?;
    Ok(out.canonicalize()?)
}
