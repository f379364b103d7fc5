//! `run.json` provenance records.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use manigrad::data::DATASET_FORMAT_VERSION;
use manigrad::io::write_atomic;
use manigrad::models::file::FORMAT_VERSION;
use manigrad::Error;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::failure::CliResult;

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything needed to rerun a command: its arguments, the seeds it used,
/// the file formats it read and wrote, and hashes of its inputs.
pub struct RunRecord {
    command: &'static str,
    args: Value,
    seeds: BTreeMap<String, u64>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    result: Value,
}

impl RunRecord {
    pub fn new(command: &'static str, args: &impl Serialize) -> CliResult<Self> {
        Ok(RunRecord {
            command,
            args: serde_json::to_value(args)?,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            result: Value::Null,
        })
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn result(&mut self, result: Value) {
        self.result = result;
    }

    pub fn to_json(&self) -> Value {
        json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "args": self.args,
            "seeds": self.seeds,
            "formatVersions": {
                "ntf": 1,
                "mgm": FORMAT_VERSION,
                "dataset": DATASET_FORMAT_VERSION,
            },
            "inputs": self.inputs,
            "outputs": self.outputs,
            "result": self.result,
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(&self.to_json())?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)?;
        Ok(())
    }
}

/// `<out>.run.json` next to a file output.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    out.with_file_name(name)
}
