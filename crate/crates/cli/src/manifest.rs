//! Run manifest: tool version, seed, configuration digest and file hashes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use plantiv_core::synth::RNG_NAME;

use crate::{Outcome, Session};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            path: path.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub rng: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(session: &Session, outcome: &Outcome) -> Self {
        let mut outputs: Vec<FileDigest> = outcome
            .files
            .iter()
            .map(|(n, b)| FileDigest::of(n.clone(), b))
            .collect();
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let mut inputs = outcome.inputs.clone();
        inputs.sort_by(|a, b| a.path.cmp(&b.path));
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: session.command.name().into(),
            rng: RNG_NAME.into(),
            seed: session.config.seed,
            config_sha256: sha256_hex(session.config.canonical().as_bytes()),
            inputs,
            outputs,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
