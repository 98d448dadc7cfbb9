//! Checkpoint plus JSON manifest describing how to rebuild the model.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nag_tensor::{read_checkpoint, write_checkpoint};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Arch, ConfigName, DecoderConfig, Dims, EncoderKind, Model, ModelError, Result, TokenVocab};
use crate::grammar::load_grammar;

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub grammar: String,
    pub grammar_sha256: String,
    pub config: ConfigName,
    pub encoder: EncoderKind,
    pub dims: Dims,
    pub seed: u64,
    pub vocab: TokenVocab,
    pub checkpoint_sha256: String,
}

/// `<ckpt>.manifest.json`
pub fn manifest_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Model {
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_checkpoint(&self.params, &mut buf)?;
        Ok(buf)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let a = &self.arch;
        Ok(Manifest {
            format: MANIFEST_FORMAT,
            grammar: a.grammar.to_string(),
            grammar_sha256: a.grammar.fingerprint(),
            config: a.decoder.name,
            encoder: a.encoder,
            dims: a.dims,
            seed: self.seed,
            vocab: a.vocab.clone(),
            checkpoint_sha256: hex(&self.checkpoint_bytes()?),
        })
    }

    /// Writes the checkpoint and its manifest.
    pub fn save(&self, ckpt: &Path) -> Result<()> {
        let bytes = self.checkpoint_bytes()?;
        std::fs::write(ckpt, &bytes)?;
        let m = self.manifest()?;
        let mut w = BufWriter::new(File::create(manifest_path(ckpt))?);
        serde_json::to_writer_pretty(&mut w, &m).map_err(|e| ModelError::Manifest(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(ckpt: &Path) -> Result<Model> {
        let mpath = manifest_path(ckpt);
        let m: Manifest = serde_json::from_reader(BufReader::new(File::open(&mpath)?))
            .map_err(|e| ModelError::Manifest(format!("{}: {e}", mpath.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(ModelError::Manifest(format!("unsupported format {}", m.format)));
        }
        let grammar = load_grammar(&m.grammar)?;
        if grammar.fingerprint() != m.grammar_sha256 {
            return Err(ModelError::Manifest("grammar hash mismatch".into()));
        }
        let bytes = std::fs::read(ckpt)?;
        if hex(&bytes) != m.checkpoint_sha256 {
            return Err(ModelError::Manifest("checkpoint hash mismatch".into()));
        }
        let params = read_checkpoint(&bytes[..])?;
        let arch = Arch::new(grammar, DecoderConfig::of(m.config), m.encoder, m.dims, m.vocab);
        let spec = arch.spec();
        let expected: Vec<(&str, &[usize])> = spec.entries().iter().map(|(n, s, _)| (n.as_str(), s.as_slice())).collect();
        let mut expected = expected;
        expected.sort();
        let found: Vec<(&str, &[usize])> = params.iter().map(|(n, t)| (n, t.shape())).collect();
        if expected != found {
            return Err(ModelError::Manifest("checkpoint tensors do not match the architecture".into()));
        }
        Ok(Model { arch, params, seed: m.seed })
    }
}
