//! Run manifest: config hash, seeds, stage timings, and content digests of
//! every emitted file.
//!
//! The manifest itself carries wall-clock timings and is therefore the one
//! output excluded from byte-identity guarantees; everything it points to
//! (SCTR, CSV, SVG, checkpoints) reproduces exactly for a fixed config and
//! seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{CliError, CliResult};

/// FNV-1a 64-bit; plenty for content fingerprints.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn digest_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv64(bytes))
}

pub struct Manifest {
    config_hash: String,
    seed: u64,
    started: Instant,
    stages: Vec<(String, f64)>,
    files: Vec<(PathBuf, String)>,
}

impl Manifest {
    pub fn new(normalized_config: &str, seed: u64) -> Manifest {
        Manifest {
            config_hash: digest_hex(normalized_config.as_bytes()),
            seed,
            started: Instant::now(),
            stages: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Record a completed stage's wall time.
    pub fn stage_done(&mut self, name: &str, t0: Instant) {
        self.stages.push((name.to_string(), t0.elapsed().as_secs_f64()));
    }

    /// Write a file and record its digest.
    pub fn write_file(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        std::fs::write(path, bytes)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        self.files.push((path.to_path_buf(), digest_hex(bytes)));
        Ok(())
    }

    pub fn record_file(&mut self, path: &Path, bytes: &[u8]) {
        self.files.push((path.to_path_buf(), digest_hex(bytes)));
    }

    /// Combined digest over the recorded output files, in recording order.
    pub fn corpus_digest(&self) -> String {
        let mut all = String::new();
        for (p, d) in &self.files {
            let _ = writeln!(all, "{} {}", d, p.display());
        }
        digest_hex(all.as_bytes())
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut out = String::new();
        let _ = writeln!(out, "config_hash = {}", self.config_hash);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "corpus_digest = {}", self.corpus_digest());
        let _ = writeln!(out, "total_seconds = {:.3}", self.started.elapsed().as_secs_f64());
        let _ = writeln!(out, "\n[stages]");
        for (name, secs) in &self.stages {
            let _ = writeln!(out, "{name} = {secs:.3}");
        }
        let _ = writeln!(out, "\n[files]");
        for (p, d) in &self.files {
            let _ = writeln!(out, "{} = {}", p.display(), d);
        }
        std::fs::write(path, out)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
    }

    /// Read just the corpus digest back from a saved manifest.
    pub fn read_corpus_digest(path: &Path) -> CliResult<String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("corpus_digest = ") {
                return Ok(rest.trim().to_string());
            }
        }
        Err(CliError::data(format!(
            "{}: no corpus_digest entry",
            path.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_spot_values() {
        // well-known FNV-1a vectors
        assert_eq!(fnv64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn digests_change_with_content() {
        assert_ne!(digest_hex(b"one"), digest_hex(b"two"));
    }
}
