use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

/// SHA-256 of the path-free settings, serialized with sorted keys.
pub fn config_hash(config: &RunConfig) -> [u8; 32] {
    let text = serde_json::to_string(&config.settings_json()).expect("config serializes");
    Sha256::digest(text.as_bytes()).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    subcommand: &'a str,
    seed: u64,
    config_hash: String,
    version: &'a str,
    started_at: String,
    rayon_num_threads: Option<String>,
}

/// Output directory of one invocation.
pub struct RunDir {
    pub path: PathBuf,
    pub hash: [u8; 32],
}

impl RunDir {
    /// Creates `out`, or `<output_dir>/<subcommand>-<timestamp>`, and records
    /// the resolved config, its hash and run metadata.
    pub fn create(subcommand: &str, config: &RunConfig, out: Option<&Path>) -> Result<Self, CliError> {
        let now = chrono::Utc::now();
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => config
                .paths
                .output_dir
                .join(format!("{subcommand}-{}", now.format("%Y%m%dT%H%M%S%.3fZ"))),
        };
        fs::create_dir_all(&path)?;
        let hash = config_hash(config);
        let dir = Self { path, hash };
        dir.write_json("config.json", config)?;
        fs::write(dir.file("config.sha256"), format!("{}\n", hex(&hash)))?;
        dir.write_json(
            "run.json",
            &RunMetadata {
                subcommand,
                seed: config.seed,
                config_hash: hex(&hash),
                version: env!("CARGO_PKG_VERSION"),
                started_at: now.to_rfc3339(),
                rayon_num_threads: std::env::var("RAYON_NUM_THREADS").ok(),
            },
        )?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.file(name);
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, value)?;
        std::io::Write::write_all(&mut w, b"\n")?;
        Ok(path)
    }
}
