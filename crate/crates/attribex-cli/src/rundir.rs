//! Run-directory layout and the append-only manifest.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use attribex::error::{Error, Result};

pub struct RunDir {
    root: PathBuf,
    overwrite: bool,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct ManifestEntry {
    pub command: String,
    pub config_hash: String,
    pub timestamp_unix: u64,
    pub outputs: Vec<String>,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>, overwrite: bool) -> RunDir {
        RunDir {
            root: root.into(),
            overwrite,
        }
    }


    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn projector(&self) -> PathBuf {
        self.root.join("projector.json")
    }

    pub fn graph_dir(&self) -> PathBuf {
        self.root.join("graph")
    }

    pub fn attributes_bin(&self) -> PathBuf {
        self.root.join("attributes.bin")
    }

    pub fn attributes_json(&self) -> PathBuf {
        self.root.join("attributes.json")
    }

    pub fn detectors_bin(&self) -> PathBuf {
        self.root.join("detectors.bin")
    }

    pub fn detectors_json(&self) -> PathBuf {
        self.root.join("detectors.json")
    }

    pub fn category(&self) -> PathBuf {
        self.root.join("category.json")
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.root.join("embeddings")
    }

    pub fn rankings(&self) -> PathBuf {
        self.root.join("rankings.csv")
    }

    pub fn eval_report(&self) -> PathBuf {
        self.root.join("eval_report.json")
    }

    pub fn cmc_csv(&self) -> PathBuf {
        self.root.join("cmc.csv")
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }

    pub fn sweep_json(&self) -> PathBuf {
        self.root.join("sweep.json")
    }

    pub fn experiments_dir(&self) -> PathBuf {
        self.root.join("experiments")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }

    /// The run directory is append-only: refuse to clobber existing
    /// artifacts unless --overwrite was given.
    pub fn claim(&self, outputs: &[PathBuf]) -> Result<()> {
        std::fs::create_dir_all(&self.root)
            .map_err(|e| Error::io(format!("creating {}", self.root.display()), e))?;
        if !self.overwrite {
            for path in outputs {
                if path.exists() {
                    return Err(Error::InvalidConfig(format!(
                        "artifact exists: {} (pass --overwrite to replace)",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn require(&self, artifact: &str, path: &Path) -> Result<()> {
        let present = if path.extension().is_none() {
            // directory artifact
            path.join("meta.jsonl").exists()
        } else {
            path.exists()
        };
        if !present {
            return Err(Error::MissingFile(format!(
                "missing artifact: {artifact} (expected at {})",
                path.display()
            )));
        }
        Ok(())
    }

    pub fn append_manifest(&self, command: &str, config_hash: &str, outputs: &[PathBuf]) -> Result<()> {
        let entry = ManifestEntry {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs: outputs
                .iter()
                .map(|p| {
                    p.strip_prefix(&self.root)
                        .unwrap_or(p)
                        .display()
                        .to_string()
                })
                .collect(),
        };
        let line = serde_json::to_string(&entry)
            .map_err(|e| Error::json("serializing manifest entry", e))?;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.manifest())
            .map_err(|e| Error::io(format!("opening {}", self.manifest().display()), e))?;
        writeln!(file, "{line}")
            .map_err(|e| Error::io(format!("appending {}", self.manifest().display()), e))
    }

    pub fn manifest_entries(&self) -> Result<Vec<ManifestEntry>> {
        let path = self.manifest();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let file = std::fs::File::open(&path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut entries = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::json("parsing manifest entry", e))?,
            );
        }
        Ok(entries)
    }

    /// Latest config hash recorded for a command, if any.
    pub fn latest_hash(&self, command: &str) -> Result<Option<String>> {
        Ok(self
            .manifest_entries()?
            .into_iter()
            .rev()
            .find(|e| e.command == command)
            .map(|e| e.config_hash))
    }
}
