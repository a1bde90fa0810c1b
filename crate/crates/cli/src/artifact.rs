use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::error::{resource, usage};

pub const MANIFEST_FILE: &str = "run-manifest.json";
pub const HASH_FIELD: &str = "manifest_hash";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputRecord {
    pub name: String,
    pub path: String,
    pub sha256: String,
}

/// Written next to every run's artifacts. Timestamps live only here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub manifest_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<InputRecord>,
    pub outputs: BTreeMap<String, String>,
    pub fingerprints: BTreeMap<String, Value>,
    pub started_at_unix: u64,
    pub wall_time_secs: f64,
}

/// One subcommand invocation: registers inputs, stamps outputs with the
/// manifest hash and writes the run manifest at the end.
pub struct Run {
    pub subcommand: &'static str,
    pub config: RunConfig,
    pub out: PathBuf,
    inputs: Vec<InputRecord>,
    outputs: BTreeMap<String, String>,
    fingerprints: BTreeMap<String, Value>,
    hash: Option<String>,
    started: SystemTime,
    clock: Instant,
}

impl Run {
    pub fn new(subcommand: &'static str, config: RunConfig) -> anyhow::Result<Self> {
        let out = config
            .paths
            .out
            .clone()
            .ok_or_else(|| usage(format!("{subcommand} needs an output directory (--out or paths.out)")))?;
        Ok(Self {
            subcommand,
            config,
            out,
            inputs: Vec::new(),
            outputs: BTreeMap::new(),
            fingerprints: BTreeMap::new(),
            hash: None,
            started: SystemTime::now(),
            clock: Instant::now(),
        })
    }

    /// Registers a required input file and returns its path.
    pub fn input_file(&mut self, name: &str, path: Option<&Path>) -> anyhow::Result<PathBuf> {
        let path = path.ok_or_else(|| usage(format!("{} needs `{name}`", self.subcommand)))?;
        if !path.is_file() {
            return Err(usage(format!("{name} file {} does not exist", path.display())));
        }
        let sha256 = digest_file(path)?;
        self.push_input(name, path.display().to_string(), sha256);
        Ok(path.to_path_buf())
    }

    /// Registers a model directory or `mock:` spec.
    pub fn input_model(&mut self, name: &str, spec: Option<&str>) -> anyhow::Result<String> {
        let spec = spec.ok_or_else(|| usage(format!("{} needs a `{name}` model", self.subcommand)))?;
        let sha256 = if spec.starts_with("mock:") {
            hex(&Sha256::digest(spec.as_bytes()))
        } else {
            let dir = Path::new(spec);
            if !dir.is_dir() {
                return Err(resource(format!("{name} model directory {spec} does not exist")));
            }
            digest_dir(dir)?
        };
        self.push_input(name, spec.to_string(), sha256);
        Ok(spec.to_string())
    }

    fn push_input(&mut self, name: &str, path: String, sha256: String) {
        assert!(self.hash.is_none(), "inputs must be registered before outputs");
        self.inputs.push(InputRecord {
            name: name.into(),
            path,
            sha256,
        });
    }

    pub fn hash(&mut self) -> String {
        if self.hash.is_none() {
            let inputs: Vec<(String, String)> = self.inputs.iter().map(|i| (i.name.clone(), i.sha256.clone())).collect();
            self.hash = Some(self.config.manifest_hash(self.subcommand, &inputs));
        }
        self.hash.clone().expect("set above")
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn fingerprint<T: Serialize>(&mut self, name: &str, value: &T) {
        self.fingerprints
            .insert(name.into(), serde_json::to_value(value).expect("fingerprint serializes"));
    }

    /// Writes a JSON document with the manifest hash as a top-level field.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let doc = stamp(serde_json::to_value(value)?, &self.hash());
        let mut raw = serde_json::to_vec_pretty(&doc)?;
        raw.push(b'\n');
        self.write_bytes(name, &raw)
    }

    /// Writes JSON lines, each object carrying the manifest hash.
    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> anyhow::Result<PathBuf> {
        let hash = self.hash();
        let mut raw = Vec::new();
        for item in items {
            serde_json::to_writer(&mut raw, &stamp(serde_json::to_value(item)?, &hash))?;
            raw.push(b'\n');
        }
        self.write_bytes(name, &raw)
    }

    fn write_bytes(&mut self, name: &str, raw: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, raw)?;
        self.outputs.insert(name.into(), hex(&Sha256::digest(raw)));
        Ok(path)
    }

    /// Records a directory another component wrote under `out`.
    pub fn record_dir(&mut self, name: &str) -> anyhow::Result<()> {
        let d = digest_dir(&self.path(name))?;
        self.outputs.insert(format!("{name}/"), d);
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<RunManifest> {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            subcommand: self.subcommand.into(),
            manifest_hash: self.hash(),
            seed: self.config.seed,
            config: self.config.clone(),
            inputs: self.inputs,
            outputs: self.outputs,
            fingerprints: self.fingerprints,
            started_at_unix: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_time_secs: self.clock.elapsed().as_secs_f64(),
        };
        let mut raw = serde_json::to_vec_pretty(&manifest)?;
        raw.push(b'\n');
        write_atomic(&self.out.join(MANIFEST_FILE), &raw)?;
        log::info!("{} finished in {:.2} s; artifacts in {}", manifest.subcommand, manifest.wall_time_secs, self.out.display());
        Ok(manifest)
    }
}

pub fn stamp(value: Value, hash: &str) -> Value {
    match value {
        Value::Object(mut m) => {
            m.insert(HASH_FIELD.into(), Value::String(hash.into()));
            Value::Object(m)
        }
        other => serde_json::json!({ HASH_FIELD: hash, "data": other }),
    }
}

/// The manifest hash a JSON artifact was stamped with.
pub fn read_stamp(path: &Path) -> anyhow::Result<Option<String>> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
    Ok(v.get(HASH_FIELD).and_then(Value::as_str).map(str::to_string))
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, raw: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(raw)?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

pub fn digest_file(path: &Path) -> anyhow::Result<String> {
    let raw = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&raw)))
}

/// Digest over relative paths and contents of every file below `dir`, in sorted order.
pub fn digest_dir(dir: &Path) -> anyhow::Result<String> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, PathBuf)>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(&p, root, out)?;
            } else {
                let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
                out.push((rel, p));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files).with_context(|| format!("listing {}", dir.display()))?;
    files.sort();
    let mut h = Sha256::new();
    for (rel, p) in files {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(fs::read(&p).with_context(|| format!("reading {}", p.display()))?);
        h.update([0]);
    }
    Ok(hex(&h.finalize()))
}
