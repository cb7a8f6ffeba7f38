//! Contracts for the model under test and the support-conditioned reference
//! segmenter, plus the directory-based protocol for external processes.
//!
//! Work directory layout written by the orchestrator:
//!
//! ```text
//! support/images/NNNN.png   8-bit grayscale
//! support/labels/NNNN.png   0 / 255
//! query/images/NNNN.png     8-bit grayscale
//! ```
//!
//! The plugin is run with the work directory as its single argument and must
//! write `out/predictions/NNNN.png` (0 / 255) for every query index, then exit 0.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{io, BinaryMask, Image, LabeledPair};
use crate::error::{Result, SpeError};

/// Largest support set the reference segmenter accepts.
pub const MAX_SUPPORT: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub model_id: String,
    pub epoch: u32,
    pub locator: String,
}

impl CheckpointRef {
    pub fn new(model_id: impl Into<String>, epoch: u32, locator: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            epoch,
            locator: locator.into(),
        }
    }
}

/// Checkpoints of one training run, strictly increasing in epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointSeries {
    checkpoints: Vec<CheckpointRef>,
}

impl CheckpointSeries {
    pub fn new(checkpoints: Vec<CheckpointRef>) -> Result<Self> {
        if checkpoints.len() < 2 {
            return Err(SpeError::validation(format!(
                "a checkpoint series needs at least 2 checkpoints, got {}",
                checkpoints.len()
            )));
        }
        if let Some(w) = checkpoints.windows(2).find(|w| w[1].epoch <= w[0].epoch) {
            return Err(SpeError::validation(format!(
                "epochs must strictly increase ({} then {})",
                w[0].epoch, w[1].epoch
            )));
        }
        Ok(Self { checkpoints })
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn checkpoints(&self) -> &[CheckpointRef] {
        &self.checkpoints
    }
}

/// Produces masks for a checkpoint of the model under test.
pub trait CheckpointAdapter: Send + Sync {
    fn predict(&self, checkpoint: &CheckpointRef, images: &[Image]) -> Result<Vec<BinaryMask>>;
}

/// Runs `adapter` and checks it returned one correctly shaped mask per image.
pub fn predict_under_test(
    adapter: &dyn CheckpointAdapter,
    checkpoint: &CheckpointRef,
    images: &[Image],
) -> Result<Vec<BinaryMask>> {
    let masks = adapter.predict(checkpoint, images)?;
    check_outputs(&masks, images, &format!("checkpoint {}", checkpoint.locator))?;
    Ok(masks)
}

fn check_outputs(masks: &[BinaryMask], images: &[Image], who: &str) -> Result<()> {
    if masks.len() != images.len() {
        return Err(SpeError::Protocol(format!(
            "{who} returned {} masks for {} images",
            masks.len(),
            images.len()
        )));
    }
    for (i, (m, img)) in masks.iter().zip(images).enumerate() {
        if m.shape() != img.shape() {
            return Err(SpeError::Protocol(format!(
                "{who}: mask {i} is {:?}, image is {:?}",
                m.shape(),
                img.shape()
            )));
        }
    }
    Ok(())
}

/// Foreground wherever the input intensity is at least the threshold.
#[derive(Clone, Copy, Debug)]
pub struct ThresholdAdapter {
    pub threshold: f64,
}

impl Default for ThresholdAdapter {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

impl CheckpointAdapter for ThresholdAdapter {
    fn predict(&self, _checkpoint: &CheckpointRef, images: &[Image]) -> Result<Vec<BinaryMask>> {
        Ok(images
            .iter()
            .map(|img| BinaryMask::threshold(img, self.threshold))
            .collect())
    }
}

/// Adapters looked up by name.
#[derive(Default)]
pub struct AdapterRegistry {
    adapters: BTreeMap<String, Box<dyn CheckpointAdapter>>,
}

impl AdapterRegistry {
    /// Registry holding the builtin `threshold` adapter.
    pub fn with_builtins() -> Self {
        let mut r = Self::default();
        r.register("threshold", Box::new(ThresholdAdapter::default()));
        r
    }

    pub fn register(&mut self, name: impl Into<String>, adapter: Box<dyn CheckpointAdapter>) {
        self.adapters.insert(name.into(), adapter);
    }

    pub fn get(&self, name: &str) -> Result<&dyn CheckpointAdapter> {
        self.adapters
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| SpeError::validation(format!("no adapter registered as {name:?}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.adapters.keys().map(String::as_str)
    }
}

/// Image/label pairs conditioning the reference segmenter.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportSet {
    pairs: Vec<LabeledPair>,
}

impl SupportSet {
    pub fn new(pairs: Vec<LabeledPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(SpeError::validation("support set is empty"));
        }
        if pairs.len() > MAX_SUPPORT {
            return Err(SpeError::validation(format!(
                "support set has {} pairs, maximum is {MAX_SUPPORT}",
                pairs.len()
            )));
        }
        let shape = pairs[0].image.shape();
        if let Some(p) = pairs.iter().find(|p| p.image.shape() != shape) {
            return Err(SpeError::validation(format!(
                "support pair {} is {:?}, expected {shape:?}",
                p.id,
                p.image.shape()
            )));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[LabeledPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pairs[0].image.shape()
    }
}

/// Support-conditioned segmenter filling the reference role.
pub trait ReferenceSegmenter: Send + Sync {
    fn infer(&self, support: &SupportSet, queries: &[Image]) -> Result<Vec<BinaryMask>>;
}

/// Validates inputs, runs the plugin, and checks its outputs.
pub fn reference_infer(
    plugin: &dyn ReferenceSegmenter,
    support: &SupportSet,
    queries: &[Image],
) -> Result<Vec<BinaryMask>> {
    if queries.is_empty() {
        return Err(SpeError::validation("no query images"));
    }
    let shape = support.shape();
    if let Some(i) = queries.iter().position(|q| q.shape() != shape) {
        return Err(SpeError::validation(format!(
            "query {i} is {:?} but the support set is {shape:?}",
            queries[i].shape()
        )));
    }
    let masks = plugin.infer(support, queries)?;
    check_outputs(&masks, queries, "reference segmenter")?;
    Ok(masks)
}

/// SHA-256 over shapes and bits of a mask sequence, hex encoded.
pub fn masks_digest(masks: &[BinaryMask]) -> String {
    let mut hasher = Sha256::new();
    for m in masks {
        hasher.update((m.height() as u64).to_le_bytes());
        hasher.update((m.width() as u64).to_le_bytes());
        let packed: Vec<u8> = m
            .bits()
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, b)| acc | ((*b as u8) << i))
            })
            .collect();
        hasher.update(&packed);
    }
    hex::encode(hasher.finalize())
}

fn index_name(i: usize) -> String {
    format!("{i:04}.png")
}

/// Writes the support and query trees of the protocol into `dir`.
pub fn write_work_dir(dir: &Path, support: Option<&SupportSet>, queries: &[Image]) -> Result<()> {
    if let Some(support) = support {
        for (i, p) in support.pairs().iter().enumerate() {
            io::write_image(&dir.join("support/images").join(index_name(i)), &p.image)?;
            io::write_mask(&dir.join("support/labels").join(index_name(i)), &p.label)?;
        }
    }
    for (i, q) in queries.iter().enumerate() {
        io::write_image(&dir.join("query/images").join(index_name(i)), q)?;
    }
    std::fs::create_dir_all(dir.join("out/predictions"))?;
    Ok(())
}

/// Reads `out/predictions/NNNN.png` for `n` queries. Missing files are a
/// reference error, undecodable ones a protocol error.
pub fn read_predictions(dir: &Path, n: usize) -> Result<Vec<BinaryMask>> {
    (0..n)
        .map(|i| {
            let path = dir.join("out/predictions").join(index_name(i));
            if !path.exists() {
                return Err(SpeError::Reference {
                    reason: format!("missing output {}", path.display()),
                    stderr: String::new(),
                });
            }
            io::read_mask(&path).map_err(|e| SpeError::Protocol(e.to_string()))
        })
        .collect()
}

/// External command speaking the directory protocol.
#[derive(Debug)]
pub struct ExternalPlugin {
    command: Vec<String>,
    timeout: Duration,
    work_root: Option<PathBuf>,
    lock: Mutex<()>,
}

/// Output of one external invocation.
struct RunOutcome {
    success: bool,
    code: Option<i32>,
    stderr: String,
}

impl ExternalPlugin {
    pub fn new(command: Vec<String>, timeout: Duration) -> Result<Self> {
        if command.is_empty() {
            return Err(SpeError::validation("plugin command is empty"));
        }
        Ok(Self {
            command,
            timeout,
            work_root: None,
            lock: Mutex::new(()),
        })
    }

    /// Places per-call work directories under `root` instead of the system temp dir.
    pub fn with_work_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.work_root = Some(root.into());
        self
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    fn work_dir(&self) -> Result<tempfile::TempDir> {
        let dir = match &self.work_root {
            Some(root) => {
                std::fs::create_dir_all(root)?;
                tempfile::Builder::new().prefix("spe-work-").tempdir_in(root)?
            }
            None => tempfile::Builder::new().prefix("spe-work-").tempdir()?,
        };
        Ok(dir)
    }

    fn run(&self, dir: &Path, extra_args: &[&str]) -> Result<RunOutcome> {
        let stderr_path = dir.join("stderr.log");
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg(dir)
            .args(extra_args)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(File::create(&stderr_path)?)
            .spawn()
            .map_err(|e| SpeError::Reference {
                reason: format!("cannot start {:?}: {e}", self.command[0]),
                stderr: String::new(),
            })?;
        let started = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if started.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let stderr = std::fs::read_to_string(&stderr_path).unwrap_or_default();
        match status {
            None => Err(SpeError::Reference {
                reason: format!("timed out after {:?}", self.timeout),
                stderr,
            }),
            Some(s) => Ok(RunOutcome {
                success: s.success(),
                code: s.code(),
                stderr,
            }),
        }
    }
}

impl ReferenceSegmenter for ExternalPlugin {
    fn infer(&self, support: &SupportSet, queries: &[Image]) -> Result<Vec<BinaryMask>> {
        let _serialized = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let dir = self.work_dir()?;
        write_work_dir(dir.path(), Some(support), queries)?;
        let outcome = self.run(dir.path(), &[])?;
        if !outcome.success {
            return Err(SpeError::Reference {
                reason: format!("plugin exited with status {:?}", outcome.code),
                stderr: outcome.stderr,
            });
        }
        read_predictions(dir.path(), queries.len())
    }
}

/// Model under test behind an external command, run as `<cmd> <workdir> <locator>`.
/// Only `query/images` is populated.
#[derive(Debug)]
pub struct CommandAdapter {
    plugin: ExternalPlugin,
}

impl CommandAdapter {
    pub fn new(command: Vec<String>, timeout: Duration) -> Result<Self> {
        Ok(Self {
            plugin: ExternalPlugin::new(command, timeout)?,
        })
    }
}

impl CheckpointAdapter for CommandAdapter {
    fn predict(&self, checkpoint: &CheckpointRef, images: &[Image]) -> Result<Vec<BinaryMask>> {
        let _serialized = self.plugin.lock.lock().unwrap_or_else(|e| e.into_inner());
        let dir = self.plugin.work_dir()?;
        write_work_dir(dir.path(), None, images)?;
        let plugin_err = |reason: String| SpeError::Plugin {
            locator: checkpoint.locator.clone(),
            reason,
        };
        let outcome = self
            .plugin
            .run(dir.path(), &[&checkpoint.locator])
            .map_err(|e| plugin_err(e.to_string()))?;
        if !outcome.success {
            return Err(plugin_err(format!(
                "adapter exited with status {:?}: {}",
                outcome.code,
                outcome.stderr.trim()
            )));
        }
        read_predictions(dir.path(), images.len()).map_err(|e| match e {
            SpeError::Reference { reason, .. } => SpeError::Protocol(reason),
            other => other,
        })
    }
}
