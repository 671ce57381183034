//! Multi-task training data scheduling and the reference SFT loss.
//!
//! Nothing here trains a model. [`upsample`] balances task sizes,
//! [`schedule`] lays examples out into mini-batches and writes the plan as a
//! [`BatchManifest`], and [`sft_loss`] evaluates the cross-entropy objective
//! from externally supplied token log-probabilities.

use std::collections::HashMap;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("reading dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("task id must be non-empty")]
    EmptyTaskId,
    #[error("task '{0}' has no examples")]
    EmptyDataset(String),
    #[error("task '{task}' example {index} has an empty target")]
    EmptyTarget { task: String, index: usize },
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("no datasets given")]
    NoDatasets,
    #[error("curriculum: {0}")]
    Curriculum(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("example has no token log-probabilities")]
    MissingLogprobs,
    #[error("token {index}: log-probability {value} is positive")]
    Positive { index: usize, value: f64 },
    #[error("token {index}: log-probability is not a number")]
    NotFinite { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub prompt: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

impl SftExample {
    pub fn new(prompt: impl Into<String>, target: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), target: target.into(), token_logprobs: None }
    }

    pub fn with_logprobs(mut self, lp: Vec<f64>) -> Self {
        self.token_logprobs = Some(lp);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_id: String,
    pub examples: Vec<SftExample>,
}

impl TaskDataset {
    pub fn new(task_id: impl Into<String>, examples: Vec<SftExample>) -> Result<Self, TrainingError> {
        let d = Self { task_id: task_id.into(), examples };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.task_id.is_empty() {
            return Err(TrainingError::EmptyTaskId);
        }
        if self.examples.is_empty() {
            return Err(TrainingError::EmptyDataset(self.task_id.clone()));
        }
        if let Some(index) = self.examples.iter().position(|e| e.target.is_empty()) {
            return Err(TrainingError::EmptyTarget { task: self.task_id.clone(), index });
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct Record {
    task_id: String,
    prompt: String,
    target: String,
    #[serde(default)]
    token_logprobs: Option<Vec<f64>>,
}

/// Reads line-delimited `{task_id, prompt, target}` records, grouping them
/// by task in order of first appearance. Blank lines are skipped.
pub fn read_datasets(reader: impl BufRead) -> Result<Vec<TaskDataset>, TrainingError> {
    let mut order: Vec<TaskDataset> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line)
            .map_err(|e| TrainingError::Record { line: i + 1, message: e.to_string() })?;
        if r.task_id.is_empty() {
            return Err(TrainingError::Record { line: i + 1, message: "empty task_id".into() });
        }
        if r.target.is_empty() {
            return Err(TrainingError::Record { line: i + 1, message: "empty target".into() });
        }
        let slot = *index.entry(r.task_id.clone()).or_insert_with(|| {
            order.push(TaskDataset { task_id: r.task_id.clone(), examples: Vec::new() });
            order.len() - 1
        });
        order[slot].examples.push(SftExample { prompt: r.prompt, target: r.target, token_logprobs: r.token_logprobs });
    }
    Ok(order)
}

/// Pads every task to the largest task's size by sampling its own examples
/// with replacement. Originals are kept, in order, ahead of the added ones.
pub fn upsample(datasets: &[TaskDataset], seed: u64) -> Vec<TaskDataset> {
    let target = datasets.iter().map(|d| d.examples.len()).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    datasets
        .iter()
        .map(|d| {
            let mut examples = d.examples.clone();
            let n = d.examples.len();
            if n > 0 {
                while examples.len() < target {
                    examples.push(d.examples[rng.random_range(0..n)].clone());
                }
            }
            TaskDataset { task_id: d.task_id.clone(), examples }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Every batch drawn from a single task.
    Homogeneous,
    /// Batches drawn from the pooled, shuffled examples.
    Heterogeneous,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BatchEntry {
    pub task_id: String,
    /// Index into that task's example list.
    pub example: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub mode: BatchMode,
    pub batch_size: usize,
    pub seed: u64,
    pub batches: Vec<Vec<BatchEntry>>,
}

impl BatchManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn entries(&self) -> impl Iterator<Item = &BatchEntry> {
        self.batches.iter().flatten()
    }
}

fn chunks(entries: Vec<BatchEntry>, b: usize) -> Vec<Vec<BatchEntry>> {
    entries.chunks(b).map(<[BatchEntry]>::to_vec).collect()
}

/// Lays every example out exactly once.
///
/// Heterogeneous: one seeded shuffle of the pooled examples, cut into
/// consecutive batches. Homogeneous: each task is shuffled and cut on its
/// own (its last batch may be short), then the batch slots are shuffled, so
/// larger tasks are proportionally more likely to come next. A curriculum,
/// when given, replaces the slot shuffle with an explicit task order.
pub fn schedule(
    datasets: &[TaskDataset],
    mode: BatchMode,
    batch_size: usize,
    seed: u64,
    curriculum: Option<&[String]>,
) -> Result<BatchManifest, TrainingError> {
    if batch_size == 0 {
        return Err(TrainingError::BatchSize);
    }
    if datasets.is_empty() {
        return Err(TrainingError::NoDatasets);
    }
    for d in datasets {
        d.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = |d: &TaskDataset| -> Vec<BatchEntry> {
        (0..d.examples.len()).map(|example| BatchEntry { task_id: d.task_id.clone(), example }).collect()
    };

    let batches = match mode {
        BatchMode::Heterogeneous => {
            let mut pool: Vec<BatchEntry> = datasets.iter().flat_map(entries).collect();
            pool.shuffle(&mut rng);
            chunks(pool, batch_size)
        }
        BatchMode::Homogeneous => {
            let per_task: Vec<Vec<Vec<BatchEntry>>> = datasets
                .iter()
                .map(|d| {
                    let mut e = entries(d);
                    e.shuffle(&mut rng);
                    chunks(e, batch_size)
                })
                .collect();
            match curriculum {
                Some(order) => {
                    let mut by_task: HashMap<&str, Vec<Vec<BatchEntry>>> = datasets
                        .iter()
                        .map(|d| d.task_id.as_str())
                        .zip(per_task)
                        .collect();
                    let mut out = Vec::new();
                    for task in order {
                        let b = by_task
                            .remove(task.as_str())
                            .ok_or_else(|| TrainingError::Curriculum(format!("unknown or repeated task '{task}'")))?;
                        out.extend(b);
                    }
                    if let Some(missing) = by_task.keys().next() {
                        return Err(TrainingError::Curriculum(format!("task '{missing}' is not listed")));
                    }
                    out
                }
                None => {
                    let mut slots: Vec<Vec<BatchEntry>> = per_task.into_iter().flatten().collect();
                    slots.shuffle(&mut rng);
                    slots
                }
            }
        }
    };
    Ok(BatchManifest { mode, batch_size, seed, batches })
}

/// Negative sum of target-token log-probabilities for one example.
pub fn sft_loss(token_logprobs: &[f64]) -> Result<f64, LossError> {
    let mut total = 0.0;
    for (index, &value) in token_logprobs.iter().enumerate() {
        if value.is_nan() || value == f64::INFINITY {
            return Err(LossError::NotFinite { index });
        }
        if value > 0.0 {
            return Err(LossError::Positive { index, value });
        }
        total -= value;
    }
    // avoid reporting -0.0 for certain predictions
    Ok(total + 0.0)
}

/// Sum of per-example losses.
pub fn corpus_loss<'a>(examples: impl IntoIterator<Item = &'a SftExample>) -> Result<f64, LossError> {
    examples.into_iter().try_fold(0.0, |acc, e| {
        let lp = e.token_logprobs.as_deref().ok_or(LossError::MissingLogprobs)?;
        Ok(acc + sft_loss(lp)?)
    })
}
