//! JSON reports written by the commands. `docs/reports.schema.json` describes them.

use std::fs;
use std::path::Path;

use jplrdl_core::pipeline::{IterationTiming, SetupTiming, TrainWarning};
use jplrdl_core::{CorruptionKind, Error, TrainConfig};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct DataSummary {
    pub source: &'static str,
    pub samples: usize,
    pub dim: usize,
    pub classes: usize,
    pub class_sizes: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct TrainTimings {
    pub load_secs: f64,
    pub setup: SetupTiming,
    pub iterations: Vec<IterationTiming>,
    pub train_secs: f64,
    pub save_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Serialize)]
pub struct TrainMetrics {
    pub command: &'static str,
    pub version: &'static str,
    pub data: DataSummary,
    pub config: TrainConfig,
    pub projected_dim: usize,
    pub model_path: String,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub alm_iterations: Vec<Vec<usize>>,
    pub warnings: Vec<TrainWarning>,
    pub timings: TrainTimings,
}

#[derive(Debug, Serialize)]
pub struct ClassAccuracy {
    pub label: usize,
    pub samples: usize,
    pub correct: usize,
    /// `None` when the class has no test samples.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct EvalTimings {
    pub load_secs: f64,
    pub classify_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub command: &'static str,
    pub model_path: String,
    pub samples: usize,
    pub classes: usize,
    pub accuracy: f64,
    /// Average over the classes present in the test set.
    pub mean_per_class_accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    /// `confusion[t][p]` counts samples of label `t+1` predicted as `p+1`.
    pub confusion: Vec<Vec<usize>>,
    pub timings: EvalTimings,
}

impl EvalReport {
    pub fn new(
        model_path: String,
        classes: usize,
        truth: &[usize],
        predicted: &[usize],
        timings: EvalTimings,
    ) -> Self {
        let mut confusion = vec![vec![0; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t - 1][p - 1] += 1;
        }
        let per_class: Vec<ClassAccuracy> = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let samples: usize = row.iter().sum();
                let correct = row[i];
                ClassAccuracy {
                    label: i + 1,
                    samples,
                    correct,
                    accuracy: (samples > 0).then(|| correct as f64 / samples as f64),
                }
            })
            .collect();
        let present: Vec<f64> = per_class.iter().filter_map(|c| c.accuracy).collect();
        let correct: usize = per_class.iter().map(|c| c.correct).sum();
        EvalReport {
            command: "eval",
            model_path,
            samples: truth.len(),
            classes,
            accuracy: correct as f64 / truth.len() as f64,
            mean_per_class_accuracy: present.iter().sum::<f64>() / present.len() as f64,
            per_class,
            confusion,
            timings,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ClassifyReport {
    pub command: &'static str,
    pub model_path: String,
    pub samples: usize,
    /// 1-based labels in input column order.
    pub predictions: Vec<usize>,
    /// Per-sample class residuals, in label order.
    pub residuals: Vec<Vec<f64>>,
    pub predictions_file: String,
}

#[derive(Debug, Serialize)]
pub struct CorruptReport {
    pub command: &'static str,
    pub input: String,
    pub output: String,
    pub kind: CorruptionKind,
    pub fraction: f64,
    pub seed: u64,
    pub samples: usize,
    pub dim: usize,
    pub entries_changed: usize,
}

#[derive(Debug, Serialize)]
pub struct SplitReport {
    pub command: &'static str,
    pub seed: u64,
    pub per_class_train: usize,
    /// 0-based column positions in the input matrix.
    pub train_columns: Vec<usize>,
    pub test_columns: Vec<usize>,
    pub files: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct RpcaClassReport {
    pub label: usize,
    pub samples: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub low_rank_file: String,
    pub sparse_file: String,
}

#[derive(Debug, Serialize)]
#[serde(tag = "which", rename_all = "lowercase")]
pub enum DiagDetail {
    Rpca {
        classes: Vec<RpcaClassReport>,
    },
    Graphs {
        files: Vec<String>,
        warnings: Vec<String>,
    },
}

#[derive(Debug, Serialize)]
pub struct DiagReport {
    pub command: &'static str,
    /// Input column of each exported row/column, 0-based; exports are sorted by label.
    pub column_order: Vec<usize>,
    pub normalized: bool,
    #[serde(flatten)]
    pub detail: DiagDetail,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}
