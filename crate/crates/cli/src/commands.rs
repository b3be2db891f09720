use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use jplrdl_core::datasets::{
    apply_corruption_with_patch, load_labels, load_matrix, save_dataset, save_labels, save_matrix,
};
use jplrdl_core::pipeline::{build_graphs, classify, low_rank_representations};
use jplrdl_core::{
    load_dataset, load_model, save_model, split, CorruptionSpec, Error, LabeledDataset, Matrix,
    Model, TrainConfig, Vector,
};
use serde_json::Value;

use crate::report::*;
use crate::run_config::RunConfig;
use crate::{Cli, CliError, Command, Common, DataArgs, DiagWhich};

const DEFAULT_OUT: &str = "jplrdl-out";

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.common.config.as_deref())?;
    let ctx = Context {
        out: cli
            .common
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        common: cli.common,
        cfg,
    };
    match cli.command {
        Command::Train { data, sets } => ctx.train(&data, &sets),
        Command::Eval { model, data } => ctx.eval(model, &data),
        Command::Classify { model, matrix } => ctx.classify(model, matrix),
        Command::Corrupt {
            matrix,
            kind,
            fraction,
            image_shape,
            value_max,
            patch,
            output,
        } => {
            let kind = kind
                .map(Into::into)
                .or(ctx.cfg.corruption.and_then(|c| c.kind))
                .ok_or_else(|| usage("corrupt needs --kind or corruption.kind in the config"))?;
            let fraction = fraction
                .or(ctx.cfg.corruption.and_then(|c| c.fraction))
                .ok_or_else(|| {
                    usage("corrupt needs --fraction or corruption.fraction in the config")
                })?;
            let spec = CorruptionSpec {
                kind,
                fraction,
                seed: ctx.common.seed.or(ctx.cfg.seed).unwrap_or(0),
            };
            ctx.corrupt(
                &matrix,
                spec,
                image_shape,
                value_max,
                patch.as_deref(),
                output,
            )
        }
        Command::Split { data, per_class } => ctx.split(&data, per_class),
        Command::Diag { which, data, sets } => ctx.diag(which, &data, &sets),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

struct Context {
    common: Common,
    cfg: RunConfig,
    out: PathBuf,
}

impl Context {
    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| Error::Io {
            path: display(&self.out),
            source: e,
        })?;
        Ok(&self.out)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.common.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn model_path(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.cfg.model.clone())
            .unwrap_or_else(|| self.out.join("model.bin"))
    }

    /// Labeled data from flags, then the config's `train_*` paths.
    fn training_files(&self, data: &DataArgs) -> Result<Option<LabeledDataset>> {
        let Some(matrix) = data
            .matrix
            .clone()
            .or_else(|| self.cfg.train_matrix.clone())
        else {
            return Ok(None);
        };
        let labels = data
            .labels
            .clone()
            .or_else(|| self.cfg.train_labels.clone())
            .ok_or_else(|| usage("a labels file is required: pass --labels or set train_labels"))?;
        let opts = self.cfg.load_options(data.image_shape, data.value_max);
        Ok(Some(load_dataset(&matrix, &labels, opts)?))
    }

    fn require_training_files(&self, data: &DataArgs) -> Result<LabeledDataset> {
        self.training_files(data)?
            .ok_or_else(|| usage("input data required: pass --matrix/--labels or set train_matrix"))
    }

    fn train(&self, data: &DataArgs, sets: &[(String, Value)]) -> Result<()> {
        let start = Instant::now();
        let tc = self.cfg.train_config(sets, self.common.seed)?;
        let out = self.out_dir()?;
        let (ds, source) = match (self.training_files(data)?, &self.cfg.synthetic) {
            (Some(ds), _) => (ds, "files"),
            (None, Some(spec)) => {
                let (train, test) = spec.generate()?;
                save_dataset(&train, &out.join("train_matrix.txt"), &out.join("train_labels.txt"))?;
                save_dataset(&test, &out.join("test_matrix.txt"), &out.join("test_labels.txt"))?;
                (train, "synthetic")
            }
            (None, None) => {
                return Err(usage(
                    "no training data: pass --matrix/--labels or set train_matrix or synthetic in the config",
                ))
            }
        };
        let load_secs = start.elapsed().as_secs_f64();

        let clock = Instant::now();
        let (model, rep) = jplrdl_core::train(&ds, &tc)?;
        let train_secs = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let model_path = self.model_path(None);
        save_model(&model, &model_path)?;
        let save_secs = clock.elapsed().as_secs_f64();

        let offsets = ds.class_offsets();
        let final_j = rep.objective_trace.last().copied().unwrap_or(f64::NAN);
        let metrics = TrainMetrics {
            command: "train",
            version: env!("CARGO_PKG_VERSION"),
            data: DataSummary {
                source,
                samples: ds.len(),
                dim: ds.dim(),
                classes: ds.num_classes(),
                class_sizes: offsets.windows(2).map(|w| w[1] - w[0]).collect(),
            },
            projected_dim: tc.projected_dim(ds.dim()),
            config: tc,
            model_path: display(&model_path),
            objective_trace: rep.objective_trace,
            converged: rep.converged,
            alm_iterations: rep.alm_iterations,
            timings: TrainTimings {
                load_secs,
                setup: rep.setup_timing,
                iterations: rep.per_iteration_timings,
                train_secs,
                save_secs,
                total_secs: start.elapsed().as_secs_f64(),
            },
            warnings: rep.warnings,
        };
        let metrics_path = out.join("metrics.json");
        write_json(&metrics_path, &metrics)?;
        self.say(format!(
            "trained on {} samples ({} classes) in {:.2}s; {} iterations, final objective {:e}; {} warning(s)",
            ds.len(),
            ds.num_classes(),
            train_secs,
            metrics.objective_trace.len(),
            final_j,
            metrics.warnings.len()
        ));
        self.say(format!(
            "wrote {} and {}",
            model_path.display(),
            metrics_path.display()
        ));
        Ok(())
    }

    fn load_model_checked(&self, path: &Path, x: &Matrix) -> Result<Model> {
        let model = load_model(path)?;
        if x.ncols() == 0 {
            return Err(Error::Validation("test set is empty".into()).into());
        }
        if x.nrows() != model.input_dim() {
            return Err(Error::Validation(format!(
                "test samples have dimension {} but the model expects {}",
                x.nrows(),
                model.input_dim()
            ))
            .into());
        }
        Ok(model)
    }

    /// Test data from flags, the config's `test_*` paths, or the synthetic test split.
    fn test_data(&self, data: &DataArgs) -> Result<(Matrix, Vec<usize>)> {
        let matrix = data.matrix.clone().or_else(|| self.cfg.test_matrix.clone());
        let labels = data.labels.clone().or_else(|| self.cfg.test_labels.clone());
        match (matrix, labels, &self.cfg.synthetic) {
            (Some(m), Some(l), _) => Ok((load_matrix(&m)?, load_labels(&l)?)),
            (None, None, Some(spec)) => {
                // Input column order is the generated (label-sorted) order.
                let test = spec.generate()?.1;
                Ok((test.x, test.labels))
            }
            (Some(_), None, _) => Err(usage("eval needs --labels or test_labels")),
            _ => Err(usage(
                "eval needs --matrix and --labels (or test_matrix/test_labels)",
            )),
        }
    }

    fn eval(&self, model: Option<PathBuf>, data: &DataArgs) -> Result<()> {
        let start = Instant::now();
        let (x, labels) = self.test_data(data)?;
        let model_path = self.model_path(model);
        let model = self.load_model_checked(&model_path, &x)?;
        if labels.len() != x.ncols() {
            return Err(Error::Validation(format!(
                "{} labels for {} test samples",
                labels.len(),
                x.ncols()
            ))
            .into());
        }
        let k = model.num_classes();
        if let Some(bad) = labels.iter().find(|&&l| l == 0 || l > k) {
            return Err(Error::Validation(format!(
                "test label {bad} outside the model's classes 1..={k}"
            ))
            .into());
        }
        let load_secs = start.elapsed().as_secs_f64();
        let clock = Instant::now();
        let predicted = predict(&x, &model)?.0;
        let classify_secs = clock.elapsed().as_secs_f64();
        let report = EvalReport::new(
            display(&model_path),
            k,
            &labels,
            &predicted,
            EvalTimings {
                load_secs,
                classify_secs,
                total_secs: start.elapsed().as_secs_f64(),
            },
        );
        let path = self.out_dir()?.join("eval.json");
        write_json(&path, &report)?;
        if !self.common.quiet {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("reports serialize")
            );
        }
        Ok(())
    }

    fn classify(&self, model: Option<PathBuf>, matrix: Option<PathBuf>) -> Result<()> {
        let matrix = matrix
            .or_else(|| self.cfg.test_matrix.clone())
            .ok_or_else(|| usage("classify needs --matrix or test_matrix"))?;
        let x = load_matrix(&matrix)?;
        let model_path = self.model_path(model);
        let model = self.load_model_checked(&model_path, &x)?;
        let (predictions, residuals) = predict(&x, &model)?;
        let out = self.out_dir()?;
        let labels_path = out.join("predictions.txt");
        save_labels(&labels_path, &predictions)?;
        let report = ClassifyReport {
            command: "classify",
            model_path: display(&model_path),
            samples: predictions.len(),
            predictions,
            residuals,
            predictions_file: display(&labels_path),
        };
        write_json(&out.join("predictions.json"), &report)?;
        self.say(format!(
            "classified {} samples; wrote {}",
            report.samples,
            labels_path.display()
        ));
        Ok(())
    }

    fn corrupt(
        &self,
        input: &Path,
        spec: CorruptionSpec,
        image_shape: Option<(usize, usize)>,
        value_max: Option<f64>,
        patch: Option<&Path>,
        output: Option<PathBuf>,
    ) -> Result<()> {
        let x = load_matrix(input)?;
        let opts = self.cfg.load_options(image_shape, value_max);
        let n = x.ncols();
        let ds = LabeledDataset::new(
            x,
            vec![1; n],
            opts.image_shape,
            opts.value_max.unwrap_or(255.0),
        )?;
        let patch = patch.map(load_matrix).transpose()?;
        let corrupted = apply_corruption_with_patch(&ds, &spec, patch.as_ref())?;
        let out = self.out_dir()?;
        let output = output.unwrap_or_else(|| {
            let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("txt");
            out.join(format!("corrupted.{ext}"))
        });
        save_matrix(&output, &corrupted.x)?;
        let changed =
            ds.x.iter()
                .zip(corrupted.x.iter())
                .filter(|(a, b)| a != b)
                .count();
        let report = CorruptReport {
            command: "corrupt",
            input: display(input),
            output: display(&output),
            kind: spec.kind,
            fraction: spec.fraction,
            seed: spec.seed,
            samples: n,
            dim: ds.dim(),
            entries_changed: changed,
        };
        write_json(&out.join("corrupt.json"), &report)?;
        self.say(format!(
            "changed {changed} entries; wrote {}",
            output.display()
        ));
        Ok(())
    }

    fn split(&self, data: &DataArgs, per_class: Option<usize>) -> Result<()> {
        let ds = self.require_training_files(data)?;
        let per_class = per_class
            .or(self.cfg.per_class_train)
            .ok_or_else(|| usage("split needs --per-class or per_class_train"))?;
        let seed = self.common.seed.or(self.cfg.seed).unwrap_or(0);
        let (train, test) = split(&ds, per_class, seed)?;
        let out = self.out_dir()?;
        let files = [
            "train_matrix.txt",
            "train_labels.txt",
            "test_matrix.txt",
            "test_labels.txt",
        ]
        .map(|f| out.join(f));
        save_dataset(&train, &files[0], &files[1])?;
        save_dataset(&test, &files[2], &files[3])?;
        let report = SplitReport {
            command: "split",
            seed,
            per_class_train: per_class,
            train_columns: train.original_index.clone(),
            test_columns: test.original_index.clone(),
            files: files.iter().map(|f| display(f)).collect(),
        };
        write_json(&out.join("split.json"), &report)?;
        self.say(format!(
            "{} training and {} test samples written to {}",
            train.len(),
            test.len(),
            out.display()
        ));
        Ok(())
    }

    fn diag(&self, which: DiagWhich, data: &DataArgs, sets: &[(String, Value)]) -> Result<()> {
        let ds = self.require_training_files(data)?;
        let tc: TrainConfig = self.cfg.train_config(sets, None)?;
        let ds = if tc.normalize_samples {
            ds.with_unit_columns()
        } else {
            ds
        };
        let out = self.out_dir()?;
        let (lr, rpca) = low_rank_representations(&ds, &tc)?;
        let detail = match which {
            DiagWhich::Rpca => {
                let mut classes = Vec::new();
                for (i, (r, range)) in rpca.iter().zip(ds.class_ranges()).enumerate() {
                    let l = out.join(format!("L_class{}.txt", i + 1));
                    let e = out.join(format!("E_class{}.txt", i + 1));
                    save_matrix(&l, &r.low_rank)?;
                    save_matrix(&e, &r.sparse)?;
                    classes.push(RpcaClassReport {
                        label: i + 1,
                        samples: range.len(),
                        iterations: r.iterations,
                        converged: r.converged,
                        final_residual: r.final_residual,
                        low_rank_file: display(&l),
                        sparse_file: display(&e),
                    });
                }
                DiagDetail::Rpca { classes }
            }
            DiagWhich::Graphs => {
                let (wc, wp, laps) = build_graphs(&lr, &ds.labels, &tc)?;
                let mut files = Vec::new();
                for (name, m) in [
                    ("Wc.txt", &wc.w),
                    ("Wp.txt", &wp.w),
                    ("Lc.txt", &laps.l_c),
                    ("Lp_norm.txt", &laps.l_p_norm),
                ] {
                    let path = out.join(name);
                    save_matrix(&path, m)?;
                    files.push(display(&path));
                }
                let warnings = wc.warnings.iter().chain(&wp.warnings).cloned().collect();
                DiagDetail::Graphs { files, warnings }
            }
        };
        let report = DiagReport {
            command: "diag",
            column_order: ds.original_index.clone(),
            normalized: tc.normalize_samples,
            detail,
        };
        write_json(&out.join("diag.json"), &report)?;
        self.say(format!("wrote diagnostics to {}", out.display()));
        Ok(())
    }
}

/// Labels and class residuals for every column.
fn predict(x: &Matrix, model: &Model) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let mut labels = Vec::with_capacity(x.ncols());
    let mut residuals = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let c = classify(&Vector::from(col), model)?;
        labels.push(c.label);
        residuals.push(c.residuals);
    }
    Ok((labels, residuals))
}
