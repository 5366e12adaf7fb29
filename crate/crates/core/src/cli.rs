//! Command-line front end. `DICONSTRUCT_SEED` overrides the master seed of
//! every command that has one.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::counterfactual::PropagationMode;
use crate::dag::DagSpec;
use crate::data::{csv_concept_names, load_csv, split, synth_generate, write_csv, Dataset, Splits, SynthSpec};
use crate::error::{Error, Result};
use crate::export::{explain_rows, export_dot, export_explanations_json};
use crate::metrics::{completeness_score, MetricReport};
use crate::model::ExplainerModel;
use crate::persist::{load_model, save_model};
use crate::trainer::{bootstrap_select, fit, random_search, PoolEntry, SearchSpace, TrainConfig, TrainedRun};

pub const SEED_ENV: &str = "DICONSTRUCT_SEED";

#[derive(Debug, Parser)]
#[command(name = "diconstruct", version, about = "Concept-based causal explainer for black-box scores")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one explainer and write its artifact.
    Train {
        /// A CSV file, or a synthetic benchmark spec (`.toml`).
        #[arg(long)]
        data: PathBuf,
        /// Edge-list file or `trivial`. Defaults to the ground-truth DAG for
        /// synthetic data and to the trivial DAG for CSV data.
        #[arg(long)]
        dag: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON file for the validation and test metrics.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Random hyperparameter search; writes `run_NNN.model` and `run_NNN.json`.
    Search {
        #[arg(long)]
        space: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Metrics of a model on a CSV file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Explanation documents for selected rows.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated row indices.
        #[arg(long, value_delimiter = ',', required = true)]
        rows: Vec<usize>,
        #[arg(long, default_value_t = PropagationMode::Fixed)]
        mode: PropagationMode,
        #[arg(long)]
        json: PathBuf,
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// One counterfactual `do(C := a)` on one row, printed as JSON.
    Intervene {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        row: usize,
        #[arg(long)]
        concept: String,
        /// 0 intervenes at the low percentile, 1 at the high one.
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
        a: u8,
        #[arg(long, default_value_t = PropagationMode::Fixed)]
        mode: PropagationMode,
    },
    /// Bootstrap model selection over the `run_*.json` files of a search.
    Bootstrap {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 20)]
        draw: usize,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic benchmark as CSV splits plus its ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    write_text(path, &text)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn read_synth_spec(path: &Path) -> Result<SynthSpec> {
    let spec: SynthSpec =
        toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    spec.validate()?;
    Ok(spec)
}

fn is_synth_spec(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"))
}

/// Training inputs: splits plus the DAG that goes with them.
pub fn prepare_data(data: &Path, dag: Option<&str>, cfg: &TrainConfig) -> Result<(Splits, DagSpec)> {
    let (splits, default_dag) = if is_synth_spec(data) {
        let out = synth_generate(&read_synth_spec(data)?)?;
        (out.splits, Some(out.dag))
    } else {
        let names = csv_concept_names(data)?;
        let ds = load_csv(data, &names)?;
        (split(&ds, cfg.split, cfg.seed)?, None)
    };
    let names = splits.train.concept_names.clone();
    let dag = match dag {
        Some("trivial") => DagSpec::trivial(&names)?,
        Some(path) => DagSpec::parse(&read_text(Path::new(path))?, &names)?,
        None => match default_dag {
            Some(d) => d,
            None => DagSpec::trivial(&names)?,
        },
    };
    if let Err(v) = dag.validate() {
        return Err(Error::Config(format!("invalid DAG: {v:?}")));
    }
    Ok((splits, dag))
}

fn load_for_model(model: &ExplainerModel, data: &Path) -> Result<Dataset> {
    load_csv(data, model.dag.concepts())
}

#[derive(Debug, Serialize)]
struct TrainReport<'a> {
    seed: u64,
    best_epoch: usize,
    selection_score: f64,
    validation: &'a MetricReport,
    test: Option<MetricReport>,
}

fn test_report(run: &TrainedRun, splits: &Splits) -> Result<Option<MetricReport>> {
    if splits.test.is_empty() {
        Ok(None)
    } else {
        run.model.evaluate(&splits.test).map(Some)
    }
}

/// Metrics recorded per search run, in the form the bootstrap reads.
pub fn run_summary(run: &TrainedRun, test: Option<&MetricReport>) -> PoolEntry {
    let mut metrics = std::collections::BTreeMap::new();
    metrics.insert("val_fidelity".to_string(), run.validation.fidelity);
    metrics.insert("val_concept_accuracy".to_string(), run.validation.concept_accuracy);
    if let Some(t) = test {
        metrics.insert("test_fidelity".to_string(), t.fidelity);
        metrics.insert("test_concept_accuracy".to_string(), t.concept_accuracy);
    }
    PoolEntry {
        selection_score: run.selection_score,
        metrics,
    }
}

#[derive(Debug, Serialize)]
struct RunFile {
    #[serde(flatten)]
    entry: PoolEntry,
    config: TrainConfig,
}

#[derive(Debug, Serialize)]
struct InterventionReport {
    row: usize,
    concept: String,
    a: u8,
    value: f64,
    mode: PropagationMode,
    factual_score: f64,
    counterfactual_score: f64,
    tce: f64,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = seed_override()?;
    match cli.command {
        Command::Train {
            data,
            dag,
            config,
            out,
            report,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::from_file(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.validate()?;
            }
            let (splits, dag) = prepare_data(&data, dag.as_deref(), &cfg)?;
            let run = fit(&splits, &dag, &cfg)?;
            save_model(&run.model, &out)?;
            let test = test_report(&run, &splits)?;
            println!(
                "best epoch {} of {}: validation fidelity {:.4}, concept accuracy {:.4}",
                run.model.metadata.epoch, cfg.epochs, run.validation.fidelity, run.validation.concept_accuracy
            );
            if let Some(p) = report {
                write_json(
                    &p,
                    &TrainReport {
                        seed: cfg.seed,
                        best_epoch: run.model.metadata.epoch,
                        selection_score: run.selection_score,
                        validation: &run.validation,
                        test,
                    },
                )?;
            }
        }
        Command::Search { space, n, out_dir } => {
            let mut sp = SearchSpace::from_file(&space)?;
            if let Some(s) = seed {
                sp.seed = s;
            }
            let base = space.parent().unwrap_or(Path::new("."));
            let data = sp
                .data
                .as_deref()
                .ok_or_else(|| Error::Config("search space needs a `data` key".into()))?;
            let data = resolve(base, data);
            let dag = sp.dag.as_deref().map(|d| {
                if d == "trivial" {
                    d.to_owned()
                } else {
                    resolve(base, d).to_string_lossy().into_owned()
                }
            });
            let first = sp.sample_configs(1)?.remove(0);
            let (splits, dag) = prepare_data(&data, dag.as_deref(), &first)?;
            create_dir(&out_dir)?;
            let runs = random_search(&sp, n, &splits, &dag)?;
            for (i, run) in runs.iter().enumerate() {
                let test = test_report(run, &splits)?;
                save_model(&run.model, out_dir.join(format!("run_{i:03}.model")))?;
                write_json(
                    &out_dir.join(format!("run_{i:03}.json")),
                    &RunFile {
                        entry: run_summary(run, test.as_ref()),
                        config: run.model.config.clone(),
                    },
                )?;
            }
            println!("{} runs written to {}", runs.len(), out_dir.display());
        }
        Command::Evaluate { model, data, report } => {
            let model = load_model(&model)?;
            let ds = load_for_model(&model, &data)?;
            let mut r = model.evaluate(&ds)?;
            r.completeness = completeness_score(ds.concepts.view(), &ds.scores).ok();
            write_json(&report, &r)?;
            println!("fidelity {:.4}, concept accuracy {:.4}", r.fidelity, r.concept_accuracy);
        }
        Command::Explain {
            model,
            data,
            rows,
            mode,
            json,
            dot,
        } => {
            let model = load_model(&model)?;
            let ds = load_for_model(&model, &data)?;
            let docs = explain_rows(&model, &ds, &rows, mode)?;
            write_text(&json, &export_explanations_json(&docs))?;
            if let Some(p) = dot {
                let text: String = docs.iter().map(export_dot).collect();
                write_text(&p, &text)?;
            }
        }
        Command::Intervene {
            model,
            data,
            row,
            concept,
            a,
            mode,
        } => {
            let model = load_model(&model)?;
            let k = model.concept_index(&concept)?;
            let ds = load_for_model(&model, &data)?;
            let inst = model.abduct_row(&ds, row)?;
            let table = model.intervention_table()?;
            let factual = inst.evaluate(&model.dag, &[])?;
            let cf = crate::counterfactual::counterfactual_score(&model.dag, table, &inst, &factual, k, a == 1, mode)?;
            let rep = InterventionReport {
                row,
                concept,
                a,
                value: table.value(k, a == 1)?,
                mode,
                factual_score: factual.score,
                counterfactual_score: cf,
                tce: cf - factual.score,
            };
            println!("{}", serde_json::to_string_pretty(&rep).expect("serialisable"));
        }
        Command::Bootstrap {
            runs,
            trials,
            draw,
            report,
            seed: cli_seed,
        } => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&runs)
                .map_err(|e| Error::io(&runs, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("run_") && n.ends_with(".json"))
                })
                .collect();
            files.sort();
            let pool = files
                .iter()
                .map(|p| {
                    serde_json::from_str::<PoolEntry>(&read_text(p)?)
                        .map_err(|e| Error::Data(format!("{}: {e}", p.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            let r = bootstrap_select(&pool, trials, draw, seed.unwrap_or(cli_seed))?;
            write_json(&report, &r)?;
            for (k, v) in &r.metrics {
                println!("{k}: {:.4} ± {:.4}", v.mean, v.std);
            }
        }
        Command::Synth { spec, out_dir } => {
            let mut spec = read_synth_spec(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let out = synth_generate(&spec)?;
            create_dir(&out_dir)?;
            write_csv(&out.splits.train, out_dir.join("train.csv"))?;
            write_csv(&out.splits.validation, out_dir.join("validation.csv"))?;
            write_csv(&out.splits.test, out_dir.join("test.csv"))?;
            write_text(&out_dir.join("dag.txt"), &out.dag.to_edge_list())?;
            write_json(&out_dir.join("truth.json"), &SynthTruth::of(&out))?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SynthTruth {
    edges: Vec<(String, String, f64)>,
    concept_bias: Vec<f64>,
    sink_bias: f64,
}

impl SynthTruth {
    fn of(out: &crate::data::SynthOutput) -> Self {
        let dag = &out.dag;
        Self {
            edges: dag
                .edges()
                .iter()
                .zip(&out.edge_weights)
                .map(|(e, &w)| (dag.node_name(e.parent).to_owned(), dag.node_name(e.child).to_owned(), w))
                .collect(),
            concept_bias: out.concept_bias.clone(),
            sink_bias: out.sink_bias,
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
