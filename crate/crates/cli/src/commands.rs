use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use glemiml::data::{split_indices, SplitIndices};
use glemiml::enhancer::{mean_row_cosine, normalized_logical};
use glemiml::graph::laplacian;
use glemiml::metrics::{ComparisonRow, ComparisonTable, METRICS};
use glemiml::train::{self, ablation_table, enhance_dataset, evaluate, run_ablation, EpochRecord};
use glemiml::{
    Ablation, Bag, ClassifierModel, EnhancerModel, GroundTruthDistribution, MetricsReport, MimlDataset, TrainHistory,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{to_json, OutputDir};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub enhancer: EnhancerModel,
    pub classifier: ClassifierModel,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_hash: String,
    config: &'a ExperimentConfig,
}

/// Mean cosine to the generator's distributions on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub enhanced_cosine: f64,
    pub logical_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub dataset: String,
    pub split: String,
    pub config_hash: String,
    pub version: String,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<Recovery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub method: String,
    pub variant: Ablation,
    pub classifier_depth: usize,
    pub instance_graph: bool,
    pub instance_graphs_built: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: String,
    pub config_hash: String,
    pub version: String,
    pub variants: Vec<AblationEntry>,
}

struct Prepared {
    name: String,
    dataset: MimlDataset,
    truth: Option<Vec<GroundTruthDistribution>>,
    split: SplitIndices,
    train: MimlDataset,
    val: MimlDataset,
    test: MimlDataset,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    let data = cfg.load_data()?;
    let ds = data.dataset;
    let idx = split_indices(ds.len(), &cfg.split)?;
    let name = ds.name().to_string();
    Ok(Prepared {
        train: ds.subset(&idx.train, format!("{name}/train"))?,
        val: ds.subset(&idx.val, format!("{name}/val"))?,
        test: ds.subset(&idx.test, format!("{name}/test"))?,
        split: idx,
        truth: data.truth,
        dataset: ds,
        name,
    })
}

pub fn output_dir(cfg: &ExperimentConfig, command: &str, output_root: Option<&Path>) -> PathBuf {
    if let Some(dir) = &cfg.output.dir {
        return dir.clone();
    }
    let root = output_root.map_or_else(|| PathBuf::from("runs"), Path::to_path_buf);
    root.join(format!("{command}-{}", &cfg.hash()[..12]))
}

fn write_manifest(out: &OutputDir, command: &str, cfg: &ExperimentConfig) -> Result<(), CliError> {
    out.write_json(
        "manifest.json",
        &Manifest {
            tool: "glemiml",
            version: VERSION,
            command,
            config_hash: cfg.hash(),
            config: cfg,
        },
    )?;
    Ok(())
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn history_csv(out: &OutputDir, name: &str, history: &TrainHistory) -> Result<(), CliError> {
    let mut header: Vec<String> = ["epoch", "L_CL", "L_Sim", "L_thr", "L_CLE", "L_LC", "L_DC", "L_C"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(METRICS.iter().map(|(m, _)| format!("val_{m}")));
    let rows: Vec<Vec<String>> = history
        .epochs
        .iter()
        .map(|r: &EpochRecord| {
            let mut row = vec![r.epoch.to_string()];
            row.extend([r.l_cl, r.l_sim, r.l_thr, r.l_cle, r.l_lc, r.l_dc, r.l_c].map(fmt));
            match &r.validation {
                Some(v) => row.extend(v.values().map(fmt)),
                None => row.extend(std::iter::repeat_n(String::new(), METRICS.len())),
            }
            row
        })
        .collect();
    out.write_csv(name, &header, &rows)?;
    Ok(())
}

fn recovery(enh: &EnhancerModel, p: &Prepared) -> Result<Option<Recovery>, CliError> {
    let Some(truth) = &p.truth else { return Ok(None) };
    let t = p.train.label_count();
    let gt = Array2::from_shape_fn((p.split.train.len(), t), |(i, j)| truth[p.split.train[i]].values()[j]);
    let enhanced = enhance_dataset(enh, &p.train)?;
    Ok(Some(Recovery {
        enhanced_cosine: mean_row_cosine(enhanced.distributions.view(), gt.view()),
        logical_cosine: mean_row_cosine(normalized_logical(p.train.label_matrix().view()).view(), gt.view()),
    }))
}

fn export_distributions(out: &OutputDir, enh: &EnhancerModel, p: &Prepared) -> Result<(), CliError> {
    let idx = &p.split;
    let t = p.dataset.label_count();
    let mut header = vec!["split".to_string(), "bag".to_string()];
    header.extend((1..=t).map(|j| format!("label_{j}")));
    let mut rows = Vec::new();
    for (split, indices, ds) in [("train", &idx.train, &p.train), ("val", &idx.val, &p.val), ("test", &idx.test, &p.test)] {
        let batch = enhance_dataset(enh, ds)?;
        for (row, &bag) in batch.distributions.outer_iter().zip(indices.iter()) {
            let mut r = vec![split.to_string(), bag.to_string()];
            r.extend(row.iter().map(|&v| fmt(v)));
            rows.push(r);
        }
    }
    out.write_csv("distributions.csv", &header, &rows)?;
    Ok(())
}

fn dump_graphs(out: &OutputDir, enh: &EnhancerModel, p: &Prepared) -> Result<(), CliError> {
    let refs: Vec<&Bag> = p.train.bags().iter().collect();
    let fwd = enh.forward(&refs)?;
    let label = enh.label_graph(fwd.base_logits())?;
    out.write_matrix("graphs/label_adjacency.csv", label.adjacency())?;
    out.write_matrix("graphs/label_laplacian.csv", laplacian(&label).matrix().view())?;
    if enh.instance_graph_enabled() {
        let bag = &p.train.bags()[0];
        let emb = enh.embed_instances(bag)?;
        let (g, _) = enh.instance_graph(emb.view())?;
        let id = p.split.train[0];
        out.write_matrix(&format!("graphs/bag-{id}_adjacency.csv"), g.adjacency())?;
        out.write_matrix(&format!("graphs/bag-{id}_laplacian.csv"), laplacian(&g).matrix().view())?;
    }
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, output_root: Option<&Path>) -> Result<String, CliError> {
    cfg.validate()?;
    let p = prepare(cfg)?;
    let out = OutputDir::acquire(&output_dir(cfg, "train", output_root))?;
    write_manifest(&out, "train", cfg)?;

    let every = cfg.output.checkpoint_every;
    let mut write_error: Option<CliError> = None;
    let result = train::train_with_observer(&p.train, Some(&p.val), &cfg.train, |rec, enh, clf| {
        if every > 0 && rec.epoch % every == 0 {
            let ck = Checkpoint {
                epoch: rec.epoch,
                enhancer: enh.clone(),
                classifier: clf.clone(),
            };
            if let Err(e) = out.write_json(&format!("checkpoints/epoch-{:04}.json", rec.epoch), &ck) {
                write_error = Some(e);
                return Err(glemiml::Error::Degenerate("checkpoint write failed".into()));
            }
        }
        Ok(())
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    let outcome = result?;

    let ck = Checkpoint {
        epoch: cfg.train.epochs,
        enhancer: outcome.enhancer,
        classifier: outcome.classifier,
    };
    out.write_json("model.json", &ck)?;
    history_csv(&out, "history.csv", &outcome.history)?;

    let metrics = evaluate(&ck.enhancer, &ck.classifier, &p.test)?;
    let report = RunReport {
        method: cfg.train.ablation.method_name().to_string(),
        dataset: p.name.clone(),
        split: "test".into(),
        config_hash: cfg.hash(),
        version: VERSION.into(),
        metrics,
        recovery: recovery(&ck.enhancer, &p)?,
    };
    out.write_json("report.json", &report)?;
    let text = run_report_text(&report)?;
    out.write_text("report.txt", &text)?;
    if cfg.output.export_distributions {
        export_distributions(&out, &ck.enhancer, &p)?;
    }
    if cfg.output.dump_graph {
        dump_graphs(&out, &ck.enhancer, &p)?;
    }
    Ok(format!("{text}wrote {}\n", out.root().display()))
}

fn run_report_text(r: &RunReport) -> Result<String, CliError> {
    let table = ComparisonTable::from_reports(&r.dataset, &[(r.method.clone(), r.metrics.clone())]);
    let mut text = table.render()?;
    if let Some(rec) = &r.recovery {
        let _ = writeln!(
            text,
            "recovery cosine (train split): enhanced {:.4}, logical {:.4}",
            rec.enhanced_cosine, rec.logical_cosine
        );
    }
    let _ = writeln!(text, "mAP reading: {}", r.metrics.map_reading);
    let _ = writeln!(text, "config hash: {}", r.config_hash);
    Ok(text)
}

pub fn ablate(cfg: &ExperimentConfig, only: &[Ablation], output_root: Option<&Path>) -> Result<String, CliError> {
    cfg.validate()?;
    let p = prepare(cfg)?;
    let out = OutputDir::acquire(&output_dir(cfg, "ablate", output_root))?;
    write_manifest(&out, "ablate", cfg)?;
    let filter = (!only.is_empty()).then_some(only);
    let runs = run_ablation(&p.train, Some(&p.val), &p.test, &cfg.train, filter)?;
    for run in &runs {
        let name = run.variant.method_name();
        let ck = Checkpoint {
            epoch: cfg.train.epochs,
            enhancer: run.outcome.enhancer.clone(),
            classifier: run.outcome.classifier.clone(),
        };
        out.write_json(&format!("models/{name}.json"), &ck)?;
        history_csv(&out, &format!("history/{name}.csv"), &run.outcome.history)?;
    }
    let report = AblationReport {
        dataset: p.name.clone(),
        config_hash: cfg.hash(),
        version: VERSION.into(),
        variants: runs
            .iter()
            .map(|r| AblationEntry {
                method: r.variant.method_name().into(),
                variant: r.variant,
                classifier_depth: r.outcome.classifier.depth(),
                instance_graph: r.outcome.enhancer.instance_graph_enabled(),
                instance_graphs_built: r.outcome.instance_graphs_built,
                metrics: r.report.clone(),
            })
            .collect(),
    };
    out.write_json("ablation.json", &report)?;
    let mut text = ablation_table(&p.name, &runs).render()?;
    let _ = writeln!(text);
    for e in &report.variants {
        let _ = writeln!(
            text,
            "{}: classifier depth {}, instance graph {}, instance graphs built {}",
            e.method,
            e.classifier_depth,
            if e.instance_graph { "on" } else { "off" },
            e.instance_graphs_built
        );
    }
    let _ = writeln!(text, "config hash: {}", report.config_hash);
    out.write_text("ablation.txt", &text)?;
    Ok(format!("{text}wrote {}\n", out.root().display()))
}

pub fn evaluate_cmd(cfg: &ExperimentConfig, model: &Path, split: &str, report_path: Option<&Path>) -> Result<String, CliError> {
    cfg.source()?;
    cfg.split.validate()?;
    let text = std::fs::read_to_string(model).map_err(|e| CliError::Input {
        path: model.to_path_buf(),
        message: e.to_string(),
    })?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| CliError::Input {
        path: model.to_path_buf(),
        message: format!("not a checkpoint: {e}"),
    })?;
    let p = prepare(cfg)?;
    let ds = match split {
        "train" => &p.train,
        "val" => &p.val,
        "test" => &p.test,
        "all" => &p.dataset,
        other => return Err(CliError::Config(format!("unknown split `{other}` (train, val, test or all)"))),
    };
    let metrics = evaluate(&ck.enhancer, &ck.classifier, ds)?;
    let report = RunReport {
        method: "GLEMIML".into(),
        dataset: p.name.clone(),
        split: split.into(),
        config_hash: cfg.hash(),
        version: VERSION.into(),
        metrics,
        recovery: None,
    };
    let json = to_json(&report);
    if let Some(path) = report_path {
        std::fs::write(path, &json).map_err(|e| CliError::output(path, e))?;
    }
    Ok(json)
}

/// One (method, dataset) cell group read from a report file.
fn read_report(path: &Path) -> Result<Vec<(String, String, MetricsReport)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if let Ok(r) = serde_json::from_str::<RunReport>(&text) {
        return Ok(vec![(r.method, r.dataset, r.metrics)]);
    }
    match serde_json::from_str::<AblationReport>(&text) {
        Ok(a) => Ok(a
            .variants
            .into_iter()
            .map(|v| (v.method, a.dataset.clone(), v.metrics))
            .collect()),
        Err(e) => Err(CliError::Input {
            path: path.to_path_buf(),
            message: format!("not a run or ablation report: {e}"),
        }),
    }
}

/// Methods as columns, (dataset, metric) as rows, missing cells ranked worst.
/// A method seen again on the same dataset is labelled with its file.
pub fn aggregate(inputs: &[PathBuf]) -> Result<ComparisonTable, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Config("report needs at least one report file".into()));
    }
    let mut cells: Vec<(String, String, MetricsReport)> = Vec::new();
    for path in inputs {
        for (method, dataset, metrics) in read_report(path)? {
            let method = if cells.iter().any(|(m, d, _)| *m == method && *d == dataset) {
                format!("{method} [{}]", path.display())
            } else {
                method
            };
            cells.push((method, dataset, metrics));
        }
    }
    let mut methods: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    for (m, d, _) in &cells {
        if !methods.contains(m) {
            methods.push(m.clone());
        }
        if !datasets.contains(d) {
            datasets.push(d.clone());
        }
    }
    let mut rows = Vec::new();
    for d in &datasets {
        for (k, &(metric, direction)) in METRICS.iter().enumerate() {
            rows.push(ComparisonRow {
                label: format!("{d} {metric}"),
                direction,
                values: methods
                    .iter()
                    .map(|m| {
                        cells
                            .iter()
                            .find(|(cm, cd, _)| cm == m && cd == d)
                            .map(|(_, _, r)| r.values()[k])
                    })
                    .collect(),
            });
        }
    }
    Ok(ComparisonTable { methods, rows })
}

pub fn report(inputs: &[PathBuf], json: Option<&Path>) -> Result<String, CliError> {
    let table = aggregate(inputs)?;
    if let Some(path) = json {
        #[derive(Serialize)]
        struct Ranked<'a> {
            table: &'a ComparisonTable,
            average_rank: Vec<f64>,
        }
        let text = to_json(&Ranked {
            table: &table,
            average_rank: table.average_ranks()?,
        });
        std::fs::write(path, text).map_err(|e| CliError::output(path, e))?;
    }
    Ok(table.render()?)
}

pub fn synth(spec: &str, out: &Path, truth: Option<&Path>) -> Result<String, CliError> {
    let cfg = crate::config::parse_synth(spec)?;
    let (ds, dists) = glemiml::data::generate_synthetic(&cfg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::output(parent, e))?;
    }
    ds.write(out).map_err(|e| match e {
        glemiml::Error::Io { path, source } => CliError::output(path, source),
        other => other.into(),
    })?;
    if let Some(path) = truth {
        std::fs::write(path, to_json(&dists)).map_err(|e| CliError::output(path, e))?;
    }
    Ok(format!(
        "wrote {} bags (d={}, t={}) to {}\n",
        ds.len(),
        ds.feature_dim(),
        ds.label_count(),
        out.display()
    ))
}
