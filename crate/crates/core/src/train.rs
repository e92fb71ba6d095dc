//! Alternating enhancer/classifier training, ablations and evaluation.
//!
//! Each mini-batch runs two updates. The enhancer steps on its weighted loss
//! while the classifier probabilities are frozen inputs; then the enhancer is
//! re-run, its distributions are frozen, and the classifier steps on its own
//! mixed loss.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::data::{Bag, MimlDataset};
use crate::enhancer::{EnhancedBatch, EnhancerConfig, EnhancerModel, WidthPolicy};
use crate::error::{Error, Result};
use crate::loss::{self, LossWeights, SimilarityMode};
use crate::metrics::{ComparisonTable, MetricsReport};
use crate::optim::{Optimizer, OptimizerKind};

/// Threshold used to binarize classifier probabilities.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    #[default]
    Full,
    A,
    B,
    C,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::A, Ablation::B, Ablation::C];

    /// Display name used in reports.
    pub fn method_name(self) -> &'static str {
        match self {
            Ablation::Full => "GLEMIML",
            Ablation::A => "GLEMIML-A",
            Ablation::B => "GLEMIML-B",
            Ablation::C => "GLEMIML-C",
        }
    }

    pub fn classifier_depth(self, base: usize) -> usize {
        match self {
            Ablation::Full | Ablation::C => base,
            Ablation::A => 1,
            Ablation::B => 3,
        }
    }

    pub fn instance_graph(self) -> bool {
        self != Ablation::C
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "glemiml" => Ok(Ablation::Full),
            "a" | "glemiml-a" => Ok(Ablation::A),
            "b" | "glemiml-b" => Ok(Ablation::B),
            "c" | "glemiml-c" => Ok(Ablation::C),
            _ => Err(Error::config(format!("unknown ablation `{s}` (expected full, A, B or C)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss: LossWeights,
    pub instance_k: usize,
    pub label_k: usize,
    pub embed_dim: usize,
    pub classifier_depth: usize,
    pub similarity: SimilarityMode,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            loss: LossWeights::default(),
            instance_k: 3,
            label_k: 3,
            embed_dim: 8,
            classifier_depth: 2,
            similarity: SimilarityMode::Mse,
            seed: 0,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive and finite"));
        }
        if self.instance_k == 0 || self.label_k == 0 {
            return Err(Error::config("graph neighbour counts must be at least 1"));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim must be positive"));
        }
        if !(1..=3).contains(&self.classifier_depth) {
            return Err(Error::config("classifier_depth must be 1, 2 or 3"));
        }
        self.loss.validate()
    }

    pub fn effective_depth(&self) -> usize {
        self.ablation.classifier_depth(self.classifier_depth)
    }

    pub fn enhancer_config(&self, feature_dim: usize, label_count: usize) -> EnhancerConfig {
        EnhancerConfig {
            feature_dim,
            label_count,
            embed_dim: self.embed_dim,
            instance_k: self.instance_k,
            label_k: self.label_k,
            width: WidthPolicy::Median,
            instance_graph: self.ablation.instance_graph(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_cl: f64,
    pub l_sim: f64,
    pub l_thr: f64,
    pub l_cle: f64,
    pub l_lc: f64,
    pub l_dc: f64,
    pub l_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn first(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub enhancer: EnhancerModel,
    pub classifier: ClassifierModel,
    pub history: TrainHistory,
    pub enhancer_steps: usize,
    pub classifier_steps: usize,
    /// Instance graphs built by the enhancer over the whole run.
    pub instance_graphs_built: usize,
}

/// Loss values from one enhancer step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhancerStep {
    pub l_cl: f64,
    pub l_sim: f64,
    pub l_thr: f64,
    pub l_cle: f64,
    pub instance_graphs_built: usize,
}

/// Loss values from one classifier step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierStep {
    pub l_lc: f64,
    pub l_dc: f64,
    pub l_c: f64,
}

fn label_matrix(bags: &[&Bag]) -> Array2<f64> {
    let t = bags[0].label_count();
    Array2::from_shape_fn((bags.len(), t), |(i, j)| f64::from(bags[i].labels()[j]))
}

/// Enhancer loss and its parameter gradient, with classifier probabilities
/// `p` held constant.
pub fn enhancer_loss_and_grad(
    enhancer: &EnhancerModel,
    bags: &[&Bag],
    p: ndarray::ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<(EnhancerStep, crate::nn::ParameterVector)> {
    let w = &cfg.loss;
    let fwd = enhancer.forward(bags)?;
    let batch = fwd.batch();
    let labels = label_matrix(bags);

    let (l_cl, g_conf) = loss::interaction_loss_grad(p, batch.confidences.view(), labels.view(), w.gamma_pos, w.gamma_neg)?;
    let sp = loss::similarity_matrices(bags, batch.distributions.view())?;
    let (l_sim, g_a) = loss::similarity_loss_grad(&sp, cfg.similarity)?;
    let g_sim = loss::cosine_matrix_backward(batch.distributions.view(), sp.a.view(), g_a.view());
    let (l_thr, g_thr) = match loss::threshold_loss_grad(batch.distributions.view(), labels.view()) {
        Ok((v, g)) => (v.value, g),
        Err(Error::Degenerate(_)) => (0.0, Array2::zeros(labels.raw_dim())),
        Err(e) => return Err(e),
    };
    let l_cle = loss::enhancer_total_loss(w, l_cl, l_sim, l_thr)?;

    let g_dist = g_sim * w.beta2 + g_thr * w.beta3;
    let g_conf = g_conf * w.beta1;
    let grad = enhancer.backward(&fwd, g_dist.view(), g_conf.view())?;
    Ok((
        EnhancerStep {
            l_cl,
            l_sim,
            l_thr,
            l_cle,
            instance_graphs_built: fwd.instance_graphs_built(),
        },
        grad,
    ))
}

/// Classifier loss and its parameter gradient, with the enhancer
/// distributions `d` held constant.
pub fn classifier_loss_and_grad(
    classifier: &ClassifierModel,
    bags: &[&Bag],
    d: ndarray::ArrayView2<f64>,
    rho: f64,
) -> Result<(ClassifierStep, crate::nn::ParameterVector)> {
    let fwd = classifier.forward(bags)?;
    let labels = label_matrix(bags);
    let (l_dc, g_dc) = loss::distribution_loss_grad(d, fwd.logits.view())?;
    let (l_lc, g_p) = loss::logical_bce_loss_grad(fwd.probs.view(), labels.view())?;
    let l_c = loss::classifier_total_loss(rho, l_lc, l_dc)?;
    let g_lc = g_p * fwd.probs.mapv(|p| p * (1.0 - p));
    let g_logits = g_lc * rho + g_dc * (1.0 - rho);
    let grad = classifier.backward(&fwd, g_logits.view())?;
    Ok((ClassifierStep { l_lc, l_dc, l_c }, grad))
}

fn check_finite(value: f64, epoch: usize, batch: usize, loss: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, batch, loss })
    }
}

fn diverged(err: Error, epoch: usize, batch: usize, loss: &'static str) -> Error {
    match err {
        Error::Numeric(_) => Error::Divergence { epoch, batch, loss },
        other => other,
    }
}

/// Contiguous batches of a shuffled index list; a final batch of fewer than
/// two bags is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Trains on `train`, recording validation metrics on `val` when given.
pub fn train(train: &MimlDataset, val: Option<&MimlDataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(train, val, cfg, |_, _, _| Ok(()))
}

/// As [`train`], calling `observer` after every epoch.
pub fn train_with_observer<F>(
    train: &MimlDataset,
    val: Option<&MimlDataset>,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &EnhancerModel, &ClassifierModel) -> Result<()>,
{
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Degenerate("training needs at least two bags".into()));
    }
    let (d, t) = (train.feature_dim(), train.label_count());
    let mut enhancer = EnhancerModel::new(&cfg.enhancer_config(d, t))?;
    let mut classifier = ClassifierModel::new(d, t, cfg.effective_depth(), cfg.seed.wrapping_add(1))?;
    let mut enh_params = enhancer.to_vector().into_inner();
    let mut clf_params = classifier.to_vector().into_inner();
    let mut enh_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, enh_params.len());
    let mut clf_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, clf_params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));

    let mut history = TrainHistory::default();
    let (mut enhancer_steps, mut classifier_steps, mut graphs) = (0, 0, 0);
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(train.len(), cfg.batch_size, &mut rng);
        let mut sums = [0.0; 7];
        for (b, idx) in batches.iter().enumerate() {
            let batch_no = b + 1;
            let bags: Vec<&Bag> = idx.iter().map(|&i| &train.bags()[i]).collect();

            let p = classifier.forward(&bags)?.probs;
            let (es, grad) =
                enhancer_loss_and_grad(&enhancer, &bags, p.view(), cfg).map_err(|e| diverged(e, epoch, batch_no, "L_CLE"))?;
            check_finite(es.l_cle, epoch, batch_no, "L_CLE")?;
            enh_opt.step(&mut enh_params, &grad)?;
            if !enh_params.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence { epoch, batch: batch_no, loss: "L_CLE" });
            }
            enhancer.set_from_slice(&enh_params)?;
            enhancer_steps += 1;
            graphs += es.instance_graphs_built;

            let refreshed = enhancer.forward(&bags).map_err(|e| diverged(e, epoch, batch_no, "L_CLE"))?;
            graphs += refreshed.instance_graphs_built();
            let dist = &refreshed.batch().distributions;
            let (cs, grad) = classifier_loss_and_grad(&classifier, &bags, dist.view(), cfg.loss.rho)
                .map_err(|e| diverged(e, epoch, batch_no, "L_C"))?;
            check_finite(cs.l_c, epoch, batch_no, "L_C")?;
            clf_opt.step(&mut clf_params, &grad)?;
            if !clf_params.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence { epoch, batch: batch_no, loss: "L_C" });
            }
            classifier.set_from_slice(&clf_params)?;
            classifier_steps += 1;

            for (s, v) in sums
                .iter_mut()
                .zip([es.l_cl, es.l_sim, es.l_thr, es.l_cle, cs.l_lc, cs.l_dc, cs.l_c])
            {
                *s += v;
            }
        }
        let n = batches.len().max(1) as f64;
        let validation = match val {
            Some(v) => match evaluate(&enhancer, &classifier, v) {
                Ok(r) => Some(r),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        let record = EpochRecord {
            epoch,
            l_cl: sums[0] / n,
            l_sim: sums[1] / n,
            l_thr: sums[2] / n,
            l_cle: sums[3] / n,
            l_lc: sums[4] / n,
            l_dc: sums[5] / n,
            l_c: sums[6] / n,
            validation,
        };
        observer(&record, &enhancer, &classifier)?;
        history.epochs.push(record);
    }
    Ok(TrainOutcome {
        enhancer,
        classifier,
        history,
        enhancer_steps,
        classifier_steps,
        instance_graphs_built: graphs,
    })
}

/// Classifier metrics on `ds`; probabilities drive RL and mAP, binarized
/// predictions drive HL and Ma-F1.
pub fn evaluate(enhancer: &EnhancerModel, classifier: &ClassifierModel, ds: &MimlDataset) -> Result<MetricsReport> {
    if enhancer.feature_dim() != classifier.feature_dim() || enhancer.label_count() != classifier.label_count() {
        return Err(Error::shape("enhancer and classifier dimensions differ"));
    }
    if ds.feature_dim() != classifier.feature_dim() || ds.label_count() != classifier.label_count() {
        return Err(Error::shape("dataset does not match the models"));
    }
    let (_, probs) = classifier.predict_dataset(ds)?;
    let truth = ds.label_matrix().mapv(|v| v as u8);
    MetricsReport::from_scores(probs.view(), truth.view(), DECISION_THRESHOLD)
}

/// Enhances a whole dataset as one batch.
pub fn enhance_dataset(enhancer: &EnhancerModel, ds: &MimlDataset) -> Result<EnhancedBatch> {
    let refs: Vec<&Bag> = ds.bags().iter().collect();
    enhancer.enhance_batch(&refs)
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub variant: Ablation,
    pub report: MetricsReport,
    pub outcome: TrainOutcome,
}

/// Trains each requested variant from the same seed and data and evaluates
/// it on `test`. `only` restricts the variants; `None` runs all four.
pub fn run_ablation(
    train_ds: &MimlDataset,
    val: Option<&MimlDataset>,
    test: &MimlDataset,
    base: &TrainConfig,
    only: Option<&[Ablation]>,
) -> Result<Vec<AblationRun>> {
    base.validate()?;
    let variants: Vec<Ablation> = match only {
        Some(list) => Ablation::ALL.into_iter().filter(|a| list.contains(a)).collect(),
        None => Ablation::ALL.to_vec(),
    };
    if variants.is_empty() {
        return Err(Error::config("no ablation variant selected"));
    }
    variants
        .into_iter()
        .map(|variant| {
            let cfg = TrainConfig {
                ablation: variant,
                ..base.clone()
            };
            let outcome = train(train_ds, val, &cfg)?;
            let report = evaluate(&outcome.enhancer, &outcome.classifier, test)?;
            Ok(AblationRun {
                variant,
                report,
                outcome,
            })
        })
        .collect()
}

/// Variants as columns, metrics as rows.
pub fn ablation_table(dataset: &str, runs: &[AblationRun]) -> ComparisonTable {
    let methods: Vec<(String, MetricsReport)> = runs
        .iter()
        .map(|r| (r.variant.method_name().to_string(), r.report.clone()))
        .collect();
    ComparisonTable::from_reports(dataset, &methods)
}
