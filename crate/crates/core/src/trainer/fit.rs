use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::counterfactual::build_intervention_table;
use crate::dag::DagSpec;
use crate::data::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::exogenous::{
    kl_estimate_on_tape, shuffle_batch, ExoBnUpdates, ExogenousNet, IndependenceDiscriminator,
};
use crate::metrics::MetricReport;
use crate::model::{ExplainerModel, TrainingMetadata};
use crate::numeric::{sgd_step, BnUpdates, GradientSet, Mode, Tape, Var};
use crate::scm::{ScmParameters, Variant};

// Independent generator streams per purpose, so that e.g. enabling the
// discriminator does not shift the initialisation or batch order of the
// main networks.
const STREAM_INIT: u64 = 0;
const STREAM_BATCHES: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_DISC_INIT: u64 = 3;
const STREAM_DISC_BATCHES: u64 = 4;
const STREAM_DISC_DROPOUT: u64 = 5;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// One mini-batch: features, concept targets (`B×K`) and black-box scores
/// (`B×1`).
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array2<f64>,
    pub concepts: Array2<f64>,
    pub scores: Array2<f64>,
}

impl Batch {
    pub fn from_rows(data: &Dataset, rows: &[usize]) -> Self {
        Self {
            x: data.features.select(Axis(0), rows),
            concepts: data.concepts.select(Axis(0), rows),
            scores: Array2::from_shape_fn((rows.len(), 1), |(i, _)| data.scores[rows[i]]),
        }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    /// `L_E`; zero when independence is off.
    pub independence: f64,
    pub concept: f64,
    pub distill: f64,
    pub total: f64,
}

/// Gradients of the combined objective, aligned with
/// `parameter_sets()` of the exogenous net and the SCM.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub exogenous: Vec<GradientSet>,
    pub scm: Vec<GradientSet>,
}

/// Freshly initialised model for `n_features` inputs.
pub fn initialize(n_features: usize, dag: &DagSpec, cfg: &TrainConfig) -> Result<ExplainerModel> {
    cfg.validate()?;
    if let Err(v) = dag.validate() {
        return Err(crate::dag::DagError::Invalid(v).into());
    }
    let mut init = stream(cfg.seed, STREAM_INIT);
    let k = dag.n_concepts();
    let exogenous = ExogenousNet::new(
        n_features,
        k,
        &cfg.common_layers,
        &cfg.concept_layers,
        cfg.dropout,
        cfg.batch_norm,
        &mut init,
    )?;
    let scm = match cfg.variant {
        Variant::Global => ScmParameters::global(dag, cfg.biases),
        Variant::Local => ScmParameters::local(
            dag,
            &cfg.local_plan(),
            cfg.biases,
            cfg.use_blackbox_score,
            &mut init,
        )?,
    };
    let discriminator = if cfg.independence {
        let mut r = stream(cfg.seed, STREAM_DISC_INIT);
        Some(IndependenceDiscriminator::new(
            k,
            &cfg.disc_layers,
            cfg.disc_dropout,
            cfg.disc_lr,
            cfg.theta,
            &mut r,
        )?)
    } else {
        None
    };
    Ok(ExplainerModel {
        config: cfg.clone(),
        dag: dag.clone(),
        exogenous,
        scm,
        discriminator,
        interventions: None,
        metadata: TrainingMetadata {
            seed: cfg.seed,
            epoch: 0,
            selection_score: f64::NEG_INFINITY,
        },
    })
}

/// Value and gradients of `L_D + β·L_C + γ·L_E` on one batch. The
/// discriminator, when used, is a frozen function of `u`.
pub fn loss_and_gradients(
    model: &ExplainerModel,
    batch: &Batch,
    mode: &mut Mode,
) -> Result<(LossParts, ModelGradients)> {
    let (parts, grads, _, _) = forward_backward(model, batch, mode)?;
    Ok((parts, grads))
}

fn forward_backward(
    model: &ExplainerModel,
    batch: &Batch,
    mode: &mut Mode,
) -> Result<(LossParts, ModelGradients, ExoBnUpdates, Vec<BnUpdates>)> {
    let mut tape = Tape::new();
    let ev = model.exogenous.register(&mut tape);
    let sv = model.scm.register(&mut tape);
    let x = tape.leaf(batch.x.clone());
    let (u, exo_upd) = model.exogenous.forward(&mut tape, &ev, x, mode)?;
    let yb = tape.leaf(batch.scores.clone());
    let (out, scm_upd) = model.scm.forward_tape(&model.dag, &mut tape, &sv, u, Some(yb), mode)?;
    let (parts, total) = objective(model, &mut tape, u, &out, batch)?;
    let grads = tape.backward(total)?;
    let grads = ModelGradients {
        exogenous: model.exogenous.gradients(&grads, &ev),
        scm: model.scm.gradients(&grads, &sv),
    };
    Ok((parts, grads, exo_upd, scm_upd))
}

fn objective(
    model: &ExplainerModel,
    tape: &mut Tape,
    u: Var,
    out: &crate::scm::ScmTapeOutput,
    batch: &Batch,
) -> Result<(LossParts, Var)> {
    let cfg = &model.config;
    let ld = tape.bce(out.score, batch.scores.clone())?;
    let lc = tape.bce(out.concepts, batch.concepts.clone())?;
    let weighted_c = tape.scale(lc, cfg.beta);
    let mut total = tape.add(ld, weighted_c)?;
    let mut le_value = 0.0;
    if cfg.independence {
        let disc = model
            .discriminator
            .as_ref()
            .ok_or_else(|| Error::Config("independence enabled without a discriminator".into()))?;
        let le = kl_estimate_on_tape(disc, tape, u)?;
        le_value = tape.scalar(le);
        let gamma = cfg.effective_gamma();
        if gamma != 0.0 {
            let weighted = tape.scale(le, gamma);
            total = tape.add(total, weighted)?;
        }
    }
    Ok((
        LossParts {
            independence: le_value,
            concept: tape.scalar(lc),
            distill: tape.scalar(ld),
            total: tape.scalar(total),
        },
        total,
    ))
}

/// Batches of `batch_size` over a shuffled index list; a trailing batch of
/// one row is merged into its predecessor.
fn batches(mut idx: Vec<usize>, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<Vec<usize>> {
    idx.shuffle(rng);
    let mut out: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

/// Stateful single-fit driver. Main epochs update only the exogenous net
/// and SCM; discriminator passes update only the discriminator.
pub struct Trainer<'a> {
    train: &'a Dataset,
    model: ExplainerModel,
    batch_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    disc_rng: ChaCha8Rng,
    disc_dropout_rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(train: &'a Dataset, dag: &DagSpec, cfg: &TrainConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        if train.n_concepts() != dag.n_concepts() {
            return Err(Error::Dimension(format!(
                "dataset has {} concepts, DAG has {}",
                train.n_concepts(),
                dag.n_concepts()
            )));
        }
        if train.concept_names != dag.concepts() {
            return Err(Error::Data("dataset concept names differ from the DAG's".into()));
        }
        if cfg.independence && train.len() < 2 {
            return Err(Error::Data("independence training needs at least 2 rows".into()));
        }
        let seed = cfg.seed;
        Ok(Self {
            train,
            model: initialize(train.n_features(), dag, cfg)?,
            batch_rng: stream(seed, STREAM_BATCHES),
            dropout_rng: stream(seed, STREAM_DROPOUT),
            disc_rng: stream(seed, STREAM_DISC_BATCHES),
            disc_dropout_rng: stream(seed, STREAM_DISC_DROPOUT),
        })
    }

    pub fn model(&self) -> &ExplainerModel {
        &self.model
    }

    pub fn into_model(self) -> ExplainerModel {
        self.model
    }

    /// One pass of discriminator steps over the training set, with `u`
    /// from the current exogenous net in eval mode. Returns the mean BCE
    /// before each step, or `None` without a discriminator.
    pub fn discriminator_pass(&mut self) -> Result<Option<f64>> {
        let Some(disc) = self.model.discriminator.as_mut() else {
            return Ok(None);
        };
        let u_all = self.model.exogenous.predict(&self.train.features)?;
        let plan = batches(
            (0..self.train.len()).collect(),
            &mut self.disc_rng,
            self.model.config.batch_size,
        );
        let mut total = 0.0;
        for rows in &plan {
            let joint = u_all.select(Axis(0), rows);
            let marginal = shuffle_batch(&joint, self.disc_rng.random())?;
            let lr = disc.lr;
            total += disc.step(&joint, &marginal, lr, &mut Mode::Train(&mut self.disc_dropout_rng))?;
        }
        Ok(Some(total / plan.len() as f64))
    }

    /// One epoch of gradient steps on the exogenous net and SCM. Returns
    /// the mean loss parts over batches.
    pub fn main_epoch(&mut self) -> Result<LossParts> {
        let cfg = self.model.config.clone();
        let plan = batches((0..self.train.len()).collect(), &mut self.batch_rng, cfg.batch_size);
        let mut sum = LossParts::default();
        for rows in &plan {
            let batch = Batch::from_rows(self.train, rows);
            let (parts, grads, exo_upd, scm_upd) =
                forward_backward(&self.model, &batch, &mut Mode::Train(&mut self.dropout_rng))?;
            apply_gradients(&mut self.model, &grads, cfg.lr, cfg.l2)?;
            self.model.exogenous.apply_bn_updates(&exo_upd);
            self.model.scm.apply_bn_updates(&scm_upd);
            sum.independence += parts.independence;
            sum.concept += parts.concept;
            sum.distill += parts.distill;
            sum.total += parts.total;
        }
        let n = plan.len() as f64;
        Ok(LossParts {
            independence: sum.independence / n,
            concept: sum.concept / n,
            distill: sum.distill / n,
            total: sum.total / n,
        })
    }
}

/// One SGD step on the exogenous net and SCM. Every gradient is checked
/// before anything is written.
pub fn apply_gradients(model: &mut ExplainerModel, grads: &ModelGradients, lr: f64, l2: f64) -> Result<()> {
    let all_finite = grads
        .exogenous
        .iter()
        .chain(&grads.scm)
        .all(|g| g.grads.iter().all(|a| a.iter().all(|v| v.is_finite())));
    if !all_finite {
        return Err(Error::NonFinite("gradient of the training objective".into()));
    }
    for (p, g) in model.exogenous.parameter_sets_mut().into_iter().zip(&grads.exogenous) {
        sgd_step(p, g, lr, l2)?;
    }
    for (p, g) in model.scm.parameter_sets_mut().into_iter().zip(&grads.scm) {
        sgd_step(p, g, lr, l2)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossParts,
    /// Mean discriminator BCE of the pass run before this epoch, if any.
    pub discriminator_loss: Option<f64>,
    pub val_fidelity: f64,
    pub val_concept_accuracy: f64,
}

impl EpochRecord {
    pub fn selection_score(&self) -> f64 {
        self.val_fidelity + self.val_concept_accuracy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRun {
    /// Parameters from the best validation epoch, with intervention table.
    pub model: ExplainerModel,
    pub trace: Vec<EpochRecord>,
    pub validation: MetricReport,
    /// Validation fidelity + validation concept accuracy.
    pub selection_score: f64,
}

/// Trains on `splits.train`, keeps the epoch with the best validation
/// selection score and builds the intervention table from training-set
/// predictions of that model.
pub fn fit(splits: &Splits, dag: &DagSpec, cfg: &TrainConfig) -> Result<TrainedRun> {
    if splits.validation.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let mut trainer = Trainer::new(&splits.train, dag, cfg)?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(ExplainerModel, MetricReport)> = None;
    for epoch in 1..=cfg.epochs {
        let disc_loss = if (epoch - 1) % cfg.theta == 0 {
            trainer.discriminator_pass()?
        } else {
            None
        };
        let loss = trainer.main_epoch()?;
        let val = trainer.model().evaluate(&splits.validation)?;
        let rec = EpochRecord {
            epoch,
            loss,
            discriminator_loss: disc_loss,
            val_fidelity: val.fidelity,
            val_concept_accuracy: val.concept_accuracy,
        };
        log::debug!(
            "epoch {epoch}: L={:.5} L_D={:.5} L_C={:.5} L_E={:.5} val fid={:.4} acc={:.4}",
            loss.total,
            loss.distill,
            loss.concept,
            loss.independence,
            val.fidelity,
            val.concept_accuracy
        );
        let score = rec.selection_score();
        if best.as_ref().is_none_or(|(m, _)| score > m.metadata.selection_score) {
            let mut snapshot = trainer.model().clone();
            snapshot.metadata = TrainingMetadata {
                seed: cfg.seed,
                epoch,
                selection_score: score,
            };
            best = Some((snapshot, val));
        }
        trace.push(rec);
    }
    let (mut model, validation) = best.expect("at least one epoch");
    let train_pred = model.predict_dataset(&splits.train)?;
    model.interventions = Some(build_intervention_table(train_pred.concepts.view())?);
    let selection_score = model.metadata.selection_score;
    Ok(TrainedRun {
        model,
        trace,
        validation,
        selection_score,
    })
}
