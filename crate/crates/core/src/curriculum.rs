//! Staged training: the ground model, progressive distillation up the view
//! ladder, the two flat baselines and the ablation variants.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Image, LabelMap};
use crate::error::{invalid, Error, Result};
use crate::labeling::{
    pseudo_label_set_with, relabel_stage_with, union_stage, LabeledImage, LabeledPool, Producer, PseudoLabelOptions,
    PseudoLabeledSet, RelabelReport, UnlabeledSet,
};
use crate::metrics::{evaluate_frames, metrics_row, MetricsRow};
use crate::mixview::{class_mix, mix_or_passthrough};
use crate::pixelmodel::{
    accumulate_data_grad, accumulate_decay, init_params, poly_lr, predict_map, sgd_step, Arch, ModelParams,
    PixelBatch, TrainConfig,
};
use crate::scenegen::{mix64, GeneratedSequence};

/// Weight on the augmented loss term over a stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaSchedule {
    /// `step / total`, rising from 0 to 1.
    Linear,
    Constant { value: f64 },
}

impl LambdaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LambdaSchedule::Linear => Ok(()),
            LambdaSchedule::Constant { value } if (0.0..=1.0).contains(&value) => Ok(()),
            LambdaSchedule::Constant { value } => Err(invalid(format!("lambda {value} outside [0, 1]"))),
        }
    }
}

pub fn lambda_at(schedule: LambdaSchedule, step: usize, total: usize) -> Result<f64> {
    if step > total {
        return Err(invalid(format!("step {step} beyond stage length {total}")));
    }
    schedule.validate()?;
    Ok(match schedule {
        LambdaSchedule::Linear if total == 0 => 1.0,
        LambdaSchedule::Linear => step as f64 / total as f64,
        LambdaSchedule::Constant { value } => value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GroundOnly,
    PseudoFlat,
    ClassmixFlat,
    Progressive,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::GroundOnly => "ground_only",
            Method::PseudoFlat => "pseudo_flat",
            Method::ClassmixFlat => "classmix_flat",
            Method::Progressive => "progressive",
        })
    }
}

/// Everything that determines a run besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub seed: u64,
    pub hidden: usize,
    pub patch: usize,
    /// Ground-model training.
    pub ground: TrainConfig,
    /// Per-stage training; the flat baselines get `iterations` times the stage count.
    pub stage: TrainConfig,
    pub warm_start: bool,
    pub mixview: bool,
    pub nnpl: bool,
    /// How many times per phase the current model's predictions on unlabeled
    /// images are recomputed.
    pub prediction_refreshes: usize,
    pub pseudo: PseudoLabelOptions,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            hidden: 48,
            patch: 5,
            ground: TrainConfig { iterations: 20_000, ..TrainConfig::default() },
            stage: TrainConfig::default(),
            warm_start: true,
            mixview: true,
            nnpl: true,
            prediction_refreshes: 3,
            pseudo: PseudoLabelOptions::default(),
        }
    }
}

impl CurriculumConfig {
    pub fn arch(&self, classes: usize) -> Result<Arch> {
        Arch::new(self.patch, self.hidden, classes)
    }

    pub fn validate(&self) -> Result<()> {
        self.ground.validate()?;
        self.stage.validate()?;
        if self.prediction_refreshes == 0 {
            return Err(invalid("prediction_refreshes must be at least 1"));
        }
        if let Some(t) = self.pseudo.min_confidence {
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid(format!("confidence threshold {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn plan(&self, rung: usize) -> StagePlan {
        StagePlan {
            rung,
            steps: self.stage.iterations,
            lambda: self.stage.lambda,
            warm_start: self.warm_start,
            mixview: self.mixview,
            nnpl: self.nnpl,
        }
    }
}

/// Settings of one progressive stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub rung: usize,
    pub steps: usize,
    pub lambda: LambdaSchedule,
    pub warm_start: bool,
    pub mixview: bool,
    pub nnpl: bool,
}

/// One logged optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub lr: f64,
    pub lambda: f64,
    pub loss_sup: f64,
    pub loss_aug: f64,
    pub loss_total: f64,
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("step,lr,lambda,loss_sup,loss_aug,loss_total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e}\n",
            r.step, r.lr, r.lambda, r.loss_sup, r.loss_aug, r.loss_total
        ));
    }
    out
}

/// Counts of augmented samples by partner type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixAudit {
    pub mixed: u64,
    /// Single-class predictions, used without mixing.
    pub passthrough: u64,
    /// Partner came from the labeled or pseudo-labeled pool.
    pub pool_partners: u64,
    /// Partner was another unlabeled image.
    pub unlabeled_partners: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    /// 1-based index of the model this phase produced (`N_stage`).
    pub stage: usize,
    pub plan: StagePlan,
    pub seed: u64,
    pub pool_size: usize,
    #[serde(skip)]
    pub rows: Vec<LossRow>,
    pub relabel: Option<RelabelReport>,
    pub mix: MixAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub config: CurriculumConfig,
    pub stages: Vec<StageLog>,
    pub checkpoints: Vec<String>,
}

/// Training inputs: the labeled ground rung and unlabeled higher rungs in
/// ascending order.
#[derive(Debug, Clone)]
pub struct StageData {
    pub ground: PseudoLabeledSet,
    pub unlabeled: Vec<UnlabeledSet>,
}

impl StageData {
    /// The labeled sequence must come first; labels of the others are dropped.
    pub fn from_sequences(sequences: &[GeneratedSequence]) -> Result<Self> {
        let (first, rest) = sequences.split_first().ok_or_else(|| invalid("no sequences"))?;
        if !first.labeled || rest.iter().any(|s| s.labeled) {
            return Err(invalid("exactly the first sequence must be labeled"));
        }
        let ground = PseudoLabeledSet::ground_truth(0, first.frames.iter().cloned())?;
        let unlabeled = rest
            .iter()
            .enumerate()
            .map(|(i, s)| UnlabeledSet::new(i + 1, s.height_m, s.images().cloned()))
            .collect();
        let data = Self { ground, unlabeled };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ground.is_empty() {
            return Err(invalid("ground rung has no labeled images"));
        }
        if self.ground.producer != Producer::GroundTruth {
            return Err(invalid("ground rung must carry ground truth"));
        }
        let mut last = self.ground.rung;
        for set in &self.unlabeled {
            if set.rung <= last {
                return Err(invalid("unlabeled rungs must ascend above the ground rung"));
            }
            if set.is_empty() {
                return Err(invalid(format!("rung {} has no images", set.rung)));
            }
            last = set.rung;
        }
        Ok(())
    }

    pub fn classes_hint(&self) -> usize {
        self.ground
            .items
            .iter()
            .flat_map(|it| it.label.labels().iter())
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Keeps only the unlabeled rungs listed (0-based ladder indices).
    pub fn restrict(&self, rungs: &[usize]) -> Result<Self> {
        let unlabeled = rungs
            .iter()
            .map(|&r| {
                self.unlabeled
                    .iter()
                    .find(|s| s.rung == r)
                    .cloned()
                    .ok_or_else(|| invalid(format!("rung {r} not in the data")))
            })
            .collect::<Result<Vec<_>>>()?;
        let data = Self { ground: self.ground.clone(), unlabeled };
        data.validate()?;
        Ok(data)
    }
}

/// Unlabeled rungs (0-based) used at a given height interval: every
/// `interval`-th rung above the ground one.
pub fn interval_rungs(rung_count: usize, interval: usize) -> Result<Vec<usize>> {
    if interval == 0 {
        return Err(invalid("interval must be at least 1"));
    }
    Ok((1..rung_count).filter(|r| r % interval == 0).collect())
}

const SEED_INIT: u64 = 0x1417;
const SEED_SAMPLE: u64 = 0x5a3e;
const FLAT_STAGE: usize = 100;

fn derive_seed(seed: u64, purpose: u64, stage: usize) -> u64 {
    mix64(mix64(seed, purpose), stage as u64)
}

fn numeric(stage: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NumericFailure(msg) => Error::NumericFailure(format!("stage {stage}, step {step}: {msg}")),
        other => other,
    }
}

/// One SGD step on `sup + lambda * aug`.
fn train_step(
    model: &mut ModelParams,
    cfg: &TrainConfig,
    step: usize,
    total: usize,
    sup: &PixelBatch,
    aug: Option<(&PixelBatch, f64)>,
    grad: &mut [f64],
) -> Result<LossRow> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let loss_sup = accumulate_data_grad(model, sup, 1.0, grad)?;
    let (loss_aug, lambda) = match aug {
        Some((batch, lambda)) => (accumulate_data_grad(model, batch, lambda, grad)?, lambda),
        None => (0.0, 0.0),
    };
    accumulate_decay(model, cfg.weight_decay, grad);
    let loss_total = loss_sup + lambda * loss_aug;
    if !loss_total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericFailure(format!("loss evaluated to {loss_total}")));
    }
    let lr = poly_lr(cfg.lr0, step, total, cfg.poly_power)?;
    sgd_step(model, grad, lr)?;
    Ok(LossRow { step, lr, lambda, loss_sup, loss_aug, loss_total })
}

/// Appends `count` uniformly drawn pixels of `image` with their labels.
fn push_pixels<R: Rng>(batch: &mut PixelBatch, rng: &mut R, image: &Image, labels: &LabelMap, count: usize, k: usize) {
    let (w, h) = (image.width(), image.height());
    for _ in 0..count {
        let (u, v) = (rng.random_range(0..w), rng.random_range(0..h));
        batch.push_pixel(image, u, v, k, labels.get(u, v));
    }
}

const MAX_REJECTIONS: usize = 10_000;

/// Uniform over the non-ignored `(image, pixel)` pairs of `items`.
fn push_pool_pixels<R: Rng>(
    batch: &mut PixelBatch,
    rng: &mut R,
    items: &[&LabeledImage],
    count: usize,
    k: usize,
) -> Result<()> {
    for _ in 0..count {
        let mut tries = 0;
        loop {
            let item = items[rng.random_range(0..items.len())];
            let (w, h) = (item.image.width(), item.image.height());
            let (u, v) = (rng.random_range(0..w), rng.random_range(0..h));
            if !item.is_ignored(v * w + u) {
                batch.push_pixel(&item.image, u, v, k, item.label.get(u, v));
                break;
            }
            tries += 1;
            if tries == MAX_REJECTIONS {
                return Err(Error::DegenerateInput("confidence threshold leaves no trainable pixels".into()));
            }
        }
    }
    Ok(())
}

/// Current-model predictions on unlabeled images, recomputed lazily once per
/// refresh period.
struct PredictionCache {
    refreshes: usize,
    total_steps: usize,
    slots: Vec<Option<(usize, LabelMap)>>,
}

impl PredictionCache {
    fn new(len: usize, refreshes: usize, total_steps: usize) -> Self {
        Self { refreshes, total_steps: total_steps.max(1), slots: vec![None; len] }
    }

    fn period(&self, step: usize) -> usize {
        step * self.refreshes / self.total_steps
    }

    /// Valid only when `labels` equal the model's predictions at step 0.
    fn prime(&mut self, i: usize, labels: LabelMap) {
        self.slots[i] = Some((0, labels));
    }

    fn get(&mut self, i: usize, image: &Image, model: &ModelParams, step: usize) -> Result<&LabelMap> {
        let period = self.period(step);
        let fresh = matches!(&self.slots[i], Some((p, _)) if *p == period);
        if !fresh {
            self.slots[i] = Some((period, predict_map(model, image)?.labels));
        }
        Ok(&self.slots[i].as_ref().expect("filled above").1)
    }
}

/// Supervised training of the ground model on ground truth only.
pub fn train_ground(ground: &PseudoLabeledSet, classes: usize, cfg: &CurriculumConfig) -> Result<(ModelParams, RunRecord)> {
    cfg.validate()?;
    if ground.is_empty() {
        return Err(invalid("no labeled ground images"));
    }
    if ground.producer != Producer::GroundTruth {
        return Err(invalid("ground training needs ground-truth labels"));
    }
    let arch = cfg.arch(classes)?;
    for item in &ground.items {
        item.label.validate(classes)?;
    }
    let mut model = init_params(arch, derive_seed(cfg.seed, SEED_INIT, 1))?;
    let seed = derive_seed(cfg.seed, SEED_SAMPLE, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<&LabeledImage> = ground.items.iter().collect();
    let t = &cfg.ground;
    let mut batch = PixelBatch::with_capacity(arch.feature_dim(), t.batch_pixels);
    let mut grad = vec![0.0; arch.param_count()];
    let mut rows = Vec::with_capacity(t.iterations);
    for step in 0..t.iterations {
        batch.clear();
        push_pool_pixels(&mut batch, &mut rng, &items, t.batch_pixels, arch.patch)?;
        rows.push(train_step(&mut model, t, step, t.iterations, &batch, None, &mut grad).map_err(|e| numeric(1, step, e))?);
    }
    let plan = StagePlan {
        rung: ground.rung,
        steps: t.iterations,
        lambda: LambdaSchedule::Constant { value: 0.0 },
        warm_start: false,
        mixview: false,
        nnpl: false,
    };
    let log = StageLog { stage: 1, plan, seed, pool_size: ground.len(), rows, relabel: None, mix: MixAudit::default() };
    Ok((model, RunRecord { method: Method::GroundOnly, config: cfg.clone(), stages: vec![log], checkpoints: Vec::new() }))
}

/// Result of a progressive run.
#[derive(Debug, Clone)]
pub struct ProgressiveOutcome {
    pub model: ModelParams,
    /// `(stage, N_stage)` for every trained stage, in order.
    pub stage_models: Vec<(usize, ModelParams)>,
    /// Labels each rung received from the previous rung's model, before
    /// any training on that rung.
    pub initial_pseudo: Vec<PseudoLabeledSet>,
    pub pool: LabeledPool,
    pub record: RunRecord,
}

/// Progressive distillation from `n1` up through every unlabeled rung.
pub fn run_progressive(n1: &ModelParams, data: &StageData, cfg: &CurriculumConfig) -> Result<ProgressiveOutcome> {
    cfg.validate()?;
    data.validate()?;
    let arch = *n1.arch();
    let mut pool = LabeledPool::from_set(data.ground.clone())?;
    let mut prev = n1.clone();
    let mut prev_stage = data.ground.rung + 1;
    let mut stage_models = Vec::new();
    let mut initial_pseudo = Vec::new();
    let mut stages = Vec::new();

    for unlabeled in &data.unlabeled {
        let plan = cfg.plan(unlabeled.rung);
        let stage = unlabeled.rung + 1;
        let mut fixed_targets: Option<Vec<LabelMap>> = None;
        if plan.nnpl {
            let x_i = pseudo_label_set_with(&prev, unlabeled, Producer::Model { stage: prev_stage }, cfg.pseudo)?;
            fixed_targets = Some(x_i.items.iter().map(|it| it.label.clone()).collect());
            initial_pseudo.push(x_i.clone());
            pool = union_stage(pool, x_i)?;
        }
        let mut model = if plan.warm_start { prev.clone() } else { init_params(arch, derive_seed(cfg.seed, SEED_INIT, stage))? };
        let seed = derive_seed(cfg.seed, SEED_SAMPLE, stage);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cache = PredictionCache::new(unlabeled.len(), cfg.prediction_refreshes, plan.steps);
        if plan.warm_start {
            if let Some(targets) = &fixed_targets {
                if cfg.pseudo.min_confidence.is_none() {
                    for (i, t) in targets.iter().enumerate() {
                        cache.prime(i, t.clone());
                    }
                }
            }
        }
        let items: Vec<&LabeledImage> = pool.entries().iter().map(|e| &e.item).collect();
        let pool_size = items.len();
        let t = &cfg.stage;
        let mut sup = PixelBatch::with_capacity(arch.feature_dim(), t.batch_pixels);
        let mut aug = PixelBatch::with_capacity(arch.feature_dim(), t.batch_pixels);
        let mut grad = vec![0.0; arch.param_count()];
        let mut rows = Vec::with_capacity(plan.steps);
        let mut mix = MixAudit::default();

        for step in 0..plan.steps {
            sup.clear();
            aug.clear();
            push_pool_pixels(&mut sup, &mut rng, &items, t.batch_pixels, arch.patch)?;
            let j = rng.random_range(0..unlabeled.len());
            let x_i = &unlabeled.images[j].1;
            if plan.mixview {
                let partner = items[rng.random_range(0..items.len())];
                let tilde_y = cache.get(j, x_i, &model, step)?;
                let mixed = mix_or_passthrough(&partner.image, &partner.label, x_i, tilde_y, &mut rng)?;
                if mixed.image == **x_i && mixed.labels == *tilde_y {
                    mix.passthrough += 1;
                } else {
                    mix.mixed += 1;
                }
                mix.pool_partners += 1;
                push_pixels(&mut aug, &mut rng, &mixed.image, &mixed.labels, t.batch_pixels, arch.patch);
            } else {
                let target = match &fixed_targets {
                    Some(targets) => &targets[j],
                    None => cache.get(j, x_i, &model, step)?,
                };
                push_pixels(&mut aug, &mut rng, x_i, target, t.batch_pixels, arch.patch);
            }
            let lambda = lambda_at(plan.lambda, step, plan.steps)?;
            let row = train_step(&mut model, t, step, plan.steps, &sup, Some((&aug, lambda)), &mut grad)
                .map_err(|e| numeric(stage, step, e))?;
            rows.push(row);
        }

        let producer = Producer::Model { stage };
        let relabel = if plan.nnpl {
            Some(relabel_stage_with(&mut pool, &model, unlabeled.rung, producer, cfg.pseudo)?)
        } else {
            pool = union_stage(pool, pseudo_label_set_with(&model, unlabeled, producer, cfg.pseudo)?)?;
            None
        };
        stages.push(StageLog { stage, plan, seed, pool_size, rows, relabel, mix });
        stage_models.push((stage, model.clone()));
        prev = model;
        prev_stage = stage;
    }

    let record = RunRecord { method: Method::Progressive, config: cfg.clone(), stages, checkpoints: Vec::new() };
    Ok(ProgressiveOutcome { model: prev, stage_models, initial_pseudo, pool, record })
}

fn flat_start(n1: &ModelParams, cfg: &CurriculumConfig) -> Result<ModelParams> {
    if cfg.warm_start {
        Ok(n1.clone())
    } else {
        init_params(*n1.arch(), derive_seed(cfg.seed, SEED_INIT, FLAT_STAGE))
    }
}

fn flat_plan(cfg: &CurriculumConfig, data: &StageData, mixview: bool) -> StagePlan {
    StagePlan {
        rung: data.unlabeled.last().map_or(data.ground.rung, |s| s.rung),
        steps: cfg.stage.iterations * data.unlabeled.len().max(1),
        lambda: if mixview { cfg.stage.lambda } else { LambdaSchedule::Constant { value: 0.0 } },
        warm_start: cfg.warm_start,
        mixview,
        nnpl: false,
    }
}

/// Labels all rungs at once with `n1`, then retrains one model on the union.
pub fn run_pseudo_flat(n1: &ModelParams, data: &StageData, cfg: &CurriculumConfig) -> Result<(ModelParams, RunRecord)> {
    cfg.validate()?;
    data.validate()?;
    let arch = *n1.arch();
    let mut pool = LabeledPool::from_set(data.ground.clone())?;
    for set in &data.unlabeled {
        pool = union_stage(pool, pseudo_label_set_with(n1, set, Producer::Model { stage: 1 }, cfg.pseudo)?)?;
    }
    let plan = flat_plan(cfg, data, false);
    let mut model = flat_start(n1, cfg)?;
    let seed = derive_seed(cfg.seed, SEED_SAMPLE, FLAT_STAGE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<&LabeledImage> = pool.entries().iter().map(|e| &e.item).collect();
    let t = &cfg.stage;
    let mut sup = PixelBatch::with_capacity(arch.feature_dim(), t.batch_pixels);
    let mut grad = vec![0.0; arch.param_count()];
    let mut rows = Vec::with_capacity(plan.steps);
    for step in 0..plan.steps {
        sup.clear();
        push_pool_pixels(&mut sup, &mut rng, &items, t.batch_pixels, arch.patch)?;
        rows.push(
            train_step(&mut model, t, step, plan.steps, &sup, None, &mut grad).map_err(|e| numeric(FLAT_STAGE, step, e))?,
        );
    }
    let log = StageLog { stage: FLAT_STAGE, plan, seed, pool_size: items.len(), rows, relabel: None, mix: MixAudit::default() };
    Ok((model, RunRecord { method: Method::PseudoFlat, config: cfg.clone(), stages: vec![log], checkpoints: Vec::new() }))
}

/// Supervised loss on the ground rung plus ClassMix between pairs of pooled
/// unlabeled images, in one phase.
pub fn run_classmix_flat(n1: &ModelParams, data: &StageData, cfg: &CurriculumConfig) -> Result<(ModelParams, RunRecord)> {
    cfg.validate()?;
    data.validate()?;
    if data.unlabeled.is_empty() {
        return Err(invalid("ClassMix needs unlabeled images"));
    }
    let arch = *n1.arch();
    let pooled: Vec<&Image> = data.unlabeled.iter().flat_map(|s| s.images.iter().map(|(_, img)| &**img)).collect();
    let plan = flat_plan(cfg, data, true);
    let mut model = flat_start(n1, cfg)?;
    let seed = derive_seed(cfg.seed, SEED_SAMPLE, FLAT_STAGE + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<&LabeledImage> = data.ground.items.iter().collect();
    let mut cache = PredictionCache::new(pooled.len(), cfg.prediction_refreshes, plan.steps);
    let t = &cfg.stage;
    let mut sup = PixelBatch::with_capacity(arch.feature_dim(), t.batch_pixels);
    let mut aug = PixelBatch::with_capacity(arch.feature_dim(), t.batch_pixels);
    let mut grad = vec![0.0; arch.param_count()];
    let mut rows = Vec::with_capacity(plan.steps);
    let mut mix = MixAudit::default();
    for step in 0..plan.steps {
        sup.clear();
        aug.clear();
        push_pool_pixels(&mut sup, &mut rng, &items, t.batch_pixels, arch.patch)?;
        let a = rng.random_range(0..pooled.len());
        let b = if pooled.len() > 1 {
            let b = rng.random_range(0..pooled.len() - 1);
            if b >= a {
                b + 1
            } else {
                b
            }
        } else {
            a
        };
        let pred_a = cache.get(a, pooled[a], &model, step)?.clone();
        let pred_b = cache.get(b, pooled[b], &model, step)?;
        let mixed = class_mix(pooled[a], &pred_a, pooled[b], pred_b, &mut rng)?;
        if mixed.image == *pooled[a] && mixed.labels == pred_a {
            mix.passthrough += 1;
        } else {
            mix.mixed += 1;
        }
        mix.unlabeled_partners += 1;
        push_pixels(&mut aug, &mut rng, &mixed.image, &mixed.labels, t.batch_pixels, arch.patch);
        let lambda = lambda_at(plan.lambda, step, plan.steps)?;
        let row = train_step(&mut model, t, step, plan.steps, &sup, Some((&aug, lambda)), &mut grad)
            .map_err(|e| numeric(FLAT_STAGE, step, e))?;
        rows.push(row);
    }
    let log = StageLog { stage: FLAT_STAGE, plan, seed, pool_size: items.len(), rows, relabel: None, mix };
    Ok((model, RunRecord { method: Method::ClassmixFlat, config: cfg.clone(), stages: vec![log], checkpoints: Vec::new() }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Interval,
    NoMixview,
    NoNnpl,
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "interval" => Ok(AblationKind::Interval),
            "no_mixview" => Ok(AblationKind::NoMixview),
            "no_nnpl" => Ok(AblationKind::NoNnpl),
            other => Err(invalid(format!("unknown ablation kind '{other}'"))),
        }
    }
}

/// A named configuration and rung subset compared within an ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationVariant {
    pub name: String,
    pub config: CurriculumConfig,
    pub rungs: Vec<usize>,
}

pub fn ablation_variants(kind: AblationKind, base: &CurriculumConfig, rung_count: usize) -> Result<Vec<AblationVariant>> {
    let full = AblationVariant { name: "full".into(), config: base.clone(), rungs: interval_rungs(rung_count, 1)? };
    Ok(match kind {
        AblationKind::Interval => (1..=3)
            .map(|k| {
                Ok(AblationVariant {
                    name: format!("interval_{k}"),
                    config: base.clone(),
                    rungs: interval_rungs(rung_count, k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        AblationKind::NoMixview => vec![
            full.clone(),
            AblationVariant { name: "no_mixview".into(), config: CurriculumConfig { mixview: false, ..base.clone() }, ..full },
        ],
        AblationKind::NoNnpl => vec![
            full.clone(),
            AblationVariant { name: "no_nnpl".into(), config: CurriculumConfig { nnpl: false, ..base.clone() }, ..full },
        ],
    })
}

/// Per-rung mIoU of one model, and the cross-rung mean and std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub rows: Vec<MetricsRow>,
    pub mean: f64,
    pub std: f64,
}

/// Evaluates `model` on every sequence, one row each.
pub fn evaluate_sequences(model: &ModelParams, sequences: &[GeneratedSequence]) -> Result<Vec<MetricsRow>> {
    sequences
        .iter()
        .map(|s| {
            let counts = evaluate_frames(model, s.frames.iter().map(|(i, l)| (i, l)))?;
            metrics_row(&s.id, s.height_m, &counts)
        })
        .collect()
}

pub fn comparison_row(name: &str, model: &ModelParams, sequences: &[GeneratedSequence]) -> Result<ComparisonRow> {
    let rows = evaluate_sequences(model, sequences)?;
    let mious: Vec<f64> = rows.iter().map(|r| r.miou).collect();
    let (mean, std) = crate::metrics::aggregate(&mious)?;
    Ok(ComparisonRow { name: name.to_string(), rows, mean, std })
}

/// Runs every variant of `kind` from `n1` and evaluates on `eval` (the
/// rungs above the ground one). The first row is the ground model itself.
pub fn run_ablation(
    kind: AblationKind,
    n1: &ModelParams,
    data: &StageData,
    eval: &[GeneratedSequence],
    base: &CurriculumConfig,
) -> Result<Vec<ComparisonRow>> {
    let rung_count = data.unlabeled.iter().map(|s| s.rung + 1).max().unwrap_or(1);
    let mut table = vec![comparison_row("ground_only", n1, eval)?];
    for variant in ablation_variants(kind, base, rung_count)? {
        let outcome = run_progressive(n1, &data.restrict(&variant.rungs)?, &variant.config)?;
        table.push(comparison_row(&variant.name, &outcome.model, eval)?);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ClassId;

    #[test]
    fn lambda_endpoints() {
        assert_eq!(lambda_at(LambdaSchedule::Linear, 0, 10).unwrap(), 0.0);
        assert_eq!(lambda_at(LambdaSchedule::Linear, 10, 10).unwrap(), 1.0);
        assert_eq!(lambda_at(LambdaSchedule::Linear, 5, 10).unwrap(), 0.5);
        assert_eq!(lambda_at(LambdaSchedule::Constant { value: 0.3 }, 7, 10).unwrap(), 0.3);
        assert!(lambda_at(LambdaSchedule::Linear, 11, 10).is_err());
        assert!(lambda_at(LambdaSchedule::Constant { value: 1.5 }, 0, 10).is_err());
    }

    #[test]
    fn interval_splits() {
        assert_eq!(interval_rungs(10, 1).unwrap(), (1..10).collect::<Vec<_>>());
        // 0-based: h3, h5, h7, h9 and h4, h7, h10
        assert_eq!(interval_rungs(10, 2).unwrap(), vec![2, 4, 6, 8]);
        assert_eq!(interval_rungs(10, 3).unwrap(), vec![3, 6, 9]);
        assert!(interval_rungs(10, 0).is_err());
    }

    #[test]
    fn ablation_kind_parsing() {
        assert_eq!("no-mixview".parse::<AblationKind>().unwrap(), AblationKind::NoMixview);
        assert_eq!("no_nnpl".parse::<AblationKind>().unwrap(), AblationKind::NoNnpl);
        assert!(matches!("dropout".parse::<AblationKind>(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn cache_refresh_periods() {
        let cache = PredictionCache::new(1, 3, 300);
        assert_eq!(cache.period(0), 0);
        assert_eq!(cache.period(99), 0);
        assert_eq!(cache.period(100), 1);
        assert_eq!(cache.period(299), 2);
    }

    #[test]
    fn loss_csv_header() {
        let row = LossRow { step: 0, lr: 0.01, lambda: 0.0, loss_sup: 1.0, loss_aug: 2.0, loss_total: 1.0 };
        let csv = loss_csv(&[row]);
        assert!(csv.starts_with("step,lr,lambda,loss_sup,loss_aug,loss_total\n0,"));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn ground_training_rejects_pseudo_labels() {
        let set = PseudoLabeledSet {
            rung: 0,
            producer: Producer::Model { stage: 1 },
            items: vec![LabeledImage {
                sample_id: 0,
                image: std::sync::Arc::new(Image::filled(8, 8, [0; 3]).unwrap()),
                label: LabelMap::filled(8, 8, ClassId(0)).unwrap(),
                mean_confidence: 1.0,
                ignore: None,
            }],
        };
        assert!(train_ground(&set, 2, &CurriculumConfig::default()).is_err());
    }
}
