//! Training of the singular value predictor on latent pairs.
//!
//! The training set expands each `(x, z)` pair into `N` samples; sample `i`
//! is `(x + σ·g, z + σ·g')` with the noise streams seeded from
//! `(seed, pair, i, role)`. Each sample contributes one item per channel,
//! and batches are drawn from a per-epoch shuffle of all channel items.
//!
//! Within a batch, items that refer to the same source (with `σ = 0` every
//! sample of a pair is the same source) are evaluated once and weighted by
//! their multiplicity; the batch objective is the mean of `L_AVI` over items.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avi::{AviConfig, AviPlan, Lambdas, LossParts, SingularValuePredictor, DEFAULT_K};
use crate::error::{Error, Result};
use crate::latent::{load_latent, perturb, LatentTensor, Shape};
use crate::linalg::{frobenius_distance, Matrix};
use crate::phi::{adam_step, AdamState, ParamGradients, PhiDims, PhiModel};
use crate::rng::{derive_seed, Rng};

pub const DEFAULT_SIGMA: f64 = 0.05;
pub const DEFAULT_BATCH: usize = 256;
pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_EPOCHS: usize = 5;

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_SAMPLE: u64 = 3;

/// Samples per pair when none is given: 5000 for up to five pairs, 500
/// beyond that.
pub fn default_samples_per_pair(pairs: usize) -> usize {
    if pairs > 5 {
        500
    } else {
        5000
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub pairs: Vec<(PathBuf, PathBuf)>,
    /// `None` selects [`default_samples_per_pair`].
    pub samples_per_pair: Option<usize>,
    pub sigma: f64,
    pub k: usize,
    pub rho: f64,
    pub lambdas: Lambdas,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Hidden width; `None` uses `H·W`.
    pub hidden: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            samples_per_pair: None,
            sigma: DEFAULT_SIGMA,
            k: DEFAULT_K,
            rho: 1.0,
            lambdas: Lambdas::default(),
            batch: DEFAULT_BATCH,
            lr: DEFAULT_LR,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            hidden: None,
        }
    }
}

impl TrainConfig {
    pub fn samples(&self, pairs: usize) -> usize {
        self.samples_per_pair.unwrap_or_else(|| default_samples_per_pair(pairs))
    }

    pub fn avi(&self) -> AviConfig {
        AviConfig { k: self.k, rho: self.rho, lambdas: self.lambdas }
    }

    pub fn validate(&self) -> Result<()> {
        self.avi().validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("learning rate must be >= 0, got {}", self.lr));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if self.samples_per_pair == Some(0) {
            return bad("samples per pair must be >= 1".into());
        }
        if self.hidden == Some(0) {
            return bad("hidden width must be >= 1".into());
        }
        Ok(())
    }
}

/// One channel of one sample of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelItem {
    pub pair: usize,
    pub sample: usize,
    pub channel: usize,
}

/// Identity of the data behind an item; items with equal keys hold
/// identical channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SourceKey {
    pub pair: usize,
    pub sample: usize,
    pub channel: usize,
}

/// The expanded training set. Samples are generated on demand from the
/// pair tensors and the seed, so memory does not grow with `N`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pairs: Vec<(LatentTensor, LatentTensor)>,
    shape: Shape,
    samples_per_pair: usize,
    sigma: f64,
    seed: u64,
}

impl Dataset {
    pub fn new(
        pairs: Vec<(LatentTensor, LatentTensor)>,
        samples_per_pair: usize,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let shape = pairs
            .first()
            .ok_or_else(|| Error::InvalidArgument("at least one latent pair is required".into()))?
            .0
            .shape();
        for (i, (x, z)) in pairs.iter().enumerate() {
            if x.shape() != shape || z.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "pair {i} has shapes {} / {}, expected {shape}",
                    x.shape(),
                    z.shape()
                )));
            }
        }
        if samples_per_pair == 0 {
            return Err(Error::InvalidArgument("samples per pair must be >= 1".into()));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { pairs, shape, samples_per_pair, sigma, seed })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn num_samples(&self) -> usize {
        self.pairs.len() * self.samples_per_pair
    }

    /// Number of channel items.
    pub fn len(&self) -> usize {
        self.num_samples() * self.shape.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Items are ordered pair-major, then sample, then channel.
    pub fn item(&self, idx: usize) -> ChannelItem {
        let c = self.shape.channels;
        let per_pair = self.samples_per_pair * c;
        ChannelItem { pair: idx / per_pair, sample: (idx % per_pair) / c, channel: idx % c }
    }

    pub fn key(&self, item: &ChannelItem) -> SourceKey {
        SourceKey { pair: item.pair, sample: if self.sigma == 0.0 { 0 } else { item.sample }, channel: item.channel }
    }

    /// The perturbed `(x, z)` tensors of one sample.
    pub fn sample(&self, pair: usize, sample: usize) -> Result<(LatentTensor, LatentTensor)> {
        let (x, z) = &self.pairs[pair];
        let seed = |role: u64| derive_seed(self.seed, &[STREAM_SAMPLE, pair as u64, sample as u64, role]);
        Ok((perturb(x, self.sigma, seed(0))?, perturb(z, self.sigma, seed(1))?))
    }

    pub fn channel_pair(&self, item: &ChannelItem) -> Result<(Matrix, Matrix)> {
        let (x, z) = self.sample(item.pair, item.sample)?;
        Ok((x.channel(item.channel), z.channel(item.channel)))
    }

    /// Every sample as a tensor pair, in order.
    pub fn samples(&self) -> impl Iterator<Item = Result<(LatentTensor, LatentTensor)>> + '_ {
        (0..self.pairs.len())
            .flat_map(move |p| (0..self.samples_per_pair).map(move |s| (p, s)))
            .map(move |(p, s)| self.sample(p, s))
    }
}

fn load_pairs(cfg: &TrainConfig) -> Result<Vec<(LatentTensor, LatentTensor)>> {
    cfg.pairs.iter().map(|(x, z)| Ok((load_latent(x)?, load_latent(z)?))).collect()
}

/// Loads the configured pairs and expands them into the training set.
pub fn make_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    cfg.validate()?;
    let pairs = load_pairs(cfg)?;
    let n = cfg.samples(pairs.len());
    Dataset::new(pairs, n, cfg.sigma, cfg.seed)
}

/// Mean losses over one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub parts: LossParts,
    pub total: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub parts: LossParts,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub wall_ms: u64,
    pub config: TrainConfig,
}

impl TrainHistory {
    /// CSV with header `step,epoch,L1,L2,L3,L4,L_total,wall_ms`. Without
    /// `include_wall_time` the last column is written as 0 so the file is
    /// reproducible.
    pub fn to_csv(&self, include_wall_time: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "epoch", "L1", "L2", "L3", "L4", "L_total", "wall_ms"])?;
        for r in &self.steps {
            let wall = if include_wall_time { r.wall_ms } else { 0 };
            w.write_record([
                r.step.to_string(),
                r.epoch.to_string(),
                r.parts.l1.to_string(),
                r.parts.l2.to_string(),
                r.parts.l3.to_string(),
                r.parts.l4.to_string(),
                r.total.to_string(),
                wall.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn epoch_totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }
}

/// Result of evaluating `L_AVI` and its gradient on a weighted set of plans.
#[derive(Debug, Clone)]
pub struct Objective {
    pub parts: LossParts,
    pub total: f64,
    pub grads: ParamGradients,
}

/// Weighted `L_AVI` over `(plan, weight)` entries and its exact gradient
/// with respect to every parameter of `model`. Gradients flow through `S`
/// and `Δs` only.
pub fn batch_objective(model: &PhiModel, entries: &[(&AviPlan, f64)], lambdas: &Lambdas) -> Result<Objective> {
    let mut grads = ParamGradients::zeros_like(model);
    let (parts, total) = batch_objective_into(model, entries, lambdas, &mut grads)?;
    Ok(Objective { parts, total, grads })
}

fn batch_objective_into(
    model: &PhiModel,
    entries: &[(&AviPlan, f64)],
    lambdas: &Lambdas,
    grads: &mut ParamGradients,
) -> Result<(LossParts, f64)> {
    let dims = model.dims();
    let rows = entries.len();
    let mut input = Vec::with_capacity(rows * dims.input);
    for (plan, _) in entries {
        if plan.x.rows() * plan.x.cols() != dims.input || plan.n() != dims.output {
            return Err(Error::DimensionMismatch(format!(
                "model dims {dims:?} do not fit {}x{} channels",
                plan.x.rows(),
                plan.x.cols()
            )));
        }
        input.extend_from_slice(plan.x.as_slice());
    }
    let (out, cache) = model.forward_batch(&input, rows)?;

    let per_item: Vec<(LossParts, f64, Vec<f64>, Vec<f64>)> = entries
        .par_iter()
        .enumerate()
        .map(|(r, (plan, w))| {
            let (parts, g) = plan.loss_and_grad(out.s_row(r), out.delta_s_row(r), lambdas)?;
            let total = parts.total(lambdas);
            let gs = g.s.iter().map(|v| v * w).collect();
            let gd = g.delta_s.iter().map(|v| v * w).collect();
            Ok((parts.scaled(*w), total * w, gs, gd))
        })
        .collect::<Result<_>>()?;

    let mut parts = LossParts::default();
    let mut total = 0.0;
    let mut grad_s = Vec::with_capacity(rows * dims.output);
    let mut grad_ds = Vec::with_capacity(rows * dims.output);
    for (p, t, gs, gd) in per_item {
        parts.add(&p);
        total += t;
        grad_s.extend(gs);
        grad_ds.extend(gd);
    }
    grads.fill_zero();
    model.backward_into(&cache, &grad_s, &grad_ds, grads)?;
    Ok((parts, total))
}

/// Trains a fresh model on the configured pair files.
pub fn train(cfg: &TrainConfig) -> Result<(PhiModel, TrainHistory)> {
    let ds = make_dataset(cfg)?;
    train_on(&ds, cfg)
}

/// Model dimensions used for a dataset under `cfg`.
pub fn model_dims(shape: Shape, cfg: &TrainConfig) -> PhiDims {
    let mut dims = PhiDims::for_channel(shape.height, shape.width);
    if let Some(h) = cfg.hidden {
        dims.hidden = h;
    }
    dims
}

/// Fresh model initialized from `cfg.seed`.
pub fn init_for(shape: Shape, cfg: &TrainConfig) -> Result<PhiModel> {
    PhiModel::init(model_dims(shape, cfg), derive_seed(cfg.seed, &[STREAM_INIT]))
}

pub fn train_on(ds: &Dataset, cfg: &TrainConfig) -> Result<(PhiModel, TrainHistory)> {
    let model = init_for(ds.shape(), cfg)?;
    train_from(model, ds, cfg)
}

/// Runs the optimization loop starting from `model`.
pub fn train_from(mut model: PhiModel, ds: &Dataset, cfg: &TrainConfig) -> Result<(PhiModel, TrainHistory)> {
    cfg.validate()?;
    let shape = ds.shape();
    if shape.height != shape.width {
        return Err(Error::ShapeMismatch(format!("channels must be square, got {shape}")));
    }
    if model.dims() != model_dims(shape, cfg) {
        return Err(Error::DimensionMismatch(format!("model dims {:?} vs data {shape}", model.dims())));
    }
    let start = Instant::now();
    let mut adam = AdamState::new(&model);
    let mut grads = ParamGradients::zeros_like(&model);
    let mut rng = Rng::new(derive_seed(cfg.seed, &[STREAM_SHUFFLE]));
    let cache_plans = ds.sigma == 0.0;
    let mut plan_cache: HashMap<SourceKey, Arc<AviPlan>> = HashMap::new();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..ds.len()).collect();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_parts = LossParts::default();
        let mut epoch_total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            // Unique sources in first-appearance order, with multiplicities.
            let mut slot: HashMap<SourceKey, usize> = HashMap::new();
            let mut uniq: Vec<(SourceKey, ChannelItem, usize)> = Vec::new();
            for &idx in chunk {
                let item = ds.item(idx);
                let key = ds.key(&item);
                match slot.get(&key) {
                    Some(&u) => uniq[u].2 += 1,
                    None => {
                        slot.insert(key, uniq.len());
                        uniq.push((key, item, 1));
                    }
                }
            }
            let missing: Vec<(SourceKey, ChannelItem)> =
                uniq.iter().filter(|(k, _, _)| !plan_cache.contains_key(k)).map(|(k, i, _)| (*k, *i)).collect();
            let fresh: Vec<(SourceKey, Arc<AviPlan>)> = missing
                .par_iter()
                .map(|(k, item)| {
                    let (x, z) = ds.channel_pair(item)?;
                    Ok((*k, Arc::new(AviPlan::new(&x, &z, cfg.k, cfg.rho)?)))
                })
                .collect::<Result<_>>()?;
            let mut local: HashMap<SourceKey, Arc<AviPlan>> = fresh.into_iter().collect();
            let plans: Vec<Arc<AviPlan>> = uniq
                .iter()
                .map(|(k, _, _)| {
                    plan_cache.get(k).cloned().or_else(|| local.get(k).cloned()).expect("plan computed above")
                })
                .collect();
            if cache_plans {
                plan_cache.extend(local.drain());
            }

            let n = chunk.len() as f64;
            let entries: Vec<(&AviPlan, f64)> =
                plans.iter().zip(&uniq).map(|(p, (_, _, count))| (p.as_ref(), *count as f64 / n)).collect();
            let (parts, total) = batch_objective_into(&model, &entries, &cfg.lambdas, &mut grads)?;
            let step = steps.len();
            if !total.is_finite() {
                return Err(Error::Diverged { step, value: total });
            }
            adam_step(&mut model, &mut adam, &grads, cfg.lr)?;
            epoch_parts.add(&parts.scaled(n));
            epoch_total += total * n;
            steps.push(StepRecord { step, epoch, parts, total, wall_ms: start.elapsed().as_millis() as u64 });
        }
        let m = ds.len() as f64;
        let record = EpochRecord { epoch, parts: epoch_parts.scaled(1.0 / m), total: epoch_total / m };
        log::info!("epoch {epoch}: mean L_AVI {:.6e}", record.total);
        epochs.push(record);
    }
    let history = TrainHistory { steps, epochs, wall_ms: start.elapsed().as_millis() as u64, config: cfg.clone() };
    Ok((model, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelEval {
    pub channel: usize,
    /// `‖y_pred − x‖_F`
    pub pred_to_x: f64,
    /// `‖y_pred − z‖_F`
    pub pred_to_z: f64,
    /// `‖ŷ − z‖_F`
    pub y_hat_to_z: f64,
    /// `‖ỹ − x‖_F`
    pub y_tilde_to_x: f64,
    /// `‖y_pred − x‖ / ‖y_pred − z‖`
    pub fidelity_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub channels: Vec<ChannelEval>,
    pub mean_ratio: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

/// Distances of the edited output to both sources, per channel.
pub fn evaluate(
    predictor: &dyn SingularValuePredictor,
    x: &LatentTensor,
    z: &LatentTensor,
    cfg: &AviConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if x.shape() != z.shape() {
        return Err(Error::ShapeMismatch(format!("x is {} but z is {}", x.shape(), z.shape())));
    }
    let channels: Vec<ChannelEval> = (0..x.shape().channels)
        .into_par_iter()
        .map(|c| {
            let (xc, zc) = (x.channel(c), z.channel(c));
            let plan = AviPlan::new(&xc, &zc, cfg.k, cfg.rho)?;
            let (s, d) = predictor.predict(&xc)?;
            let inf = plan.inference(&s, &d)?;
            let tr = plan.training(&s, &d)?;
            let pred_to_x = frobenius_distance(&inf.y_pred, &xc)?;
            let pred_to_z = frobenius_distance(&inf.y_pred, &zc)?;
            Ok(ChannelEval {
                channel: c,
                pred_to_x,
                pred_to_z,
                y_hat_to_z: frobenius_distance(&tr.y_hat, &zc)?,
                y_tilde_to_x: frobenius_distance(&tr.y_tilde, &xc)?,
                fidelity_ratio: ratio(pred_to_x, pred_to_z),
            })
        })
        .collect::<Result<_>>()?;
    let mean_ratio = channels.iter().map(|c| c.fidelity_ratio).sum::<f64>() / channels.len() as f64;
    Ok(EvalReport { channels, mean_ratio })
}
