//! Three-stage rate-adaptive training and the single-rate baseline.
//!
//! Stage 1 trains `Φ` (`m_max` rows) jointly with the network parameters `Θ`;
//! it is the single-rate baseline at `m = m_max`. Stage 2 freezes `Θ` and
//! re-optimizes the first `k_min` rows. Stage 3 appends the remaining rows one
//! at a time, each initialized from the Stage-1 matrix and trained alone with
//! every earlier row and `Θ` frozen. The decoder is always the pseudoinverse of
//! the prefix in use.

mod checkpoint;

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{self, BlockDataset};
use crate::error::{Error, Result};
use crate::models::{Head, ModelSpec};
use crate::nn::{adam_step, AdamConfig, AdamState, ModelParams, Network, Objective};
use crate::sensing::MeasurementMatrix;
use crate::tensor::Tensor;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_VERSION};

/// Consecutive failed steps tolerated before a run is aborted.
pub const MAX_BAD_STEPS: usize = 10;

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResetPolicy {
    /// Fresh Adam moments for each stage and for each Stage-3 row.
    PerSubproblem,
    /// Moments for `Φ` carry over between Stage-3 rows of the same slot.
    Never,
}

impl ResetPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResetPolicy::PerSubproblem => "per-subproblem",
            ResetPolicy::Never => "never",
        }
    }
}

impl FromStr for ResetPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-subproblem" => Ok(ResetPolicy::PerSubproblem),
            "never" => Ok(ResetPolicy::Never),
            other => Err(Error::invalid(format!("unknown reset policy `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub k_min: usize,
    pub m_max: usize,
    pub max_iters_1: usize,
    pub max_iters_2: usize,
    pub iters_per_row: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of the training blocks held out for model selection.
    pub val_fraction: f64,
    /// Steps between validation passes (a pass also runs at the start and end
    /// of every sub-problem).
    pub val_interval: usize,
    pub reset: ResetPolicy,
}

impl TrainConfig {
    /// Small iteration budget suited to synthetic 16×16 data on one core.
    pub fn desk(k_min: usize, m_max: usize) -> Self {
        Self {
            k_min,
            m_max,
            max_iters_1: 5000,
            max_iters_2: 2000,
            iters_per_row: 50,
            lr: 1e-4,
            batch_size: 32,
            seed: 0,
            val_fraction: 0.1,
            val_interval: 250,
            reset: ResetPolicy::PerSubproblem,
        }
    }

    /// Iteration budget of the full-size experiments.
    pub fn paper(k_min: usize, m_max: usize) -> Self {
        Self {
            max_iters_1: 300_000,
            max_iters_2: 200_000,
            iters_per_row: 500,
            val_interval: 5000,
            ..Self::desk(k_min, m_max)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 || self.k_min > self.m_max {
            return Err(Error::invalid(format!(
                "need 1 <= k_min <= m_max, got k_min={}, m_max={}",
                self.k_min, self.m_max
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!(
                "validation fraction {} must be in [0, 1)",
                self.val_fraction
            )));
        }
        if self.val_interval == 0 {
            return Err(Error::invalid("validation interval must be positive"));
        }
        Ok(())
    }

    /// `max_iters_1 + max_iters_2 + iters_per_row·(m_max − k_min)`.
    pub fn total_iterations(&self) -> usize {
        self.max_iters_1 + self.max_iters_2 + self.iters_per_row * (self.m_max - self.k_min)
    }

    pub fn to_meta(&self) -> String {
        format!(
            "k_min = {}\nm_max = {}\nmax_iters_1 = {}\nmax_iters_2 = {}\niters_per_row = {}\n\
             lr = {:?}\nbatch_size = {}\nseed = {}\nval_fraction = {:?}\nval_interval = {}\nreset = {}\n",
            self.k_min,
            self.m_max,
            self.max_iters_1,
            self.max_iters_2,
            self.iters_per_row,
            self.lr,
            self.batch_size,
            self.seed,
            self.val_fraction,
            self.val_interval,
            self.reset.as_str()
        )
    }

    pub fn from_meta(meta: &str) -> Result<Self> {
        fn field<T: FromStr>(meta: &str, key: &str) -> Result<T> {
            meta.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .ok_or_else(|| Error::Format(format!("training description lacks `{key}`")))?
                .1
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad value for `{key}`")))
        }
        Ok(Self {
            k_min: field(meta, "k_min")?,
            m_max: field(meta, "m_max")?,
            max_iters_1: field(meta, "max_iters_1")?,
            max_iters_2: field(meta, "max_iters_2")?,
            iters_per_row: field(meta, "iters_per_row")?,
            lr: field(meta, "lr")?,
            batch_size: field(meta, "batch_size")?,
            seed: field(meta, "seed")?,
            val_fraction: field(meta, "val_fraction")?,
            val_interval: field(meta, "val_interval")?,
            reset: field::<String>(meta, "reset")?.parse()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Init = 0,
    One = 1,
    Two = 2,
    Three = 3,
}

impl Stage {
    pub(crate) fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Stage::Init),
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            3 => Ok(Stage::Three),
            other => Err(Error::Format(format!("unknown stage marker {other}"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Init => "init",
            Stage::One => "stage1",
            Stage::Two => "stage2",
            Stage::Three => "stage3",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub stage: Stage,
    pub r: usize,
    /// Step within the current sub-problem.
    pub step: usize,
    /// Mean training loss since the previous entry; `None` before any step.
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Iterations run in Stages 1, 2 and 3 (skipped steps included).
    pub steps: [usize; 3],
    /// Steps dropped by the divergence guard.
    pub skipped: usize,
    pub log: Vec<LogEntry>,
}

impl TrainReport {
    pub fn total_steps(&self) -> usize {
        self.steps.iter().sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("stage,r,step,train_loss,val_loss\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6e}"));
        for e in &self.log {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.stage,
                e.r,
                e.step,
                opt(e.train_loss),
                opt(e.val_loss)
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Hooks called while training. Every method defaults to a no-op.
pub trait TrainObserver {
    /// After each stage, with the state a resumed run would start from.
    fn stage_done(&mut self, _checkpoint: &Checkpoint) {}
    /// Stage 3, after row `r` has been appended and before it is trained.
    fn row_start(&mut self, _r: usize, _phi: &MeasurementMatrix<f32>) {}
    /// Stage 3, after row `r` has been trained.
    fn row_end(&mut self, _r: usize, _phi: &MeasurementMatrix<f32>) {}
}

impl TrainObserver for () {}

/// Shared state of one training run: the train/validation split, the batch
/// sampler and the bookkeeping.
pub struct TrainContext {
    spec: ModelSpec,
    cfg: TrainConfig,
    train: BlockDataset,
    val: BlockDataset,
    rng: ChaCha8Rng,
    report: TrainReport,
}

impl TrainContext {
    pub fn new(dataset: &BlockDataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if dataset.n() != spec.n() {
            return Err(Error::dim(format!(
                "blocks have n={}, model expects {}",
                dataset.n(),
                spec.n()
            )));
        }
        if cfg.m_max > spec.n() {
            return Err(Error::invalid(format!(
                "m_max={} exceeds n={}",
                cfg.m_max,
                spec.n()
            )));
        }
        if let ModelSpec::Classifier(c) = spec {
            match dataset.num_classes() {
                None => return Err(Error::invalid("classifier training needs labels")),
                Some(k) if k > c.num_classes => {
                    return Err(Error::invalid(format!(
                        "labels span {k} classes, classifier has {}",
                        c.num_classes
                    )))
                }
                _ => {}
            }
        }
        let (train, val, _) = data::split(
            dataset,
            [1.0 - cfg.val_fraction, cfg.val_fraction, 0.0],
            cfg.seed ^ 0x5eed_5eed,
        )?;
        if train.is_empty() {
            return Err(Error::invalid("no blocks left for training after the hold-out"));
        }
        Ok(Self {
            spec: spec.clone(),
            cfg: cfg.clone(),
            train,
            val,
            rng: stream_rng(cfg.seed, 2),
            report: TrainReport::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn into_report(self) -> TrainReport {
        self.report
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    pub fn restore_rng(&mut self, state: &RngState) {
        self.rng = state.restore();
    }

    pub fn validation_set(&self) -> &BlockDataset {
        &self.val
    }

    /// Mean loss over `dataset` at prefix `r`.
    pub fn eval_loss(
        &self,
        net: &Network<f32>,
        phi: &MeasurementMatrix<f32>,
        r: usize,
        dataset: &BlockDataset,
    ) -> Result<f64> {
        eval_loss(&self.spec, net, phi, r, dataset)
    }

    fn checkpoint(
        &self,
        stage: Stage,
        phi: &MeasurementMatrix<f32>,
        phi_full: Option<&MeasurementMatrix<f32>>,
        net: &Network<f32>,
    ) -> Checkpoint {
        Checkpoint::new(
            stage,
            self.spec.clone(),
            self.cfg.clone(),
            phi,
            phi_full,
            net.params(),
            Some(self.rng_state()),
        )
    }

    /// One sub-problem: `iters` Adam steps at prefix `r`, updating `Θ` when
    /// `train_theta` and the `Φ` rows flagged trainable. The best validation
    /// snapshot (the starting point included) is restored at the end.
    fn optimize(
        &mut self,
        stage: Stage,
        net: &mut Network<f32>,
        phi: &mut MeasurementMatrix<f32>,
        phi_full: Option<&MeasurementMatrix<f32>>,
        r: usize,
        iters: usize,
        adam: &mut AdamState<f32>,
    ) -> Result<()> {
        let n = phi.n();
        let theta_slots = net.params().len();
        let train_theta = net.params().count_trainable() > 0;
        let rows = phi.prefix(r)?.trainable();
        let span = rows.start * n..rows.end * n;
        let use_val = !self.val.is_empty();

        let mut best_val = f64::INFINITY;
        let mut best: Option<(Option<ModelParams<f32>>, Vec<f32>)> = None;
        let mut run_loss = 0.0;
        let mut run_count = 0usize;
        let mut bad = 0usize;

        for step in 0..=iters {
            if step % self.cfg.val_interval == 0 || step == iters {
                let val_loss = if use_val {
                    let v = match self.eval_loss(net, phi, r, &self.val) {
                        Ok(v) => v,
                        Err(Error::Numeric { .. } | Error::Singular(_)) => f64::INFINITY,
                        Err(e) => return Err(e),
                    };
                    if v < best_val || best.is_none() {
                        best_val = v;
                        best = Some((
                            train_theta.then(|| net.params().clone()),
                            phi.rows()[span.clone()].to_vec(),
                        ));
                    }
                    Some(v)
                } else {
                    None
                };
                self.report.log.push(LogEntry {
                    stage,
                    r,
                    step,
                    train_loss: (run_count > 0).then(|| run_loss / run_count as f64),
                    val_loss,
                });
                debug!(
                    "{stage} r={r} step {step}/{iters}: train {:?} val {val_loss:?}",
                    (run_count > 0).then(|| run_loss / run_count as f64)
                );
                run_loss = 0.0;
                run_count = 0;
            }
            if step == iters {
                break;
            }
            self.report.steps[stage as usize - 1] += 1;

            let picks: Vec<usize> = (0..self.cfg.batch_size)
                .map(|_| self.rng.random_range(0..self.train.len()))
                .collect();
            match self.try_step(net, phi, r, &picks, adam, theta_slots, &span) {
                Ok(loss) => {
                    bad = 0;
                    run_loss += loss;
                    run_count += 1;
                }
                Err(err @ (Error::Numeric { .. } | Error::Singular(_))) => {
                    bad += 1;
                    self.report.skipped += 1;
                    warn!("{stage} r={r} step {step}: skipped ({err})");
                    if bad >= MAX_BAD_STEPS {
                        let last_good = self.checkpoint(stage, phi, phi_full, net);
                        return Err(Error::Diverged {
                            stage: stage.to_string(),
                            step,
                            last_good: Some(Box::new(last_good)),
                        });
                    }
                }
                Err(other) => return Err(other),
            }
        }

        if let Some((params, rows_best)) = best {
            if let Some(p) = params {
                *net.params_mut() = p;
            }
            phi.rows_mut()[span].copy_from_slice(&rows_best);
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn try_step(
        &self,
        net: &mut Network<f32>,
        phi: &mut MeasurementMatrix<f32>,
        r: usize,
        picks: &[usize],
        adam: &mut AdamState<f32>,
        phi_slot: usize,
        span: &std::ops::Range<usize>,
    ) -> Result<f64> {
        let x = self.train.batch(picks);
        let labels = self.train.batch_labels(picks);
        let (loss, grads) = {
            let prefix = phi.prefix(r)?;
            let (out, tape) = net.forward(Some(&prefix), &x)?;
            let (loss, dout) = objective(&self.spec, &x, labels.as_deref())?.evaluate(&out)?;
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    layer: "loss".into(),
                    detail: "loss is not finite".into(),
                });
            }
            (loss, net.backward(&tape, &dout)?)
        };
        let grad_ok = grads
            .params
            .iter()
            .flatten()
            .chain(grads.phi.iter())
            .all(|g| g.first_non_finite().is_none());
        if !grad_ok {
            return Err(Error::Numeric {
                layer: "backward".into(),
                detail: "gradient is not finite".into(),
            });
        }
        adam_step(net.params_mut(), &grads.params, adam)?;
        if !span.is_empty() {
            let g = grads
                .phi
                .as_ref()
                .ok_or_else(|| Error::Contract("no Φ gradient for trainable rows".into()))?;
            adam.update_slot(phi_slot, &mut phi.rows_mut()[span.clone()], &g.data()[span.clone()])?;
        }
        Ok(loss as f64)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn objective<'a>(
    spec: &ModelSpec,
    x: &'a Tensor<f32>,
    labels: Option<&'a [usize]>,
) -> Result<Objective<'a, f32>> {
    match spec.head() {
        Head::Reconstruction => Ok(Objective::Euclidean(x)),
        Head::Classification => labels
            .map(Objective::CrossEntropy)
            .ok_or_else(|| Error::invalid("classification needs labels")),
    }
}

/// Mean loss of the model over every block of `dataset` at prefix `r`.
pub fn eval_loss(
    spec: &ModelSpec,
    net: &Network<f32>,
    phi: &MeasurementMatrix<f32>,
    r: usize,
    dataset: &BlockDataset,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let prefix = phi.prefix_frozen(r)?;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let x = dataset.batch(chunk);
        let labels = dataset.batch_labels(chunk);
        let (out, _) = net.forward(Some(&prefix), &x)?;
        let (loss, _) = objective(spec, &x, labels.as_deref())?.evaluate(&out)?;
        total += loss as f64 * chunk.len() as f64;
    }
    Ok(total / dataset.len() as f64)
}

/// Output of a single-rate or Stage-1 run.
#[derive(Clone, Debug)]
pub struct Trained {
    pub phi: MeasurementMatrix<f32>,
    pub net: Network<f32>,
}

fn fresh_adam(cfg: &TrainConfig) -> AdamState<f32> {
    AdamState::new(AdamConfig::with_lr(cfg.lr))
}

/// Joint training of `Φ` (`m` rows) and `Θ` for `max_iters_1` steps.
///
/// The returned `Φ` has `k_min = 1` so it can be probed at any prefix.
pub fn train_vanilla(ctx: &mut TrainContext, m: usize) -> Result<Trained> {
    let n = ctx.spec.n();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("m={m} outside [1, {n}]")));
    }
    let mut phi = MeasurementMatrix::<f32>::gaussian_init(n, m, 1, ctx.cfg.seed)?;
    let mut net: Network<f32> = ctx.spec.build(&mut stream_rng(ctx.cfg.seed, 1))?;
    net.params_mut().set_all_frozen(false);
    phi.set_trainable(0..m);
    let mut adam = fresh_adam(&ctx.cfg);
    let iters = ctx.cfg.max_iters_1;
    info!("training {} at m={m} for {iters} steps", ctx.spec.name());
    ctx.optimize(Stage::One, &mut net, &mut phi, None, m, iters, &mut adam)?;
    phi.set_trainable(0..0);
    Ok(Trained { phi, net })
}

/// Trains `Θ` for `max_iters_1` steps behind a fixed random Gaussian `Φ` of
/// `m` rows. The returned `Φ` has `k_min = 1`.
pub fn train_fixed_gaussian(ctx: &mut TrainContext, m: usize) -> Result<Trained> {
    let n = ctx.spec.n();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("m={m} outside [1, {n}]")));
    }
    let mut phi = MeasurementMatrix::<f32>::gaussian_init(n, m, 1, ctx.cfg.seed)?;
    let mut net: Network<f32> = ctx.spec.build(&mut stream_rng(ctx.cfg.seed, 1))?;
    net.params_mut().set_all_frozen(false);
    phi.set_trainable(0..0);
    let mut adam = fresh_adam(&ctx.cfg);
    let iters = ctx.cfg.max_iters_1;
    info!("training {} behind a fixed Gaussian Φ, m={m}, {iters} steps", ctx.spec.name());
    ctx.optimize(Stage::One, &mut net, &mut phi, None, m, iters, &mut adam)?;
    Ok(Trained { phi, net })
}

/// Stage 1: the single-rate network at `m_max`, with `k_min` set from the
/// configuration.
pub fn stage1_train(ctx: &mut TrainContext) -> Result<Trained> {
    let mut out = train_vanilla(ctx, ctx.cfg.m_max)?;
    out.phi.set_k_min(ctx.cfg.k_min)?;
    Ok(out)
}

/// Stage 2: re-optimizes `Φ_full(1:k_min,:)`. Every tensor of `net` is
/// marked frozen and left that way.
pub fn stage2_train(
    ctx: &mut TrainContext,
    phi_full: &MeasurementMatrix<f32>,
    net: &mut Network<f32>,
) -> Result<MeasurementMatrix<f32>> {
    let k = ctx.cfg.k_min;
    let mut phi_k = phi_full.truncated(k)?;
    phi_k.set_k_min(k)?;
    phi_k.set_trainable(0..k);
    net.params_mut().set_all_frozen(true);
    let mut adam = fresh_adam(&ctx.cfg);
    let iters = ctx.cfg.max_iters_2;
    info!("stage 2: {k} rows for {iters} steps");
    ctx.optimize(Stage::Two, net, &mut phi_k, Some(phi_full), k, iters, &mut adam)?;
    phi_k.set_trainable(0..0);
    Ok(phi_k)
}

/// Stage 3: appends rows `k_min+1 ..= m_max` of `phi_full` one at a time and
/// trains each new row alone. `net` is frozen as in Stage 2.
pub fn stage3_train(
    ctx: &mut TrainContext,
    phi_k: &MeasurementMatrix<f32>,
    phi_full: &MeasurementMatrix<f32>,
    net: &mut Network<f32>,
    observer: &mut dyn TrainObserver,
) -> Result<MeasurementMatrix<f32>> {
    let (k, m) = (ctx.cfg.k_min, ctx.cfg.m_max);
    if phi_k.m_max() != k || phi_full.m_max() != m || phi_k.n() != phi_full.n() {
        return Err(Error::dim(format!(
            "stage 3 needs {k} trained rows and a {m}-row Stage-1 matrix, got {} and {}",
            phi_k.m_max(),
            phi_full.m_max()
        )));
    }
    let mut phi = phi_k.clone();
    phi.set_trainable(0..0);
    net.params_mut().set_all_frozen(true);
    let iters = ctx.cfg.iters_per_row;
    info!("stage 3: rows {}..={m}, {iters} steps each", k + 1);
    let mut adam = fresh_adam(&ctx.cfg);
    for r in k + 1..=m {
        phi.push_row(phi_full.row(r - 1))?;
        phi.set_trainable(r - 1..r);
        if ctx.cfg.reset == ResetPolicy::PerSubproblem {
            adam = fresh_adam(&ctx.cfg);
        }
        observer.row_start(r, &phi);
        ctx.optimize(Stage::Three, net, &mut phi, Some(phi_full), r, iters, &mut adam)?;
        observer.row_end(r, &phi);
    }
    phi.set_trainable(0..0);
    Ok(phi)
}

/// Everything produced by a three-stage run.
#[derive(Clone, Debug)]
pub struct RateAdaptiveRun {
    pub spec: ModelSpec,
    pub config: TrainConfig,
    /// Final `m_max × n` matrix with `k_min` set.
    pub phi: MeasurementMatrix<f32>,
    /// `Θ`: the Stage-1 values, all marked frozen.
    pub net: Network<f32>,
    /// Stage-1 matrix; also the single-rate baseline at `m_max`.
    pub stage1_phi: MeasurementMatrix<f32>,
    pub stage2_phi: MeasurementMatrix<f32>,
    pub report: TrainReport,
}

impl RateAdaptiveRun {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            Stage::Three,
            self.spec.clone(),
            self.config.clone(),
            &self.phi,
            Some(&self.stage1_phi),
            self.net.params(),
            None,
        )
    }

    /// The Stage-1 result as a standalone single-rate model.
    pub fn baseline(&self) -> Trained {
        let mut phi = self.stage1_phi.clone();
        phi.set_k_min(1).expect("one row is always a valid prefix");
        Trained {
            phi,
            net: self.net.clone(),
        }
    }
}

pub fn run_rate_adaptive(
    dataset: &BlockDataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<RateAdaptiveRun> {
    run_rate_adaptive_with(dataset, spec, cfg, &mut ())
}

pub fn run_rate_adaptive_with(
    dataset: &BlockDataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<RateAdaptiveRun> {
    let mut ctx = TrainContext::new(dataset, spec, cfg)?;
    let Trained { phi: phi_full, mut net } = stage1_train(&mut ctx)?;
    observer.stage_done(&ctx.checkpoint(Stage::One, &phi_full, None, &net));
    let phi_k = stage2_train(&mut ctx, &phi_full, &mut net)?;
    observer.stage_done(&ctx.checkpoint(Stage::Two, &phi_k, Some(&phi_full), &net));
    let phi = stage3_train(&mut ctx, &phi_k, &phi_full, &mut net, observer)?;
    observer.stage_done(&ctx.checkpoint(Stage::Three, &phi, Some(&phi_full), &net));
    Ok(RateAdaptiveRun {
        spec: spec.clone(),
        config: cfg.clone(),
        phi,
        net,
        stage1_phi: phi_full,
        stage2_phi: phi_k,
        report: ctx.into_report(),
    })
}

/// Continues a run from a Stage-2 checkpoint. With the same dataset the result
/// equals the uninterrupted run.
pub fn resume_stage3(
    dataset: &BlockDataset,
    checkpoint: &Checkpoint,
    observer: &mut dyn TrainObserver,
) -> Result<RateAdaptiveRun> {
    if checkpoint.stage != Stage::Two {
        return Err(Error::invalid(format!(
            "can only resume from a stage2 checkpoint, got {}",
            checkpoint.stage
        )));
    }
    let phi_full = checkpoint
        .phi_full
        .as_ref()
        .ok_or_else(|| Error::Format("stage2 checkpoint lacks the Stage-1 matrix".into()))?;
    let rng = checkpoint
        .rng
        .as_ref()
        .ok_or_else(|| Error::Format("stage2 checkpoint lacks the sampler state".into()))?;
    let mut ctx = TrainContext::new(dataset, &checkpoint.model, &checkpoint.config)?;
    ctx.restore_rng(rng);
    let mut net = checkpoint.network()?;
    let phi = stage3_train(&mut ctx, &checkpoint.phi, phi_full, &mut net, observer)?;
    observer.stage_done(&ctx.checkpoint(Stage::Three, &phi, Some(phi_full), &net));
    Ok(RateAdaptiveRun {
        spec: checkpoint.model.clone(),
        config: checkpoint.config.clone(),
        phi,
        net,
        stage1_phi: phi_full.clone(),
        stage2_phi: checkpoint.phi.clone(),
        report: ctx.into_report(),
    })
}

/// Single-rate baseline from scratch.
pub fn run_vanilla(
    dataset: &BlockDataset,
    spec: &ModelSpec,
    m: usize,
    cfg: &TrainConfig,
) -> Result<(Trained, TrainReport)> {
    let mut ctx = TrainContext::new(dataset, spec, cfg)?;
    let out = train_vanilla(&mut ctx, m)?;
    Ok((out, ctx.into_report()))
}

/// Fixed-Gaussian baseline from scratch.
pub fn run_fixed_gaussian(
    dataset: &BlockDataset,
    spec: &ModelSpec,
    m: usize,
    cfg: &TrainConfig,
) -> Result<(Trained, TrainReport)> {
    let mut ctx = TrainContext::new(dataset, spec, cfg)?;
    let out = train_fixed_gaussian(&mut ctx, m)?;
    Ok((out, ctx.into_report()))
}

#[cfg(test)]
mod tests;
