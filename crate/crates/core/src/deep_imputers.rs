//! Denoising-autoencoder (NAA, I-NAA) and adversarial (GAIN, I-GAIN) imputers.
//!
//! All four train on min-max normalized data. Training corrupts observed
//! cells at a configured rate, pre-fills the corrupted cells (KNN or noise)
//! and learns to reconstruct them. Cells missing in the training table itself
//! never contribute to a reconstruction loss.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputers::{check_schema, not_fitted, ImputationResult, Imputer, KnnIndex};
use crate::matrix::Matrix;
use crate::nn::{
    adam_step, load_versioned, mixed_loss, save_versioned, Activation, AdamConfig, AdamState, LayerSpec,
    MixedLossSpec, Mode, Network, BCE_EPS,
};
use crate::rng::{self, Rng};
use crate::tabular::{fit_normalizer, normalize, Mask, MixedTable, NormParams, Schema};

/// Every `period` epochs the pre-imputation is redone with a neighbor count
/// from `[k_min, k_max]` not used since the range was last exhausted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationSchedule {
    pub period: usize,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for RotationSchedule {
    fn default() -> Self {
        Self {
            period: 10,
            k_min: 3,
            k_max: 15,
        }
    }
}

impl RotationSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 || self.k_min == 0 || self.k_max <= self.k_min {
            return Err(Error::Config(format!(
                "rotation needs period >= 1 and 1 <= k_min < k_max, got period {} and [{}, {}]",
                self.period, self.k_min, self.k_max
            )));
        }
        Ok(())
    }

    /// Neighbor count used at imputation time.
    pub fn median_k(&self) -> usize {
        (self.k_min + self.k_max) / 2
    }

    pub fn is_rotation_epoch(&self, epoch: usize) -> bool {
        epoch % self.period == 0
    }
}

/// Caching KNN pre-imputer driven by a [`RotationSchedule`].
#[derive(Debug, Clone)]
pub struct RotatingPreimputer {
    schedule: RotationSchedule,
    rng: Rng,
    pool: Vec<usize>,
    used: Vec<usize>,
    cache: Option<ImputationResult>,
    knn_calls: usize,
}

impl RotatingPreimputer {
    pub fn new(schedule: RotationSchedule, seed: u64) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            schedule,
            rng: rng::seeded(seed),
            pool: Vec::new(),
            used: Vec::new(),
            cache: None,
            knn_calls: 0,
        })
    }

    fn next_k(&mut self) -> usize {
        if self.pool.is_empty() {
            self.pool = (self.schedule.k_min..=self.schedule.k_max).collect();
            self.pool.shuffle(&mut self.rng);
            self.used.clear();
        }
        let k = self.pool.pop().expect("refilled above");
        self.used.push(k);
        k
    }

    /// On rotation epochs (or the first call) draws a fresh `k` and
    /// KNN-imputes `corrupted` against itself; otherwise returns the cache.
    pub fn preimpute(&mut self, corrupted: &MixedTable, epoch: usize) -> Result<&ImputationResult> {
        if self.cache.is_none() || self.schedule.is_rotation_epoch(epoch) {
            let k = self.next_k();
            let result = KnnIndex::new(corrupted)?.impute(corrupted, k)?;
            self.knn_calls += 1;
            self.cache = Some(result);
        }
        Ok(self.cache.as_ref().expect("filled above"))
    }

    pub fn current_k(&self) -> Option<usize> {
        self.used.last().copied()
    }

    /// Neighbor counts drawn since the range was last exhausted.
    pub fn used_k(&self) -> &[usize] {
        &self.used
    }

    pub fn knn_calls(&self) -> usize {
        self.knn_calls
    }
}

/// Values with categorical cells replaced by their class-1 scores.
fn soft_matrix(result: &ImputationResult) -> Matrix {
    let t = &result.table;
    let data = (0..t.n_rows() * t.n_cols())
        .map(|idx| {
            let (i, j) = (idx / t.n_cols(), idx % t.n_cols());
            result.score(i, j).unwrap_or_else(|| t.get(i, j).expect("complete"))
        })
        .collect();
    Matrix::from_vec(t.n_rows(), t.n_cols(), data).expect("shape")
}

/// Normalized training data: values (0 where missing) and the observed mask.
#[derive(Debug, Clone)]
struct Prepared {
    schema: std::sync::Arc<Schema>,
    params: NormParams,
    normalized: MixedTable,
    values: Matrix,
    observed: Matrix,
}

impl Prepared {
    fn new(train: &MixedTable) -> Result<Self> {
        crate::imputers::ColumnStats::fit(train)?;
        let params = fit_normalizer(train);
        let normalized = normalize(train, &params)?;
        Ok(Self {
            schema: train.schema_arc(),
            values: normalized.to_matrix_filled(0.0),
            observed: normalized.mask().to_matrix(),
            normalized,
            params,
        })
    }

    fn n_rows(&self) -> usize {
        self.values.rows()
    }

    fn n_cols(&self) -> usize {
        self.values.cols()
    }

    /// Drops each observed cell with probability `rate`, keeping at least one
    /// observed cell per column. Returns the availability grid.
    fn corrupt(&self, rate: f64, r: &mut Rng) -> Matrix {
        let (n, m) = self.values.shape();
        let mut available = self.observed.clone();
        for v in available.as_mut_slice() {
            if *v == 1.0 && r.random_bool(rate) {
                *v = 0.0;
            }
        }
        for j in 0..m {
            if (0..n).all(|i| available[(i, j)] == 0.0) {
                if let Some(i) = (0..n).find(|&i| self.observed[(i, j)] == 1.0) {
                    available[(i, j)] = 1.0;
                }
            }
        }
        available
    }

    fn masked_table(&self, available: &Matrix) -> Result<MixedTable> {
        let bits = available.as_slice().iter().map(|&v| v == 1.0).collect();
        let mask = Mask::new(self.n_rows(), self.n_cols(), bits)?;
        MixedTable::from_matrix_masked(self.schema.clone(), &self.values, &mask)
    }

    fn knn_fill(&self, available: &Matrix, k: usize) -> Result<Matrix> {
        let corrupted = self.masked_table(available)?;
        Ok(soft_matrix(&KnnIndex::new(&corrupted)?.impute(&corrupted, k)?))
    }
}

fn require_complete(train: &MixedTable) -> Result<()> {
    if !train.is_complete() {
        return Err(Error::Precondition(
            "training table must be complete; corruption is applied internally".into(),
        ));
    }
    Ok(())
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Config(format!("corruption rate {rate} is not in (0, 1)")));
    }
    Ok(())
}

fn shuffled_batches(n: usize, batch_size: usize, r: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(r);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// `available ⊙ filled + (1 − available) ⊙ output`.
fn combine(filled: &Matrix, available: &Matrix, output: &Matrix) -> Matrix {
    let data = filled
        .as_slice()
        .iter()
        .zip(available.as_slice())
        .zip(output.as_slice())
        .map(|((&f, &a), &o)| a * f + (1.0 - a) * o)
        .collect();
    Matrix::from_vec(filled.rows(), filled.cols(), data).expect("shape")
}

/// Writes network outputs into the missing cells of `target` (normalized
/// space), clipping to `[0, 1]` and mapping numerical cells back to the
/// original scale.
fn finish(target: &MixedTable, params: &NormParams, output: &Matrix, fallbacks: usize) -> Result<ImputationResult> {
    let schema = target.schema_arc();
    ImputationResult::assemble(target, fallbacks, |i, j| {
        let v = output[(i, j)].clamp(0.0, 1.0);
        if schema.is_categorical(j) {
            v
        } else {
            params.unscale(j, v)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaeVariant {
    Naa,
    Inaa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaeConfig {
    pub variant: DaeVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub corruption_rate: f64,
    /// Used by I-NAA only.
    pub rotation: RotationSchedule,
    /// Fixed neighbor count of NAA's pre-imputation.
    pub naa_k: usize,
    pub adam: AdamConfig,
}

impl DaeConfig {
    pub fn naa() -> Self {
        Self {
            variant: DaeVariant::Naa,
            epochs: 200,
            batch_size: 128,
            corruption_rate: 0.2,
            rotation: RotationSchedule::default(),
            naa_k: 5,
            adam: AdamConfig::default(),
        }
    }

    pub fn inaa() -> Self {
        Self {
            variant: DaeVariant::Inaa,
            ..Self::naa()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.corruption_rate)?;
        if self.epochs == 0 || self.batch_size == 0 || self.naa_k == 0 {
            return Err(Error::Config("epochs, batch_size and naa_k must be at least 1".into()));
        }
        self.rotation.validate()
    }

    /// NAA: one overcomplete hidden layer of width 2m. I-NAA: an undercomplete
    /// encoder ending at floor(m/2) units and a mirrored decoder.
    pub fn layers(&self, m: usize) -> Vec<LayerSpec> {
        match self.variant {
            DaeVariant::Naa => vec![
                LayerSpec::new(2 * m, Activation::Relu),
                LayerSpec::new(m, Activation::Sigmoid),
            ],
            DaeVariant::Inaa => vec![
                LayerSpec::new((m / 2).max(1), Activation::Tanh),
                LayerSpec::new(m, Activation::Sigmoid),
            ],
        }
    }

    /// Neighbor count used to pre-fill targets at imputation time.
    pub fn impute_k(&self) -> usize {
        match self.variant {
            DaeVariant::Naa => self.naa_k,
            DaeVariant::Inaa => self.rotation.median_k(),
        }
    }
}

/// A fitted autoencoder imputer in eval mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaeModel {
    pub config: DaeConfig,
    pub network: Network,
    pub params: NormParams,
    /// Normalized training table searched by the imputation-time KNN.
    pub train: MixedTable,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

const DAE_FORMAT: &str = "tabimpute-dae";
const GAIN_FORMAT: &str = "tabimpute-gain";

/// Trains NAA or I-NAA on a complete table.
pub fn train_dae(train: &MixedTable, config: &DaeConfig, seed: u64) -> Result<DaeModel> {
    require_complete(train)?;
    fit_dae(train, config, seed)
}

/// Training on a table that may itself have missing cells; those cells are
/// excluded from the loss.
pub(crate) fn fit_dae(train: &MixedTable, config: &DaeConfig, seed: u64) -> Result<DaeModel> {
    config.validate()?;
    let data = Prepared::new(train)?;
    let m = data.n_cols();
    let mut net = Network::new(m, &config.layers(m), rng::derive(seed, &[rng::label("init")]))?;
    let mut adam = AdamState::for_network(&net, config.adam);
    let mut corrupt_rng = rng::seeded(rng::derive(seed, &[rng::label("corrupt")]));
    let mut batch_rng = rng::seeded(rng::derive(seed, &[rng::label("batches")]));
    let loss_spec = MixedLossSpec::for_schema(&data.schema);

    let mut rotating = RotatingPreimputer::new(config.rotation, rng::derive(seed, &[rng::label("rotation")]))?;
    let mut input = Matrix::zeros(0, m);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        match config.variant {
            DaeVariant::Naa if epoch == 0 => {
                let available = data.corrupt(config.corruption_rate, &mut corrupt_rng);
                input = data.knn_fill(&available, config.naa_k)?;
            }
            DaeVariant::Inaa if config.rotation.is_rotation_epoch(epoch) => {
                let available = data.corrupt(config.corruption_rate, &mut corrupt_rng);
                let corrupted = data.masked_table(&available)?;
                input = soft_matrix(rotating.preimpute(&corrupted, epoch)?);
            }
            _ => {}
        }

        let mut total = 0.0;
        let batches = shuffled_batches(data.n_rows(), config.batch_size, &mut batch_rng);
        for rows in &batches {
            let x = input.select_rows(rows);
            let target = data.values.select_rows(rows);
            let spec = loss_spec.with_weights(data.observed.select_rows(rows));
            let (out, cache) = net.forward(&x)?;
            let (loss, grad) = mixed_loss(&out, &target, &spec)?;
            let grads = net.backward(&cache, &grad)?;
            adam_step(&mut net, &grads, &mut adam)?;
            total += loss;
        }
        history.push(total / batches.len() as f64);
    }
    net.set_mode(Mode::Eval);
    Ok(DaeModel {
        config: config.clone(),
        network: net,
        params: data.params,
        train: data.normalized,
        loss_history: history,
    })
}

impl DaeModel {
    /// KNN pre-fill against the training table, eval forward pass, then
    /// observed cells kept and missing cells taken from the network.
    pub fn impute(&self, target: &MixedTable) -> Result<ImputationResult> {
        check_schema(self.train.schema(), target)?;
        if target.missing_count() == 0 {
            return ImputationResult::assemble(target, 0, |_, _| unreachable!("no missing cells"));
        }
        let norm = normalize(target, &self.params)?;
        let pre = KnnIndex::new(&self.train)?.impute(&norm, self.config.impute_k())?;
        let out = self.network.infer(&soft_matrix(&pre))?;
        finish(target, &self.params, &out, pre.fallbacks)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_versioned(path, DAE_FORMAT, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_versioned(path, DAE_FORMAT)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainVariant {
    Gain,
    Igain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainConfig {
    pub variant: GainVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub corruption_rate: f64,
    pub hint_rate: f64,
    pub alpha: f64,
    /// Upper bound of the uniform noise used by GAIN's pre-fill.
    pub noise: f64,
    /// Used by I-GAIN only.
    pub rotation: RotationSchedule,
    pub adam: AdamConfig,
}

impl GainConfig {
    pub fn gain() -> Self {
        Self {
            variant: GainVariant::Gain,
            epochs: 200,
            batch_size: 128,
            corruption_rate: 0.2,
            hint_rate: 0.9,
            alpha: 10.0,
            noise: 0.01,
            rotation: RotationSchedule::default(),
            adam: AdamConfig::default(),
        }
    }

    pub fn igain() -> Self {
        Self {
            variant: GainVariant::Igain,
            ..Self::gain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.corruption_rate)?;
        if !(self.hint_rate > 0.0 && self.hint_rate <= 1.0) {
            return Err(Error::Config(format!("hint_rate {} is not in (0, 1]", self.hint_rate)));
        }
        if !(self.alpha >= 0.0) || !(self.noise >= 0.0) {
            return Err(Error::Config("alpha and noise must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        self.rotation.validate()
    }

    fn batch_norm(&self) -> bool {
        self.variant == GainVariant::Igain
    }

    /// Generator and discriminator share a shape: three width-m layers for
    /// GAIN; m → m/2 → m/4 → m/2 → m with batch norm on hidden layers for I-GAIN.
    pub fn layers(&self, m: usize) -> Vec<LayerSpec> {
        match self.variant {
            GainVariant::Gain => vec![
                LayerSpec::new(m, Activation::Relu),
                LayerSpec::new(m, Activation::Relu),
                LayerSpec::new(m, Activation::Sigmoid),
            ],
            GainVariant::Igain => {
                let hidden = [m, (m / 2).max(1), (m / 4).max(1), (m / 2).max(1)];
                let mut specs: Vec<LayerSpec> = hidden
                    .iter()
                    .map(|&w| LayerSpec::new(w, Activation::Relu).with_batch_norm(true))
                    .collect();
                specs.push(LayerSpec::new(m, Activation::Sigmoid));
                specs
            }
        }
    }
}

/// `H = B ⊙ M + 0.5 (1 − B)` with `B ~ Bernoulli(hint_rate)` per cell.
pub fn hint_matrix(available: &Matrix, hint_rate: f64, r: &mut Rng) -> Matrix {
    let mut hint = available.clone();
    for h in hint.as_mut_slice() {
        if !r.random_bool(hint_rate) {
            *h = 0.5;
        }
    }
    hint
}

/// One GAIN training batch in normalized space.
#[derive(Debug, Clone)]
pub struct GainBatch {
    pub truth: Matrix,
    /// 1 where the cell is visible to the generator.
    pub available: Matrix,
    /// Visible values with pre-filled corrupted cells.
    pub filled: Matrix,
    pub hint: Matrix,
}

impl GainBatch {
    pub fn generator_input(&self) -> Result<Matrix> {
        self.filled.hstack(&self.available)
    }
}

/// Reconstruction term of the generator loss, over visible cells.
#[derive(Debug, Clone)]
pub enum Reconstruction {
    SquaredError,
    Mixed(MixedLossSpec),
}

/// Binary cross-entropy of `d_out` against `available`, averaged over cells
/// whose hint is 0.5. `None` when no cell is hinted away.
pub fn discriminator_loss(d_out: &Matrix, batch: &GainBatch) -> Option<(f64, Matrix)> {
    let count = batch.hint.as_slice().iter().filter(|&&h| h == 0.5).count();
    if count == 0 {
        return None;
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(d_out.rows(), d_out.cols());
    for (idx, (&p, (&a, &h))) in d_out
        .as_slice()
        .iter()
        .zip(batch.available.as_slice().iter().zip(batch.hint.as_slice()))
        .enumerate()
    {
        if h != 0.5 {
            continue;
        }
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= a * p.ln() + (1.0 - a) * (1.0 - p).ln();
        grad.as_mut_slice()[idx] = (p - a) / (p * (1.0 - p)) / count as f64;
    }
    Some((loss / count as f64, grad))
}

/// Generator objective `−mean log D(x̂)` over corrupted, hinted-away cells
/// plus `alpha` times the reconstruction term, with its gradient with respect
/// to the generator output. Runs `d` forward and backward.
pub fn generator_loss(
    g_out: &Matrix,
    d: &mut Network,
    batch: &GainBatch,
    reconstruction: &Reconstruction,
    alpha: f64,
) -> Result<(f64, f64, Matrix)> {
    let (n, m) = g_out.shape();
    let x_hat = combine(&batch.filled, &batch.available, g_out);
    let (d_out, cache) = d.forward(&x_hat.hstack(&batch.hint)?)?;

    let adversarial_cells: Vec<usize> = (0..n * m)
        .filter(|&idx| batch.available.as_slice()[idx] == 0.0 && batch.hint.as_slice()[idx] == 0.5)
        .collect();
    let mut adversarial = 0.0;
    let mut grad = Matrix::zeros(n, m);
    if !adversarial_cells.is_empty() {
        let count = adversarial_cells.len() as f64;
        let mut d_grad = Matrix::zeros(n, m);
        for &idx in &adversarial_cells {
            let (i, j) = (idx / m, idx % m);
            let p = d_out[(i, j)].clamp(BCE_EPS, 1.0 - BCE_EPS);
            adversarial -= p.ln() / count;
            d_grad[(i, j)] = -1.0 / (p * count);
        }
        let d_grads = d.backward(&cache, &d_grad)?;
        for i in 0..n {
            for j in 0..m {
                grad[(i, j)] = d_grads.input[(i, j)] * (1.0 - batch.available[(i, j)]);
            }
        }
    }

    let recon = match reconstruction {
        Reconstruction::SquaredError => {
            let count = batch.available.as_slice().iter().filter(|&&a| a == 1.0).count();
            let mut sum = 0.0;
            if count > 0 {
                for i in 0..n {
                    for j in 0..m {
                        if batch.available[(i, j)] == 1.0 {
                            let diff = g_out[(i, j)] - batch.truth[(i, j)];
                            sum += diff * diff;
                            grad[(i, j)] += alpha * 2.0 * diff / count as f64;
                        }
                    }
                }
                sum / count as f64
            } else {
                0.0
            }
        }
        Reconstruction::Mixed(spec) => {
            let spec = spec.with_weights(batch.available.clone());
            let (value, g) = mixed_loss(g_out, &batch.truth, &spec)?;
            for (a, b) in grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += alpha * b;
            }
            value
        }
    };
    Ok((adversarial + alpha * recon, recon, grad))
}

/// A fitted generator in eval mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainModel {
    pub config: GainConfig,
    pub generator: Network,
    pub params: NormParams,
    pub train: MixedTable,
    pub seed: u64,
    /// Mean reconstruction loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Trains GAIN or I-GAIN on a complete table.
pub fn train_gain(train: &MixedTable, config: &GainConfig, seed: u64) -> Result<GainModel> {
    require_complete(train)?;
    fit_gain(train, config, seed)
}

pub(crate) fn fit_gain(train: &MixedTable, config: &GainConfig, seed: u64) -> Result<GainModel> {
    config.validate()?;
    let data = Prepared::new(train)?;
    let m = data.n_cols();
    let specs = config.layers(m);
    let mut g = Network::new(2 * m, &specs, rng::derive(seed, &[rng::label("generator")]))?;
    let mut d = Network::new(2 * m, &specs, rng::derive(seed, &[rng::label("discriminator")]))?;
    let mut g_adam = AdamState::for_network(&g, config.adam);
    let mut d_adam = AdamState::for_network(&d, config.adam);
    let mut r = rng::seeded(rng::derive(seed, &[rng::label("batches")]));
    let mut rotating = RotatingPreimputer::new(config.rotation, rng::derive(seed, &[rng::label("rotation")]))?;
    let reconstruction = match config.variant {
        GainVariant::Gain => Reconstruction::SquaredError,
        GainVariant::Igain => Reconstruction::Mixed(MixedLossSpec::for_schema(&data.schema)),
    };

    // I-GAIN: corruption and KNN pre-fill for the whole table, renewed on rotation epochs.
    let mut epoch_available = Matrix::zeros(0, m);
    let mut epoch_filled = Matrix::zeros(0, m);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.variant == GainVariant::Igain && config.rotation.is_rotation_epoch(epoch) {
            epoch_available = data.corrupt(config.corruption_rate, &mut r);
            let corrupted = data.masked_table(&epoch_available)?;
            epoch_filled = soft_matrix(rotating.preimpute(&corrupted, epoch)?);
        }
        let mut total = 0.0;
        let mut used = 0usize;
        for rows in shuffled_batches(data.n_rows(), config.batch_size, &mut r) {
            if config.batch_norm() && rows.len() < 2 {
                continue;
            }
            let truth = data.values.select_rows(&rows);
            let (available, filled) = match config.variant {
                GainVariant::Gain => {
                    let mut available = data.observed.select_rows(&rows);
                    let mut filled = truth.clone();
                    for (a, f) in available.as_mut_slice().iter_mut().zip(filled.as_mut_slice()) {
                        if *a == 1.0 && r.random_bool(config.corruption_rate) {
                            *a = 0.0;
                        }
                        if *a == 0.0 {
                            *f = r.random_range(0.0..=config.noise);
                        }
                    }
                    (available, filled)
                }
                GainVariant::Igain => (epoch_available.select_rows(&rows), epoch_filled.select_rows(&rows)),
            };
            let hint = hint_matrix(&available, config.hint_rate, &mut r);
            let batch = GainBatch {
                truth,
                available,
                filled,
                hint,
            };

            let (g_out, g_cache) = g.forward(&batch.generator_input()?)?;
            let x_hat = combine(&batch.filled, &batch.available, &g_out);
            let (d_out, d_cache) = d.forward(&x_hat.hstack(&batch.hint)?)?;
            if let Some((_, grad)) = discriminator_loss(&d_out, &batch) {
                let grads = d.backward(&d_cache, &grad)?;
                adam_step(&mut d, &grads, &mut d_adam)?;
            }
            let (_, recon, grad) = generator_loss(&g_out, &mut d, &batch, &reconstruction, config.alpha)?;
            let grads = g.backward(&g_cache, &grad)?;
            adam_step(&mut g, &grads, &mut g_adam)?;
            total += recon;
            used += 1;
        }
        history.push(if used > 0 { total / used as f64 } else { 0.0 });
    }
    g.set_mode(Mode::Eval);
    Ok(GainModel {
        config: config.clone(),
        generator: g,
        params: data.params,
        train: data.normalized,
        seed,
        loss_history: history,
    })
}

impl GainModel {
    /// Pre-fills missing cells (seeded noise for GAIN, median-k KNN for
    /// I-GAIN), runs the generator in eval mode and keeps observed cells.
    pub fn impute(&self, target: &MixedTable) -> Result<ImputationResult> {
        check_schema(self.train.schema(), target)?;
        if target.missing_count() == 0 {
            return ImputationResult::assemble(target, 0, |_, _| unreachable!("no missing cells"));
        }
        let norm = normalize(target, &self.params)?;
        let available = norm.mask().to_matrix();
        let (filled, fallbacks) = match self.config.variant {
            GainVariant::Gain => {
                let mut r = rng::seeded(rng::derive(self.seed, &[rng::label("impute")]));
                let mut filled = norm.to_matrix_filled(0.0);
                for (f, &a) in filled.as_mut_slice().iter_mut().zip(available.as_slice()) {
                    if a == 0.0 {
                        *f = r.random_range(0.0..=self.config.noise);
                    }
                }
                (filled, 0)
            }
            GainVariant::Igain => {
                let pre = KnnIndex::new(&self.train)?.impute(&norm, self.config.rotation.median_k())?;
                (soft_matrix(&pre), pre.fallbacks)
            }
        };
        let out = self.generator.infer(&filled.hstack(&available)?)?;
        finish(target, &self.params, &out, fallbacks)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_versioned(path, GAIN_FORMAT, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_versioned(path, GAIN_FORMAT)
    }
}

/// [`Imputer`] wrapper around NAA / I-NAA.
#[derive(Debug, Clone)]
pub struct DaeImputer {
    pub config: DaeConfig,
    pub seed: u64,
    model: Option<DaeModel>,
}

impl DaeImputer {
    pub fn new(config: DaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            seed,
            model: None,
        })
    }

    pub fn model(&self) -> Option<&DaeModel> {
        self.model.as_ref()
    }
}

impl Imputer for DaeImputer {
    fn name(&self) -> &str {
        match self.config.variant {
            DaeVariant::Naa => "naa",
            DaeVariant::Inaa => "inaa",
        }
    }

    fn fit(&mut self, train: &MixedTable) -> Result<()> {
        self.model = Some(fit_dae(train, &self.config, self.seed)?);
        Ok(())
    }

    fn impute(&self, target: &MixedTable) -> Result<ImputationResult> {
        self.model.as_ref().ok_or_else(|| not_fitted(self.name()))?.impute(target)
    }
}

/// [`Imputer`] wrapper around GAIN / I-GAIN.
#[derive(Debug, Clone)]
pub struct GainImputer {
    pub config: GainConfig,
    pub seed: u64,
    model: Option<GainModel>,
}

impl GainImputer {
    pub fn new(config: GainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            seed,
            model: None,
        })
    }

    pub fn model(&self) -> Option<&GainModel> {
        self.model.as_ref()
    }
}

impl Imputer for GainImputer {
    fn name(&self) -> &str {
        match self.config.variant {
            GainVariant::Gain => "gain",
            GainVariant::Igain => "igain",
        }
    }

    fn fit(&mut self, train: &MixedTable) -> Result<()> {
        self.model = Some(fit_gain(train, &self.config, self.seed)?);
        Ok(())
    }

    fn impute(&self, target: &MixedTable) -> Result<ImputationResult> {
        self.model.as_ref().ok_or_else(|| not_fitted(self.name()))?.impute(target)
    }
}
