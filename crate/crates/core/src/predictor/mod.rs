//! The process prediction model: a multi-task LSTM that predicts the next
//! activity and the KPI value of the next event, trained with BPTT and
//! Nadam, and rolled out greedily to predict complete suffixes.

mod lstm;
mod matrix;
mod nadam;
mod network;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::{
    build_prediction_samples, onehot_row, ActivityVocabulary, EventLog, EventLogError, PrefixSample,
    Trace,
};

pub use lstm::{lstm_cell_step, Gate, LstmCellWeights};
pub use matrix::{argmax, softmax, Matrix};
pub use nadam::{Nadam, NadamConfig};
pub use network::{DenseLayer, LossParts, Network, NetworkOutput, TENSOR_NAMES};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error(transparent)]
    Vocabulary(#[from] EventLogError),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: NadamConfig,
    /// Global-norm gradient clipping; `None` disables it.
    pub clip_norm: Option<f64>,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of training traces held out for early stopping.
    pub validation_fraction: f64,
    /// Weight of the KPI squared error in the joint loss.
    pub kpi_loss_weight: f64,
    /// Roll-out bound; defaults to the longest training trace plus one.
    pub max_suffix_len: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_size: 100,
            batch_size: 256,
            epochs: 50,
            optimizer: NadamConfig::default(),
            clip_norm: Some(5.0),
            patience: 5,
            validation_fraction: 0.1,
            kpi_loss_weight: 1.0,
            max_suffix_len: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let fail = |m: &str| Err(PredictorError::Config(m.to_owned()));
        if self.hidden_size == 0 {
            return fail("hidden_size must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.max_suffix_len == Some(0) {
            return fail("max_suffix_len must be at least 1");
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail("validation_fraction must be in [0, 1)");
        }
        if !(self.kpi_loss_weight >= 0.0) {
            return fail("kpi_loss_weight must be non-negative");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return fail("clip_norm must be positive");
        }
        Ok(())
    }
}

/// Mean and standard deviation of the training KPI labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiNormalization {
    pub mean: f64,
    pub std: f64,
}

impl KpiNormalization {
    pub const IDENTITY: KpiNormalization = KpiNormalization { mean: 0.0, std: 1.0 };

    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return Self::IDENTITY;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        KpiNormalization {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Next-activity distribution and next KPI value for a prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Indexed by vocabulary index.
    pub distribution: Vec<f64>,
    /// In original KPI units, never negative.
    pub kpi: f64,
}

impl Prediction {
    pub fn most_likely(&self) -> usize {
        argmax(&self.distribution)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuffixStep {
    pub activity: String,
    pub kpi: f64,
}

impl SuffixStep {
    pub fn new(activity: impl Into<String>, kpi: f64) -> Self {
        SuffixStep {
            activity: activity.into(),
            kpi,
        }
    }
}

/// Greedy continuation of a prefix. Ends with the termination activity
/// unless `truncated`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedSuffix {
    pub steps: Vec<SuffixStep>,
    pub truncated: bool,
}

impl PredictedSuffix {
    pub fn total_kpi(&self) -> f64 {
        self.steps.iter().map(|s| s.kpi).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
}

/// Trained predictor together with everything needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskModel {
    pub config: TrainConfig,
    pub vocabulary: ActivityVocabulary,
    pub kpi_normalization: KpiNormalization,
    pub network: Network,
    pub max_suffix_len: usize,
    /// Free-form provenance, e.g. the hash of the run configuration.
    pub metadata: BTreeMap<String, String>,
}

impl MultiTaskModel {
    /// A model with all-zero weights; its activity distribution is uniform.
    pub fn untrained(vocabulary: ActivityVocabulary, config: TrainConfig) -> Self {
        let network = Network::zeros(vocabulary.len(), config.hidden_size);
        let max_suffix_len = config.max_suffix_len.unwrap_or(1);
        MultiTaskModel {
            config,
            vocabulary,
            kpi_normalization: KpiNormalization::IDENTITY,
            network,
            max_suffix_len,
            metadata: BTreeMap::new(),
        }
    }

    /// Forward pass over a one-hot encoded prefix.
    pub fn forward(&self, prefix: &[Vec<f64>]) -> Result<Prediction, PredictorError> {
        if prefix.is_empty() {
            return Err(PredictorError::Precondition("prefix must not be empty".into()));
        }
        if let Some(row) = prefix.iter().find(|r| r.len() != self.network.features()) {
            return Err(PredictorError::Shape(format!(
                "prefix row has {} features, model expects {}",
                row.len(),
                self.network.features()
            )));
        }
        if !prefix.iter().flatten().all(|v| v.is_finite()) {
            return Err(PredictorError::NonFinite("prefix".into()));
        }
        let out = self.network.forward(prefix);
        Ok(self.interpret(&out.logits, out.kpi))
    }

    pub fn predict_indices(&self, indices: &[usize]) -> Result<Prediction, PredictorError> {
        let mut state = self.start();
        for &i in indices {
            state.push(i)?;
        }
        state.prediction()
    }

    fn interpret(&self, logits: &[f64], kpi: f64) -> Prediction {
        let probs = softmax(logits);
        // Network inputs and outputs use one-hot columns; report by index.
        let distribution = (0..probs.len())
            .map(|i| probs[self.vocabulary.onehot_column(i)])
            .collect();
        Prediction {
            distribution,
            kpi: self.kpi_normalization.denormalize(kpi).max(0.0),
        }
    }

    /// Incremental inference state, fed one activity at a time.
    pub fn start(&self) -> InferenceState<'_> {
        let h = self.network.hidden();
        InferenceState {
            model: self,
            layers: [(vec![0.0; h], vec![0.0; h]), (vec![0.0; h], vec![0.0; h]), (vec![0.0; h], vec![0.0; h])],
            steps: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Checkpoint::from_model(self)).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PredictorError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| PredictorError::Checkpoint(e.to_string()))?;
        ck.into_model()
    }
}

/// Hidden and cell states of the three LSTM layers after a partial prefix.
#[derive(Debug, Clone)]
pub struct InferenceState<'m> {
    model: &'m MultiTaskModel,
    layers: [(Vec<f64>, Vec<f64>); 3],
    steps: usize,
}

impl InferenceState<'_> {
    pub fn push(&mut self, activity_index: usize) -> Result<(), PredictorError> {
        let vocab = &self.model.vocabulary;
        if activity_index >= vocab.len() {
            return Err(PredictorError::Shape(format!(
                "activity index {activity_index} outside vocabulary of {}",
                vocab.len()
            )));
        }
        let net = &self.model.network;
        let x = onehot_row(activity_index, vocab);
        let shared = lstm::step(&net.shared, &x, &self.layers[0].0, &self.layers[0].1);
        let act = lstm::step(&net.activity_lstm, &shared.h, &self.layers[1].0, &self.layers[1].1);
        let kpi = lstm::step(&net.kpi_lstm, &shared.h, &self.layers[2].0, &self.layers[2].1);
        self.layers = [(shared.h, shared.c), (act.h, act.c), (kpi.h, kpi.c)];
        self.steps += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn prediction(&self) -> Result<Prediction, PredictorError> {
        if self.steps == 0 {
            return Err(PredictorError::Precondition("prefix must not be empty".into()));
        }
        let net = &self.model.network;
        let mut logits = net.activity_head.bias.clone();
        net.activity_head.weights.matvec_add(&self.layers[1].0, &mut logits);
        let mut kpi = net.kpi_head.bias.clone();
        net.kpi_head.weights.matvec_add(&self.layers[2].0, &mut kpi);
        Ok(self.model.interpret(&logits, kpi[0]))
    }
}

/// Repeatedly appends the most likely next activity with its predicted KPI
/// until the termination activity or `max_len` steps.
pub fn predict_suffix(
    model: &MultiTaskModel,
    prefix: &Trace,
    max_len: usize,
) -> Result<PredictedSuffix, PredictorError> {
    if prefix.len() <= 1 {
        return Err(PredictorError::Precondition(format!(
            "suffixes are only predicted for prefixes of at least 2 events, got {}",
            prefix.len()
        )));
    }
    if prefix.is_terminated() {
        return Err(PredictorError::Precondition(
            "prefix already ends with the termination event".into(),
        ));
    }
    if max_len == 0 {
        return Err(PredictorError::Precondition("max_len must be at least 1".into()));
    }
    let vocab = &model.vocabulary;
    let mut state = model.start();
    for activity in prefix.activities() {
        state.push(vocab.require(activity)?)?;
    }
    let mut steps = Vec::new();
    while steps.len() < max_len {
        let p = state.prediction()?;
        let next = p.most_likely();
        steps.push(SuffixStep::new(vocab.names()[next].clone(), p.kpi));
        if next == vocab.end_index() {
            return Ok(PredictedSuffix {
                steps,
                truncated: false,
            });
        }
        state.push(next)?;
    }
    Ok(PredictedSuffix {
        steps,
        truncated: true,
    })
}

struct EncodedSample<'a> {
    xs: &'a [Vec<f64>],
    label: usize,
    kpi: f64,
}

fn encode<'a>(
    samples: &'a [PrefixSample],
    vocab: &ActivityVocabulary,
    norm: &KpiNormalization,
) -> Result<Vec<EncodedSample<'a>>, PredictorError> {
    samples
        .iter()
        .map(|s| {
            let width = vocab.len();
            if s.prefix.is_empty() {
                return Err(PredictorError::Precondition("empty prefix sample".into()));
            }
            if s.label_activity.len() != width || s.prefix.iter().any(|r| r.len() != width) {
                return Err(PredictorError::Shape(format!(
                    "sample width does not match vocabulary of {width}"
                )));
            }
            Ok(EncodedSample {
                xs: &s.prefix,
                // Labels are trained against one-hot columns.
                label: vocab.onehot_column(s.label_index()),
                kpi: norm.normalize(s.label_kpi),
            })
        })
        .collect()
}

const CHUNK: usize = 16;

/// Summed gradient and loss over `batch`; chunks are reduced in a fixed
/// order so the result does not depend on the thread count.
fn batch_gradient(
    net: &Network,
    data: &[EncodedSample<'_>],
    batch: &[usize],
    kpi_weight: f64,
) -> (Network, f64) {
    let partials: Vec<(Network, f64)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = net.zeros_like();
            let mut loss = 0.0;
            for &i in chunk {
                let s = &data[i];
                loss += net
                    .accumulate_gradient(s.xs, s.label, s.kpi, kpi_weight, &mut grad)
                    .joint(kpi_weight);
            }
            (grad, loss)
        })
        .collect();
    let mut iter = partials.into_iter();
    let (mut total, mut loss) = iter.next().expect("non-empty batch");
    for (g, l) in iter {
        total.add_assign(&g);
        loss += l;
    }
    (total, loss)
}

fn mean_loss(net: &Network, data: &[EncodedSample<'_>], kpi_weight: f64) -> f64 {
    let sums: Vec<f64> = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|s| net.loss(s.xs, s.label, s.kpi).joint(kpi_weight))
                .sum::<f64>()
        })
        .collect();
    sums.iter().sum::<f64>() / data.len() as f64
}

/// Trains on `train`, early-stopping on `validation` when it is non-empty.
pub fn fit(
    train: &[PrefixSample],
    validation: &[PrefixSample],
    vocabulary: &ActivityVocabulary,
    config: &TrainConfig,
    seed: u64,
) -> Result<(MultiTaskModel, TrainSummary), PredictorError> {
    config.validate()?;
    if train.is_empty() {
        return Err(PredictorError::Precondition("no training samples".into()));
    }
    let norm = KpiNormalization::fit(train.iter().map(|s| s.label_kpi));
    let data = encode(train, vocabulary, &norm)?;
    let val = encode(validation, vocabulary, &norm)?;
    let max_suffix_len = config.max_suffix_len.unwrap_or_else(|| {
        train
            .iter()
            .chain(validation)
            .map(|s| s.prefix.len() + 1)
            .max()
            .unwrap_or(1)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::random(vocabulary.len(), config.hidden_size, &mut rng);
    let mut opt = Nadam::new(config.optimizer, &net);
    let lambda = config.kpi_loss_weight;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Network)> = None;
    let mut stale = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let (mut grad, loss) = batch_gradient(&net, &data, batch, lambda);
            if !loss.is_finite() {
                return Err(PredictorError::Diverged { epoch, step });
            }
            epoch_loss += loss;
            grad.scale(1.0 / batch.len() as f64);
            if let Some(max_norm) = config.clip_norm {
                let norm = grad.global_norm();
                if norm > max_norm {
                    grad.scale(max_norm / norm);
                }
            }
            opt.step(&mut net, &grad);
            if !net.is_finite() {
                return Err(PredictorError::Diverged { epoch, step });
            }
        }
        let train_loss = epoch_loss / data.len() as f64;
        let validation_loss = (!val.is_empty()).then(|| mean_loss(&net, &val, lambda));
        log::info!("epoch {epoch}: train loss {train_loss:.5}, validation loss {validation_loss:?}");
        epochs.push(EpochStats {
            epoch,
            train_loss,
            validation_loss,
        });
        let Some(vl) = validation_loss else { continue };
        if !vl.is_finite() {
            return Err(PredictorError::Diverged {
                epoch,
                step: order.len().div_ceil(config.batch_size),
            });
        }
        match &best {
            Some((b, _, _)) if vl >= *b => {
                stale += 1;
                if stale >= config.patience.max(1) {
                    break;
                }
            }
            _ => {
                best = Some((vl, epoch, net.clone()));
                stale = 0;
            }
        }
    }
    let best_epoch = match best {
        Some((_, e, weights)) => {
            net = weights;
            e
        }
        None => epochs.len().saturating_sub(1),
    };
    let model = MultiTaskModel {
        config: config.clone(),
        vocabulary: vocabulary.clone(),
        kpi_normalization: norm,
        network: net,
        max_suffix_len,
        metadata: BTreeMap::new(),
    };
    let summary = TrainSummary {
        epochs,
        best_epoch,
        train_samples: data.len(),
        validation_samples: val.len(),
    };
    Ok((model, summary))
}

/// Trains on prefix samples, holding out a seeded share of the samples.
pub fn train(
    samples: &[PrefixSample],
    vocabulary: &ActivityVocabulary,
    config: &TrainConfig,
    seed: u64,
) -> Result<(MultiTaskModel, TrainSummary), PredictorError> {
    config.validate()?;
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let n_val = (samples.len() as f64 * config.validation_fraction).floor() as usize;
    let n_val = n_val.min(samples.len().saturating_sub(1));
    let (val_idx, train_idx) = idx.split_at(n_val);
    let pick = |ix: &[usize]| ix.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    fit(&pick(train_idx), &pick(val_idx), vocabulary, config, seed)
}

/// Trains on a log of terminated traces, holding out whole traces for
/// early stopping.
pub fn train_log(
    log: &EventLog,
    config: &TrainConfig,
    seed: u64,
) -> Result<(MultiTaskModel, TrainSummary), PredictorError> {
    config.validate()?;
    let mut idx: Vec<usize> = (0..log.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let n_val = ((log.len() as f64 * config.validation_fraction).floor() as usize)
        .min(log.len().saturating_sub(1));
    let (val_idx, train_idx) = idx.split_at(n_val);
    let subset = |ix: &[usize]| -> Result<EventLog, PredictorError> {
        let mut ix = ix.to_vec();
        ix.sort_unstable();
        let traces = ix.iter().map(|&i| log.traces()[i].clone()).collect();
        Ok(EventLog::with_vocabulary(traces, log.vocabulary().clone())?)
    };
    let train_samples = build_prediction_samples(&subset(train_idx)?)?;
    let val_samples = build_prediction_samples(&subset(val_idx)?)?;
    let mut config = config.clone();
    if config.max_suffix_len.is_none() {
        config.max_suffix_len = Some(log.max_trace_len().max(1));
    }
    let (mut model, summary) = fit(&train_samples, &val_samples, log.vocabulary(), &config, seed)?;
    model.config.max_suffix_len = None;
    Ok((model, summary))
}

/// Share of samples whose label is the model's most likely activity.
pub fn accuracy(model: &MultiTaskModel, samples: &[PrefixSample]) -> Result<f64, PredictorError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for s in samples {
        if model.forward(&s.prefix)?.most_likely() == s.label_index() {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

const CHECKPOINT_FORMAT: &str = "nextbest-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: TrainConfig,
    vocabulary: ActivityVocabulary,
    vocabulary_fingerprint: String,
    kpi_normalization: KpiNormalization,
    hidden_size: usize,
    max_suffix_len: usize,
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorRecord>,
}

fn tensor_shapes(features: usize, hidden: usize) -> [Vec<usize>; 13] {
    let cell = |f: usize| [vec![4 * hidden, f], vec![4 * hidden, hidden], vec![4 * hidden]];
    let [a, b, c] = cell(features);
    let [d, e, f] = cell(hidden);
    let [g, h, i] = cell(hidden);
    [
        a,
        b,
        c,
        d,
        e,
        f,
        g,
        h,
        i,
        vec![features, hidden],
        vec![features],
        vec![1, hidden],
        vec![1],
    ]
}

impl Checkpoint {
    fn from_model(model: &MultiTaskModel) -> Self {
        let shapes = tensor_shapes(model.network.features(), model.network.hidden());
        let tensors = model
            .network
            .tensors()
            .into_iter()
            .zip(TENSOR_NAMES)
            .zip(shapes)
            .map(|((data, name), shape)| TensorRecord {
                name: name.to_owned(),
                shape,
                data: data.to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            vocabulary: model.vocabulary.clone(),
            vocabulary_fingerprint: model.vocabulary.fingerprint(),
            kpi_normalization: model.kpi_normalization,
            hidden_size: model.network.hidden(),
            max_suffix_len: model.max_suffix_len,
            metadata: model.metadata.clone(),
            tensors,
        }
    }

    fn into_model(self) -> Result<MultiTaskModel, PredictorError> {
        let fail = |m: String| Err(PredictorError::Checkpoint(m));
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return fail(format!("unsupported format {} v{}", self.format, self.version));
        }
        if self.vocabulary.fingerprint() != self.vocabulary_fingerprint {
            return fail("vocabulary fingerprint mismatch".into());
        }
        let features = self.vocabulary.len();
        let shapes = tensor_shapes(features, self.hidden_size);
        if self.tensors.len() != shapes.len() {
            return fail(format!("expected {} tensors, found {}", shapes.len(), self.tensors.len()));
        }
        let mut network = Network::zeros(features, self.hidden_size);
        for (((slot, record), shape), name) in network
            .tensors_mut()
            .into_iter()
            .zip(&self.tensors)
            .zip(&shapes)
            .zip(TENSOR_NAMES)
        {
            if record.name != name || &record.shape != shape || record.data.len() != slot.len() {
                return fail(format!("tensor {} does not match {name} {shape:?}", record.name));
            }
            if !record.data.iter().all(|v| v.is_finite()) {
                return fail(format!("tensor {name} holds non-finite values"));
            }
            slot.copy_from_slice(&record.data);
        }
        if self.max_suffix_len == 0 {
            return fail("max_suffix_len must be at least 1".into());
        }
        Ok(MultiTaskModel {
            config: self.config,
            vocabulary: self.vocabulary,
            kpi_normalization: self.kpi_normalization,
            network,
            max_suffix_len: self.max_suffix_len,
            metadata: self.metadata,
        })
    }
}
