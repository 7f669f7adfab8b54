//! Flashiness admission filter: per-object 1/n feature sampling, label
//! harvesting over a following window, and a linear max-margin classifier.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Key, Timestamp};

pub const NUM_FEATURES: usize = 5;
pub const MIN_TRAINING_SAMPLES: usize = 50;
const RECALL_MARGIN: f64 = 1e-6;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] =
    ["read_count", "mean_gap", "last_gap", "max_gap", "first_read_delay"];

/// `[read_count, mean_gap, last_gap, max_gap, first_read_delay]`, gaps in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn read_count(&self) -> f64 {
        self.0[0]
    }
}

/// Size-one reservoir step: keep `features` with probability `1/read_count`.
/// Returns true when the slot was replaced.
pub fn maybe_sample<R: Rng + ?Sized>(
    slot: &mut Option<FeatureVector>,
    features: FeatureVector,
    read_count: u32,
    rng: &mut R,
) -> bool {
    let replace = read_count <= 1 || slot.is_none() || rng.gen_range(0..read_count) == 0;
    if replace {
        *slot = Some(features);
    }
    replace
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub key: Key,
    pub features: FeatureVector,
    pub sampled_at: Timestamp,
    pub label_reads: u32,
}

impl TrainingSample {
    pub fn binary_label(&self, threshold: u32) -> bool {
        self.label_reads >= threshold
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    /// Update, delete, or eviction: the label count stops here.
    End,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccessEvent {
    pub key: Key,
    pub at: Timestamp,
    pub kind: AccessKind,
}

/// Count reads in `(sampled_at, sampled_at + window]` for each sample, stopping
/// at the first end-of-life event after the sample.
pub fn harvest_labels(
    samples: &[(Key, FeatureVector, Timestamp)],
    log: &[AccessEvent],
    label_window_secs: f64,
) -> Vec<TrainingSample> {
    let mut by_key: HashMap<&Key, Vec<&AccessEvent>> = HashMap::new();
    for e in log {
        by_key.entry(&e.key).or_default().push(e);
    }
    samples
        .iter()
        .map(|(key, features, sampled_at)| {
            let end = sampled_at.plus_secs(label_window_secs);
            let mut reads = 0;
            for e in by_key.get(key).into_iter().flatten() {
                if e.at <= *sampled_at || e.at > end {
                    continue;
                }
                match e.kind {
                    AccessKind::Read => reads += 1,
                    AccessKind::End => break,
                }
            }
            TrainingSample {
                key: key.clone(),
                features: *features,
                sampled_at: *sampled_at,
                label_reads: reads,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub tenant: String,
    pub weights: [f64; NUM_FEATURES],
    pub bias: f64,
    pub means: [f64; NUM_FEATURES],
    pub stdevs: [f64; NUM_FEATURES],
    pub trained_at: Timestamp,
}

impl Model {
    pub fn standardize(&self, f: &FeatureVector) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|i| (f.0[i] - self.means[i]) / self.stdevs[i])
    }

    pub fn margin(&self, f: &FeatureVector) -> f64 {
        let x = self.standardize(f);
        dot(&self.weights, &x) + self.bias
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, name: &str, v: &[f64]| {
            let _ = write!(s, "{name}");
            for x in v {
                let _ = write!(s, " {x:e}");
            }
            s.push('\n');
        };
        let _ = writeln!(s, "tenant {}", self.tenant);
        let _ = writeln!(s, "trained_at {}", self.trained_at.0);
        row(&mut s, "weights", &self.weights);
        row(&mut s, "bias", &[self.bias]);
        row(&mut s, "means", &self.means);
        row(&mut s, "stdevs", &self.stdevs);
        s
    }

    pub fn from_text(text: &str) -> Result<Model> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        let mut fields: HashMap<&str, &str> = HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (name, rest) = line.split_once(' ').unwrap_or((line, ""));
            fields.insert(name, rest.trim());
        }
        let get = |name: &str| fields.get(name).copied().ok_or_else(|| bad(&format!("missing {name}")));
        let floats = |name: &str| -> Result<Vec<f64>> {
            get(name)?
                .split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| bad(&format!("bad number in {name}"))))
                .collect()
        };
        let array = |name: &str| -> Result<[f64; NUM_FEATURES]> {
            floats(name)?
                .try_into()
                .map_err(|_| bad(&format!("{name} needs {NUM_FEATURES} values")))
        };
        let bias = floats("bias")?;
        if bias.len() != 1 {
            return Err(bad("bias needs one value"));
        }
        let stdevs = array("stdevs")?;
        if stdevs.iter().any(|s| !(*s > 0.0)) {
            return Err(bad("stdevs must be positive"));
        }
        Ok(Model {
            tenant: get("tenant")?.to_string(),
            weights: array("weights")?,
            bias: bias[0],
            means: array("means")?,
            stdevs,
            trained_at: Timestamp(
                get("trained_at")?.parse().map_err(|_| bad("bad trained_at"))?,
            ),
        })
    }
}

fn dot(a: &[f64; NUM_FEATURES], b: &[f64; NUM_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainParams {
    pub lambda: f64,
    pub epochs: usize,
    pub eta0: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            lambda: 1e-4,
            epochs: 50,
            eta0: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Deferred {
    TooFewSamples(usize),
    OneClass,
}

/// Linear SVM by stochastic subgradient descent on the L2-regularized hinge
/// loss. Positives are weighted by the negative/positive count ratio, and the
/// bias is then shifted if needed so that training recall is 100%.
pub fn train(
    samples: &[TrainingSample],
    threshold: u32,
    params: &TrainParams,
    tenant: &str,
    now: Timestamp,
) -> std::result::Result<Model, Deferred> {
    if samples.len() < MIN_TRAINING_SAMPLES {
        return Err(Deferred::TooFewSamples(samples.len()));
    }
    let labels: Vec<f64> = samples
        .iter()
        .map(|s| if s.binary_label(threshold) { 1.0 } else { -1.0 })
        .collect();
    let pos = labels.iter().filter(|&&y| y > 0.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Deferred::OneClass);
    }

    let n = samples.len() as f64;
    let mut means = [0.0; NUM_FEATURES];
    let mut stdevs = [0.0; NUM_FEATURES];
    for s in samples {
        for i in 0..NUM_FEATURES {
            means[i] += s.features.0[i] / n;
        }
    }
    for s in samples {
        for i in 0..NUM_FEATURES {
            stdevs[i] += (s.features.0[i] - means[i]).powi(2) / n;
        }
    }
    for sd in &mut stdevs {
        *sd = sd.sqrt();
        if !(*sd > 1e-12) || !sd.is_finite() {
            *sd = 1.0;
        }
    }
    let mut model = Model {
        tenant: tenant.to_string(),
        weights: [0.0; NUM_FEATURES],
        bias: 0.0,
        means,
        stdevs,
        trained_at: now,
    };
    let xs: Vec<[f64; NUM_FEATURES]> = samples.iter().map(|s| model.standardize(&s.features)).collect();
    let pos_weight = neg as f64 / pos as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut w = [0.0; NUM_FEATURES];
    let mut b = 0.0;
    // Iterate averaging over the second half of training.
    let mut avg_w = [0.0; NUM_FEATURES];
    let mut avg_b = 0.0;
    let mut averaged = 0u64;
    let mut t = 0u64;
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let eta = params.eta0 / (1.0 + params.eta0 * params.lambda * t as f64);
            t += 1;
            let y = labels[i];
            let c = if y > 0.0 { pos_weight } else { 1.0 };
            let violated = y * (dot(&w, &xs[i]) + b) < 1.0;
            for j in 0..NUM_FEATURES {
                w[j] *= 1.0 - eta * params.lambda;
                if violated {
                    w[j] += eta * c * y * xs[i][j];
                }
            }
            if violated {
                b += eta * c * y;
            }
            if epoch >= params.epochs / 2 {
                averaged += 1;
                let k = averaged as f64;
                for j in 0..NUM_FEATURES {
                    avg_w[j] += (w[j] - avg_w[j]) / k;
                }
                avg_b += (b - avg_b) / k;
            }
        }
    }
    if averaged == 0 {
        avg_w = w;
        avg_b = b;
    }
    model.weights = avg_w;
    model.bias = avg_b;
    // Recall first: when the data is not separable, slide the boundary until
    // every training positive is admitted and pay for it in precision.
    let min_pos = xs
        .iter()
        .zip(&labels)
        .filter(|(_, &y)| y > 0.0)
        .map(|(x, _)| dot(&model.weights, x) + model.bias)
        .fold(f64::INFINITY, f64::min);
    if min_pos <= 0.0 {
        model.bias += RECALL_MARGIN - min_pos;
    }
    Ok(model)
}

/// Flashiness score. Objects without reads score 0 and never qualify;
/// without a model the read-count fallback applies.
pub fn score(model: Option<&Model>, features: Option<&FeatureVector>, threshold: u32) -> f64 {
    match (model, features) {
        (_, None) => 0.0,
        (Some(m), Some(f)) => m.margin(f),
        (None, Some(f)) => f.read_count() - threshold as f64 + 0.5,
    }
}

#[derive(Clone, Debug)]
struct Pending {
    features: FeatureVector,
    sampled_at: Timestamp,
    label_reads: u32,
    open: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassifierStats {
    pub samples_taken: u64,
    pub trainings: u64,
    pub deferrals: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub threshold: u32,
    pub training_window_secs: f64,
    pub label_window_secs: f64,
    pub retrain_interval_secs: Option<f64>,
    pub seed: u64,
}

/// One tenant's classifier: sampling during the training window, online
/// label counting, then training once every label window has closed.
#[derive(Debug)]
pub struct TenantClassifier {
    tenant: String,
    cfg: ClassifierConfig,
    rng: ChaCha8Rng,
    window_start: Option<Timestamp>,
    pending: HashMap<Key, Pending>,
    model: Option<Model>,
    stats: ClassifierStats,
}

impl TenantClassifier {
    pub fn new(tenant: &str, cfg: ClassifierConfig) -> Self {
        let seed = cfg.seed ^ xxhash_rust::xxh3::xxh3_64(tenant.as_bytes());
        TenantClassifier {
            tenant: tenant.to_string(),
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            window_start: None,
            pending: HashMap::new(),
            model: None,
            stats: ClassifierStats::default(),
        }
    }

    pub fn model(&self) -> Option<&Model> {
        self.model.as_ref()
    }

    pub fn set_model(&mut self, model: Model) {
        self.model = Some(model);
    }

    pub fn stats(&self) -> ClassifierStats {
        self.stats
    }

    pub fn pending_samples(&self) -> usize {
        self.pending.len()
    }

    pub fn threshold(&self) -> u32 {
        self.cfg.threshold
    }

    pub fn score(&self, features: Option<&FeatureVector>) -> f64 {
        score(self.model.as_ref(), features, self.cfg.threshold)
    }

    fn sampling_end(&self) -> Option<Timestamp> {
        self.window_start
            .map(|s| s.plus_secs(self.cfg.training_window_secs))
    }

    fn in_training_window(&mut self, now: Timestamp) -> bool {
        let start = *self.window_start.get_or_insert(now);
        now.secs_since(start) < self.cfg.training_window_secs && now >= start
    }

    /// A DRAM read with the object's post-read features.
    pub fn on_read(&mut self, key: &Key, features: FeatureVector, read_count: u32, now: Timestamp) {
        self.count_read(key, now);
        if !self.in_training_window(now) {
            return;
        }
        let mut slot = self.pending.get(key).map(|p| p.features);
        if maybe_sample(&mut slot, features, read_count, &mut self.rng) {
            self.stats.samples_taken += 1;
            self.pending.insert(
                key.clone(),
                Pending {
                    features,
                    sampled_at: now,
                    label_reads: 0,
                    open: true,
                },
            );
        }
    }

    /// A read served by flash: counts toward labels only.
    pub fn count_read(&mut self, key: &Key, now: Timestamp) {
        let window = self.cfg.label_window_secs;
        if let Some(p) = self.pending.get_mut(key) {
            if p.open && now > p.sampled_at && now.secs_since(p.sampled_at) <= window {
                p.label_reads += 1;
            }
        }
    }

    /// Update, delete or eviction: the object's label count is final.
    pub fn on_end(&mut self, key: &Key) {
        if let Some(p) = self.pending.get_mut(key) {
            p.open = false;
        }
    }

    /// Snapshot of the harvested samples.
    pub fn samples(&self) -> Vec<TrainingSample> {
        let mut v: Vec<_> = self
            .pending
            .iter()
            .map(|(k, p)| TrainingSample {
                key: k.clone(),
                features: p.features,
                sampled_at: p.sampled_at,
                label_reads: p.label_reads,
            })
            .collect();
        v.sort_by(|a, b| a.sampled_at.cmp(&b.sampled_at).then_with(|| a.key.cmp(&b.key)));
        v
    }

    /// Train when the label windows of every sample have closed. Returns
    /// true when a new model was installed.
    pub fn maybe_train(&mut self, now: Timestamp) -> bool {
        let Some(end) = self.sampling_end() else {
            return false;
        };
        if now.secs_since(end) < self.cfg.label_window_secs || now < end {
            return false;
        }
        let samples = self.samples();
        let params = TrainParams {
            seed: self.cfg.seed,
            ..TrainParams::default()
        };
        self.pending.clear();
        let trained = match train(&samples, self.cfg.threshold, &params, &self.tenant, now) {
            Ok(model) => {
                log::info!("tenant {}: trained on {} samples", self.tenant, samples.len());
                self.stats.trainings += 1;
                self.model = Some(model);
                true
            }
            Err(d) => {
                log::debug!("tenant {}: training deferred ({d:?})", self.tenant);
                self.stats.deferrals += 1;
                false
            }
        };
        self.window_start = if !trained {
            Some(now)
        } else {
            self.cfg.retrain_interval_secs.map(|r| now.plus_secs(r))
        };
        if self.window_start.is_none() {
            // Trained once and no retraining: stop sampling for good.
            self.window_start = Some(Timestamp(u64::MAX / 2));
        }
        trained
    }
}
