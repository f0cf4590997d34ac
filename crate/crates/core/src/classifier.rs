//! Query-complexity router: hashed n-gram features, a linear softmax
//! classifier, and affine interpolation between two trained weight sets.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::error::{Error, Result};
use crate::retriever::tokenize;
use crate::strategy::Strategy;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"FLRW";
pub const WEIGHTS_VERSION: u32 = 1;
pub const DEFAULT_DIMENSION: usize = 1 << 18;
pub const DEFAULT_HASH_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dimension: DEFAULT_DIMENSION,
            seed: DEFAULT_HASH_SEED,
        }
    }
}

impl FeatureConfig {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        let config = FeatureConfig { dimension, seed };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 || !self.dimension.is_power_of_two() {
            return Err(Error::invalid(format!(
                "feature dimension must be a power of two >= 2, got {}",
                self.dimension
            )));
        }
        if self.dimension > u32::MAX as usize {
            return Err(Error::invalid("feature dimension too large"));
        }
        Ok(())
    }

    /// Bucket for one n-gram: xxHash64 of its UTF-8 bytes, reduced mod D.
    pub fn bucket(&self, ngram: &str) -> u32 {
        (XxHash64::oneshot(self.seed, ngram.as_bytes()) & (self.dimension as u64 - 1)) as u32
    }
}

/// Word unigrams followed by space-joined bigrams.
pub fn ngrams(text: &str) -> Vec<String> {
    let tokens = tokenize(text);
    let mut out = Vec::with_capacity(tokens.len() * 2);
    out.extend(tokens.iter().cloned());
    out.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    out
}

/// Sparse count vector, sorted by index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureVector {
    entries: Vec<(u32, u32)>,
}

impl FeatureVector {
    pub fn from_counts(counts: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut merged: BTreeMap<u32, u32> = BTreeMap::new();
        for (i, c) in counts {
            if c > 0 {
                *merged.entry(i).or_default() += c;
            }
        }
        FeatureVector {
            entries: merged.into_iter().collect(),
        }
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn total_count(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn featurize(config: &FeatureConfig, text: &str) -> FeatureVector {
    FeatureVector::from_counts(ngrams(text).iter().map(|g| (config.bucket(g), 1)))
}

/// K x D weight matrix (row-major) plus K biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    classes: Vec<Strategy>,
    feature_config: FeatureConfig,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ClassifierWeights {
    pub fn zeros(classes: Vec<Strategy>, feature_config: FeatureConfig) -> Result<Self> {
        feature_config.validate()?;
        check_class_order(&classes)?;
        let k = classes.len();
        Ok(ClassifierWeights {
            weights: vec![0.0; k * feature_config.dimension],
            bias: vec![0.0; k],
            classes,
            feature_config,
        })
    }

    pub fn from_parts(
        classes: Vec<Strategy>,
        feature_config: FeatureConfig,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        feature_config.validate()?;
        check_class_order(&classes)?;
        let k = classes.len();
        if weights.len() != k * feature_config.dimension || bias.len() != k {
            return Err(Error::format("weight matrix shape does not match K x D"));
        }
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::format("non-finite weight"));
        }
        Ok(ClassifierWeights {
            classes,
            feature_config,
            weights,
            bias,
        })
    }

    pub fn classes(&self) -> &[Strategy] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn feature_config(&self) -> FeatureConfig {
        self.feature_config
    }

    pub fn dimension(&self) -> usize {
        self.feature_config.dimension
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn row(&self, class: usize) -> &[f64] {
        let d = self.dimension();
        &self.weights[class * d..(class + 1) * d]
    }

    pub fn class_index(&self, s: Strategy) -> Option<usize> {
        self.classes.iter().position(|&c| c == s)
    }

    pub fn logits(&self, x: &FeatureVector) -> Vec<f64> {
        let d = self.dimension();
        (0..self.num_classes())
            .map(|k| {
                let row = &self.weights[k * d..(k + 1) * d];
                self.bias[k]
                    + x.entries
                        .iter()
                        .map(|&(i, c)| row[i as usize] * c as f64)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn featurize(&self, text: &str) -> FeatureVector {
        featurize(&self.feature_config, text)
    }

    pub fn route_features(&self, x: &FeatureVector) -> RouteDecision {
        RouteDecision::from_logits(&self.classes, self.logits(x))
    }

    /// Export as the JSON interchange schema `{version,K,D,seed,classes,W,b}`.
    pub fn to_json(&self) -> serde_json::Value {
        let d = self.dimension();
        let w: Vec<&[f64]> = (0..self.num_classes())
            .map(|k| &self.weights[k * d..(k + 1) * d])
            .collect();
        serde_json::json!({
            "version": WEIGHTS_VERSION,
            "K": self.num_classes(),
            "D": d,
            "seed": self.feature_config.seed,
            "classes": self.classes.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
            "W": w,
            "b": self.bias,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        #[allow(non_snake_case)]
        struct Doc {
            version: u32,
            K: usize,
            D: usize,
            seed: u64,
            classes: Vec<String>,
            W: Vec<Vec<f64>>,
            b: Vec<f64>,
        }
        let doc: Doc = serde_json::from_value(value.clone())
            .map_err(|e| Error::format(format!("bad weights JSON: {e}")))?;
        if doc.version != WEIGHTS_VERSION {
            return Err(Error::format(format!(
                "unsupported weights version {}",
                doc.version
            )));
        }
        let classes = doc
            .classes
            .iter()
            .map(|c| c.parse())
            .collect::<Result<Vec<Strategy>>>()?;
        if classes.len() != doc.K || doc.W.len() != doc.K || doc.W.iter().any(|r| r.len() != doc.D) {
            return Err(Error::format("weights JSON shape disagrees with K and D"));
        }
        Self::from_parts(
            classes,
            FeatureConfig {
                dimension: doc.D,
                seed: doc.seed,
            },
            doc.W.into_iter().flatten().collect(),
            doc.b,
        )
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(WEIGHTS_MAGIC)?;
        out.write_u32::<LittleEndian>(WEIGHTS_VERSION)?;
        out.write_u32::<LittleEndian>(self.num_classes() as u32)?;
        out.write_u64::<LittleEndian>(self.dimension() as u64)?;
        out.write_u64::<LittleEndian>(self.feature_config.seed)?;
        for c in &self.classes {
            let name = c.as_str().as_bytes();
            out.write_u8(name.len() as u8)?;
            out.write_all(name)?;
        }
        for &v in self.weights.iter().chain(&self.bias) {
            out.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    /// Read the binary format. With `expected`, the stored feature config
    /// must match it.
    pub fn read_from<R: Read>(mut input: R, expected: Option<FeatureConfig>) -> Result<Self> {
        let truncated = |e: std::io::Error| Error::format(format!("truncated weights file: {e}"));
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(truncated)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(Error::format("not a weights file"));
        }
        let version = input.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != WEIGHTS_VERSION {
            return Err(Error::format(format!(
                "unsupported weights version {version} (expected {WEIGHTS_VERSION})"
            )));
        }
        let k = input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let d = input.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        let seed = input.read_u64::<LittleEndian>().map_err(truncated)?;
        let config = FeatureConfig { dimension: d, seed };
        config.validate().map_err(|e| Error::format(e.to_string()))?;
        if let Some(exp) = expected {
            if exp.dimension != d {
                return Err(Error::format(format!(
                    "dimension mismatch: file has D={d}, expected D={}",
                    exp.dimension
                )));
            }
            if exp.seed != seed {
                return Err(Error::format(format!(
                    "hash seed mismatch: file has {seed}, expected {}",
                    exp.seed
                )));
            }
        }
        if !(1..=4).contains(&k) {
            return Err(Error::format(format!("bad class count {k}")));
        }
        let mut classes = Vec::with_capacity(k);
        for _ in 0..k {
            let len = input.read_u8().map_err(truncated)? as usize;
            let mut name = vec![0u8; len];
            input.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("bad class name"))?;
            classes.push(name.parse().map_err(|e: Error| Error::format(e.to_string()))?);
        }
        let mut weights = vec![0.0; k * d];
        input
            .read_f64_into::<LittleEndian>(&mut weights)
            .map_err(truncated)?;
        let mut bias = vec![0.0; k];
        input
            .read_f64_into::<LittleEndian>(&mut bias)
            .map_err(truncated)?;
        let mut rest = [0u8; 1];
        if input.read(&mut rest).map_err(truncated)? != 0 {
            return Err(Error::format("trailing bytes after weights"));
        }
        Self::from_parts(classes, config, weights, bias)
    }
}

fn check_class_order(classes: &[Strategy]) -> Result<()> {
    let three = Strategy::classes(false);
    let four = Strategy::classes(true);
    if classes != three.as_slice() && classes != four.as_slice() {
        return Err(Error::invalid(format!(
            "class order must be {three:?} optionally followed by unanswerable, got {classes:?}"
        )));
    }
    Ok(())
}

pub fn save_weights(weights: &ClassifierWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    weights
        .write_to(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_weights(
    path: impl AsRef<Path>,
    expected: Option<FeatureConfig>,
) -> Result<ClassifierWeights> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ClassifierWeights::read_from(BufReader::new(file), expected)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the first (cheapest) class wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteDecision {
    /// Argmax class, possibly `Unanswerable`.
    pub predicted: Strategy,
    /// Strategy to execute.
    pub strategy: Strategy,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl RouteDecision {
    pub fn from_logits(classes: &[Strategy], logits: Vec<f64>) -> Self {
        let predicted = classes[argmax(&logits)];
        RouteDecision {
            predicted,
            strategy: predicted.executed(),
            probabilities: softmax(&logits),
            logits,
        }
    }
}

/// Anything that maps query text to a routing decision.
pub trait Router: Send + Sync {
    fn route(&self, text: &str) -> RouteDecision;
}

impl Router for ClassifierWeights {
    fn route(&self, text: &str) -> RouteDecision {
        self.route_features(&self.featurize(text))
    }
}

/// `(1 - alpha) * coc + alpha * roc`, applied to weights and biases.
pub fn interpolate(
    coc: &ClassifierWeights,
    roc: &ClassifierWeights,
    alpha: f64,
) -> Result<ClassifierWeights> {
    check_alpha(alpha)?;
    if coc.feature_config != roc.feature_config {
        return Err(Error::invalid(format!(
            "cannot interpolate weights with different feature configs ({:?} vs {:?})",
            coc.feature_config, roc.feature_config
        )));
    }
    if coc.classes != roc.classes {
        return Err(Error::invalid(
            "cannot interpolate weights with different class orders",
        ));
    }
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (1.0 - alpha) * x + alpha * y)
            .collect()
    };
    Ok(ClassifierWeights {
        classes: coc.classes.clone(),
        feature_config: coc.feature_config,
        weights: mix(&coc.weights, &roc.weights),
        bias: mix(&coc.bias, &roc.bias),
    })
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha must be in [0,1]"));
    }
    Ok(())
}

/// The cost-optimized and reliability-optimized classifiers blended at `alpha`.
#[derive(Debug, Clone)]
pub struct InterpolatedClassifier {
    coc: ClassifierWeights,
    roc: ClassifierWeights,
    alpha: f64,
    effective: ClassifierWeights,
}

impl InterpolatedClassifier {
    pub fn new(coc: ClassifierWeights, roc: ClassifierWeights, alpha: f64) -> Result<Self> {
        let effective = interpolate(&coc, &roc, alpha)?;
        Ok(InterpolatedClassifier {
            coc,
            roc,
            alpha,
            effective,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.coc.clone(), self.roc.clone(), alpha)
    }

    pub fn cost_optimized(&self) -> &ClassifierWeights {
        &self.coc
    }

    pub fn reliability_optimized(&self) -> &ClassifierWeights {
        &self.roc
    }

    pub fn effective(&self) -> &ClassifierWeights {
        &self.effective
    }
}

impl Router for InterpolatedClassifier {
    fn route(&self, text: &str) -> RouteDecision {
        self.effective.route(text)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub features: FeatureVector,
    pub label: Strategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// `lr / sqrt(epoch)`, epochs counted from 1.
    InverseSqrtEpoch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub l2: f64,
    /// 0 means full batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Classes allowed to have no training examples.
    pub permit_absent: Vec<Strategy>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 0.1,
            schedule: LrSchedule::InverseSqrtEpoch,
            l2: 1e-4,
            batch_size: 64,
            epochs: 20,
            seed: 42,
            permit_absent: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub weights: ClassifierWeights,
    /// Objective on each mini-batch, measured before that batch's update.
    pub loss_history: Vec<f64>,
}

/// Data term of the objective on one batch: mean cross-entropy and its
/// gradient, kept sparse over the touched feature columns.
struct DataGradient {
    loss: f64,
    /// (flat weight index) -> d loss / d w
    weights: HashMap<usize, f64>,
    bias: Vec<f64>,
}

fn data_gradient(model: &ClassifierWeights, batch: &[&TrainingExample]) -> Result<DataGradient> {
    let k = model.num_classes();
    let d = model.dimension();
    let scale = 1.0 / batch.len() as f64;
    let mut grad = DataGradient {
        loss: 0.0,
        weights: HashMap::new(),
        bias: vec![0.0; k],
    };
    for ex in batch {
        let y = model.class_index(ex.label).ok_or_else(|| {
            Error::invalid(format!("label {} outside the class set", ex.label))
        })?;
        let logits = model.logits(&ex.features);
        let probs = softmax(&logits);
        grad.loss -= scale * probs[y].ln();
        for (c, &p) in probs.iter().enumerate() {
            let residual = scale * (p - if c == y { 1.0 } else { 0.0 });
            grad.bias[c] += residual;
            for &(i, count) in ex.features.entries() {
                *grad.weights.entry(c * d + i as usize).or_default() += residual * count as f64;
            }
        }
    }
    Ok(grad)
}

fn l2_term(model: &ClassifierWeights, l2: f64) -> f64 {
    0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Objective `mean CE + (l2 / 2) * ||W||^2` (biases unpenalized) and its
/// dense gradient `(dW, db)`.
pub fn loss_and_gradient(
    model: &ClassifierWeights,
    batch: &[TrainingExample],
    l2: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let g = data_gradient(model, &refs)?;
    let mut dw: Vec<f64> = model.weights.iter().map(|w| l2 * w).collect();
    for (i, v) in g.weights {
        dw[i] += v;
    }
    Ok((g.loss + l2_term(model, l2), dw, g.bias))
}

/// Mini-batch gradient descent on the L2-regularized cross-entropy.
pub fn train(
    examples: &[TrainingExample],
    classes: Vec<Strategy>,
    feature_config: FeatureConfig,
    params: &TrainParams,
) -> Result<TrainedModel> {
    let mut model = ClassifierWeights::zeros(classes, feature_config)?;
    if examples.is_empty() {
        return Err(Error::validation("no training examples"));
    }
    let missing: Vec<&str> = model
        .classes
        .iter()
        .filter(|c| !params.permit_absent.contains(c))
        .filter(|c| !examples.iter().any(|e| e.label == **c))
        .map(|c| c.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "classes absent from training data: {}",
            missing.join(", ")
        )));
    }
    if let Some(bad) = examples.iter().find(|e| model.class_index(e.label).is_none()) {
        return Err(Error::validation(format!(
            "label {} outside the class set",
            bad.label
        )));
    }
    if let Some(bad) = examples
        .iter()
        .flat_map(|e| e.features.entries())
        .find(|(i, _)| *i as usize >= feature_config.dimension)
    {
        return Err(Error::invalid(format!("feature index {} >= D", bad.0)));
    }

    let batch_size = if params.batch_size == 0 {
        examples.len()
    } else {
        params.batch_size
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::new();

    for epoch in 1..=params.epochs {
        let lr = match params.schedule {
            LrSchedule::Constant => params.learning_rate,
            LrSchedule::InverseSqrtEpoch => params.learning_rate / (epoch as f64).sqrt(),
        };
        if params.batch_size != 0 {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let g = data_gradient(&model, &batch)?;
            history.push(g.loss + l2_term(&model, params.l2));

            let decay = 1.0 - lr * params.l2;
            if decay != 1.0 {
                model.weights.iter_mut().for_each(|w| *w *= decay);
            }
            for (i, v) in g.weights {
                model.weights[i] -= lr * v;
            }
            for (b, v) in model.bias.iter_mut().zip(&g.bias) {
                *b -= lr * v;
            }
        }
    }
    Ok(TrainedModel {
        weights: model,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(classes: Vec<Strategy>, d: usize, w: &[&[f64]], b: &[f64]) -> ClassifierWeights {
        ClassifierWeights::from_parts(
            classes,
            FeatureConfig::new(d, 7).unwrap(),
            w.iter().flat_map(|r| r.iter().copied()).collect(),
            b.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn featurize_counts_unigrams_and_bigrams() {
        let cfg = FeatureConfig::default();
        assert_eq!(
            ngrams("who wrote hamlet"),
            ["who", "wrote", "hamlet", "who wrote", "wrote hamlet"]
        );
        assert_eq!(featurize(&cfg, "who wrote hamlet").total_count(), 5);
        assert!(featurize(&cfg, "").is_empty());
        assert_eq!(featurize(&cfg, "a b c"), featurize(&cfg, "a b c"));
        // With D=2 almost everything collides, but counts still add up.
        let tiny = FeatureConfig::new(2, 1).unwrap();
        let v = featurize(&tiny, "who wrote hamlet");
        assert_eq!(v.total_count(), 5);
        assert!(v.entries().iter().all(|&(i, _)| i < 2));
    }

    #[test]
    fn dimension_must_be_power_of_two() {
        assert!(FeatureConfig::new(3, 0).is_err());
        assert!(FeatureConfig::new(1, 0).is_err());
        assert!(FeatureConfig::new(4, 0).is_ok());
    }

    #[test]
    fn route_hand_computed_logits() {
        // x = [1, 2]; rows: [0.1,0]·x=0.1, [0.5,0.2]·x=0.9, [-0.1,0.2]·x=0.3
        let w = toy(
            Strategy::classes(false),
            2,
            &[&[0.1, 0.0], &[0.5, 0.2], &[-0.1, 0.2]],
            &[0.0, 0.0, 0.0],
        );
        let x = FeatureVector::from_counts([(0, 1), (1, 2)]);
        let d = w.route_features(&x);
        for (got, want) in d.logits.iter().zip([0.1, 0.9, 0.3]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(d.strategy, Strategy::SingleStep);
    }

    #[test]
    fn ties_go_to_cheapest() {
        let d = RouteDecision::from_logits(&Strategy::classes(false), vec![0.5, 0.5, 0.5]);
        assert_eq!(d.strategy, Strategy::NoRetrieval);
        let d = RouteDecision::from_logits(&Strategy::classes(false), vec![0.1, 0.7, 0.7]);
        assert_eq!(d.strategy, Strategy::SingleStep);
    }

    #[test]
    fn unanswerable_executes_as_no_retrieval() {
        let d = RouteDecision::from_logits(&Strategy::classes(true), vec![0.0, 0.1, 0.2, 3.0]);
        assert_eq!(d.predicted, Strategy::Unanswerable);
        assert_eq!(d.strategy, Strategy::NoRetrieval);
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = toy(Strategy::classes(false), 2, &[&[0.2, 1.0], &[0.0, -3.0], &[1.5, 0.25]], &[0.2, 0.0, -1.0]);
        let b = toy(Strategy::classes(false), 2, &[&[0.6, -2.0], &[0.0, 0.0], &[7.0, 0.5]], &[0.6, 1.0, 0.0]);
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        let mid = interpolate(&a, &b, 0.5).unwrap();
        assert!((mid.weights()[0] - 0.4).abs() < 1e-15);
        assert!((mid.bias()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn interpolation_rejects_bad_inputs() {
        let a = toy(Strategy::classes(false), 2, &[&[0.0; 2], &[0.0; 2], &[0.0; 2]], &[0.0; 3]);
        assert!(interpolate(&a, &a, 1.5).is_err());
        assert!(interpolate(&a, &a, -0.1).is_err());
        let c = ClassifierWeights::zeros(Strategy::classes(false), FeatureConfig::new(4, 7).unwrap())
            .unwrap();
        assert!(interpolate(&a, &c, 0.5).is_err());
        let e = ClassifierWeights::zeros(Strategy::classes(true), FeatureConfig::new(2, 7).unwrap())
            .unwrap();
        assert!(interpolate(&a, &e, 0.5).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -1000.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn binary_roundtrip_and_errors() {
        let cfg = FeatureConfig::new(16, 3).unwrap();
        let w = ClassifierWeights::from_parts(
            Strategy::classes(true),
            cfg,
            (0..64).map(|i| (i as f64).sin() * 1e-3).collect(),
            vec![0.1, -0.2, 0.3, f64::MIN_POSITIVE],
        )
        .unwrap();
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        let back = ClassifierWeights::read_from(buf.as_slice(), Some(cfg)).unwrap();
        assert_eq!(back, w);

        let err = ClassifierWeights::read_from(&buf[..buf.len() - 3], None).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let err = ClassifierWeights::read_from(
            buf.as_slice(),
            Some(FeatureConfig::new(8, 3).unwrap()),
        )
        .unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(ClassifierWeights::read_from(bad.as_slice(), None).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let w = toy(Strategy::classes(false), 2, &[&[0.1, 0.2], &[0.3, 1e-17], &[-5.5, 0.0]], &[1.0, 2.0, 3.0]);
        let back = ClassifierWeights::from_json(&w.to_json()).unwrap();
        assert_eq!(back, w);
        let text = serde_json::to_string(&w.to_json()).unwrap();
        let reparsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(ClassifierWeights::from_json(&reparsed).unwrap(), w);
    }

    #[test]
    fn missing_class_is_an_error_unless_permitted() {
        let cfg = FeatureConfig::new(8, 0).unwrap();
        let ex = vec![
            TrainingExample { features: featurize(&cfg, "a"), label: Strategy::SingleStep },
            TrainingExample { features: featurize(&cfg, "b"), label: Strategy::MultiStep },
        ];
        let err = train(&ex, Strategy::classes(false), cfg, &TrainParams::default()).unwrap_err();
        assert!(err.to_string().contains("no_retrieval"), "{err}");
        let params = TrainParams {
            permit_absent: vec![Strategy::NoRetrieval],
            ..TrainParams::default()
        };
        assert!(train(&ex, Strategy::classes(false), cfg, &params).is_ok());
    }

    #[test]
    fn single_example_fit() {
        let cfg = FeatureConfig::new(64, 0).unwrap();
        for label in Strategy::EXECUTABLE {
            let ex = vec![TrainingExample { features: featurize(&cfg, "when was it built"), label }];
            let params = TrainParams {
                permit_absent: Strategy::EXECUTABLE.to_vec(),
                ..TrainParams::default()
            };
            let m = train(&ex, Strategy::classes(false), cfg, &params).unwrap();
            assert_eq!(m.weights.route_features(&ex[0].features).predicted, label);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = FeatureConfig::new(256, 0).unwrap();
        let ex: Vec<_> = (0..100)
            .map(|i| TrainingExample {
                features: featurize(&cfg, &format!("q{} w{}", i % 7, i % 3)),
                label: Strategy::EXECUTABLE[i % 3],
            })
            .collect();
        let a = train(&ex, Strategy::classes(false), cfg, &TrainParams::default()).unwrap();
        let b = train(&ex, Strategy::classes(false), cfg, &TrainParams::default()).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.loss_history, b.loss_history);
    }
}
