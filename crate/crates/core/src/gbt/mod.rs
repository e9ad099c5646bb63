//! Gradient-boosted decision trees for multiclass classification.
//!
//! Each round fits one regression tree per class to the softmax gradients,
//! using binned features and the second-order gain. Leaves store the raw
//! Newton weight; the learning rate is applied when trees are summed.

pub mod binning;
pub mod objective;
pub mod tree;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
pub use binning::BinnedMatrix;
pub use objective::{cross_entropy, softmax, softmax_grad_hess, HESSIAN_FLOOR};
pub use tree::{best_split, build_tree, leaf_weight, split_gain, Node, SplitCandidate, Tree, TreeParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Bin limit used by exact mode; every distinct value gets its own bin up to
/// this many.
pub const EXACT_MAX_BINS: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub reg_lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub n_bins: usize,
    /// Split on every distinct value instead of quantile bins.
    pub exact: bool,
    pub base_score: f64,
    /// Recorded for provenance; training itself draws no random numbers.
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            learning_rate: 0.3,
            max_depth: 6,
            reg_lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            n_bins: 256,
            exact: false,
            base_score: 0.0,
            seed: 0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::param(m));
        if self.n_rounds < 1 {
            return bad("n_rounds must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if !(self.reg_lambda >= 0.0 && self.reg_lambda.is_finite()) {
            return bad("reg_lambda must be finite and >= 0");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be finite and >= 0");
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad("min_child_weight must be finite and >= 0");
        }
        if self.n_bins < 2 || self.n_bins > EXACT_MAX_BINS {
            return bad("n_bins must lie in [2, 65536]");
        }
        if !self.base_score.is_finite() {
            return bad("base_score must be finite");
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            reg_lambda: self.reg_lambda,
            gamma: self.gamma,
            min_child_weight: self.min_child_weight,
        }
    }

    fn max_bins(&self) -> usize {
        if self.exact {
            EXACT_MAX_BINS
        } else {
            self.n_bins
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub format_version: u32,
    pub params: GbtParams,
    pub n_features: usize,
    pub n_classes: usize,
    /// Indexed `[round][class]`.
    pub trees: Vec<Vec<Tree>>,
    /// Mean training cross-entropy before the first round and after each one.
    pub train_loss: Vec<f64>,
}

impl GbtModel {
    /// A model with no trees: every prediction is `softmax(base_score)`.
    pub fn untrained(params: GbtParams, n_features: usize, n_classes: usize) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            params,
            n_features,
            n_classes,
            trees: Vec::new(),
            train_loss: Vec::new(),
        }
    }

    pub fn logits(&self, features: &[f32]) -> Result<Vec<f64>> {
        if features.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: features.len(),
            });
        }
        let eta = self.params.learning_rate;
        let mut z = vec![self.params.base_score; self.n_classes];
        for round in &self.trees {
            for (zk, t) in z.iter_mut().zip(round) {
                *zk += eta * t.eval(features);
            }
        }
        Ok(z)
    }

    pub fn predict_proba(&self, features: &[f32]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(features)?))
    }

    /// Argmax of the probabilities; ties go to the lowest class.
    pub fn predict(&self, features: &[f32]) -> Result<u8> {
        Ok(argmax(&self.predict_proba(features)?) as u8)
    }

    pub fn predict_many(&self, rows: &[&[f32]]) -> Result<Vec<u8>> {
        rows.par_iter().map(|r| self.predict(r)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        self.params.validate()?;
        if self.n_classes < 2 || self.n_classes > 256 {
            return Err(Error::parse("n_classes", "must lie in [2, 256]"));
        }
        for (r, round) in self.trees.iter().enumerate() {
            if round.len() != self.n_classes {
                return Err(Error::parse(format!("trees[{r}]"), "one tree per class expected"));
            }
            for (k, t) in round.iter().enumerate() {
                t.check(self.n_features)
                    .map_err(|m| Error::parse(format!("trees[{r}][{k}]"), m))?;
                if t.depth() > self.params.max_depth {
                    return Err(Error::parse(format!("trees[{r}][{k}]"), "deeper than max_depth"));
                }
            }
        }
        Ok(())
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn mean_loss(logits: &[f64], labels: &[u8], k: usize) -> f64 {
    let total: f64 = logits
        .par_chunks(k)
        .zip(labels.par_iter())
        .map(|(z, &y)| cross_entropy(z, y as usize))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / labels.len() as f64
}

/// Trains on row-major features.
pub fn train_rows(rows: &[&[f32]], labels: &[u8], n_classes: usize, params: &GbtParams) -> Result<GbtModel> {
    params.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    if !(2..=256).contains(&n_classes) {
        return Err(Error::param("n_classes must lie in [2, 256]"));
    }
    if let Some(&label) = labels.iter().find(|&&y| y as usize >= n_classes) {
        return Err(Error::LabelOutOfRange { label: label as usize, n_classes });
    }
    let n_features = rows[0].len();
    for r in rows {
        if r.len() != n_features {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                found: r.len(),
            });
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("features must be finite"));
        }
    }

    let n = rows.len();
    let k = n_classes;
    let matrix = BinnedMatrix::from_rows(rows, params.max_bins());
    let tp = params.tree_params();
    let eta = params.learning_rate;

    let mut logits = vec![params.base_score; n * k];
    let mut model = GbtModel::untrained(params.clone(), n_features, n_classes);
    model.train_loss.push(mean_loss(&logits, labels, k));
    // gh[class][row] = [g, h]
    let mut gh = vec![vec![[0.0f64; 2]; n]; k];
    let mut leaf_out = vec![vec![0.0f64; n]; k];

    for round in 0..params.n_rounds {
        let per_row: Vec<(Vec<f64>, Vec<f64>)> = logits
            .par_chunks(k)
            .zip(labels.par_iter())
            .map(|(z, &y)| softmax_grad_hess(z, y as usize))
            .collect();
        for (i, (g, h)) in per_row.iter().enumerate() {
            for c in 0..k {
                gh[c][i] = [g[c], h[c]];
            }
        }
        let trees: Vec<Tree> = gh
            .par_iter()
            .zip(leaf_out.par_iter_mut())
            .map(|(ghc, out)| build_tree(&matrix, ghc, &tp, out))
            .collect();
        for (c, out) in leaf_out.iter().enumerate() {
            for (i, &w) in out.iter().enumerate() {
                logits[i * k + c] += eta * w;
            }
        }
        model.trees.push(trees);
        let loss = mean_loss(&logits, labels, k);
        model.train_loss.push(loss);
        log::info!("round {:>4}  train loss {:.6}", round + 1, loss);
    }
    Ok(model)
}

pub fn train(ds: &Dataset, params: &GbtParams) -> Result<GbtModel> {
    let rows = ds.rows();
    let labels = ds.labels();
    train_rows(&rows, &labels, ds.n_classes, params)
}

pub fn save_model(path: &Path, model: &GbtModel) -> Result<()> {
    let text = serde_json::to_string(model)?;
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

pub fn model_from_json(text: &str) -> Result<GbtModel> {
    // Look at the version before the full structure so a newer format is
    // reported as such rather than as a schema error.
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == MODEL_FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::UnsupportedVersion {
                found: u32::try_from(v).unwrap_or(u32::MAX),
                expected: MODEL_FORMAT_VERSION,
            })
        }
        None => return Err(Error::parse("format_version", "missing or not an integer")),
    }
    let model: GbtModel = serde_json::from_value(raw).map_err(|e| Error::parse("model", e.to_string()))?;
    model.validate()?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<GbtModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 60 points, 3 classes decided by thresholds on feature 1; features 0
    /// and 2 are noise.
    fn separable_toy() -> (Vec<Vec<f32>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let y = (i % 3) as u8;
            let x1 = y as f32 + rng.random_range(0.05..0.95);
            rows.push(vec![rng.random::<f32>(), x1, rng.random::<f32>() * 10.0]);
            labels.push(y);
        }
        (rows, labels)
    }

    fn refs(rows: &[Vec<f32>]) -> Vec<&[f32]> {
        rows.iter().map(|r| r.as_slice()).collect()
    }

    #[test]
    fn separable_toy_is_learned_within_ten_rounds() {
        let (rows, labels) = separable_toy();
        let params = GbtParams {
            n_rounds: 10,
            ..Default::default()
        };
        let m = train_rows(&refs(&rows), &labels, 3, &params).unwrap();
        assert_eq!(m.trees.len(), 10);
        assert_eq!(m.predict_many(&refs(&rows)).unwrap(), labels);
        assert_eq!(m.train_loss.len(), 11);
    }

    #[test]
    fn loss_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f32>> = (0..400).map(|_| (0..5).map(|_| rng.random::<f32>()).collect()).collect();
        let labels: Vec<u8> = rows
            .iter()
            .map(|r| {
                let s = r[0] + 0.5 * r[1] + 0.3 * rng.random::<f32>();
                (s * 3.0).min(5.0) as u8
            })
            .collect();
        for eta in [0.05, 0.3] {
            let params = GbtParams {
                n_rounds: 40,
                learning_rate: eta,
                ..Default::default()
            };
            let m = train_rows(&refs(&rows), &labels, 6, &params).unwrap();
            for w in m.train_loss.windows(2) {
                assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
            }
            let (rows2, labels2) = separable_toy();
            let m = train_rows(&refs(&rows2), &labels2, 3, &params).unwrap();
            assert!(m.train_loss.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn untrained_model_is_uniform() {
        let m = GbtModel::untrained(GbtParams::default(), 4, 6);
        for p in m.predict_proba(&[0.1, 0.2, 0.3, 0.4]).unwrap() {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
        assert_eq!(m.predict(&[0.0; 4]).unwrap(), 0);
        assert!(matches!(
            m.predict(&[0.0; 3]),
            Err(Error::DimensionMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn parameter_validation() {
        let (rows, labels) = separable_toy();
        let zero = GbtParams {
            n_rounds: 0,
            ..Default::default()
        };
        assert!(matches!(train_rows(&refs(&rows), &labels, 3, &zero), Err(Error::InvalidParam(_))));
        for p in [
            GbtParams {
                learning_rate: 0.0,
                ..Default::default()
            },
            GbtParams {
                learning_rate: 1.5,
                ..Default::default()
            },
            GbtParams {
                max_depth: 0,
                ..Default::default()
            },
            GbtParams {
                reg_lambda: -1.0,
                ..Default::default()
            },
            GbtParams {
                gamma: -0.1,
                ..Default::default()
            },
            GbtParams {
                n_bins: 1,
                ..Default::default()
            },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
        assert!(matches!(
            train_rows(&refs(&rows), &labels, 2, &GbtParams::default()),
            Err(Error::LabelOutOfRange { label: 2, .. })
        ));
        assert!(matches!(train_rows(&[], &[], 3, &GbtParams::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn monotone_transform_invariance() {
        // Values on a grid that the training set covers, so every test value
        // sits on the same side of each cut in both spaces.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut draw = || -> Vec<f32> { (0..3).map(|_| rng.random_range(0..40) as f32 * 0.1).collect() };
        let rows: Vec<Vec<f32>> = (0..400).map(|_| draw()).collect();
        let tests: Vec<Vec<f32>> = (0..200).map(|_| draw()).collect();
        let labels: Vec<u8> = rows.iter().map(|r| ((r[0] * r[2]) as u8).min(5)).collect();
        let warp = |r: &Vec<f32>| -> Vec<f32> { vec![r[0].exp(), r[1] * 3.0 - 7.0, r[2].powi(3)] };
        let warped: Vec<Vec<f32>> = rows.iter().map(warp).collect();
        let params = GbtParams {
            n_rounds: 15,
            exact: true,
            ..Default::default()
        };
        let a = train_rows(&refs(&rows), &labels, 6, &params).unwrap();
        let b = train_rows(&refs(&warped), &labels, 6, &params).unwrap();
        assert_eq!(a.train_loss, b.train_loss);
        for t in &tests {
            assert_eq!(a.predict_proba(t).unwrap(), b.predict_proba(&warp(t)).unwrap());
        }
    }

    #[test]
    fn thread_count_does_not_change_the_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f32>> = (0..300).map(|_| (0..70).map(|_| rng.random::<f32>()).collect()).collect();
        let labels: Vec<u8> = rows.iter().map(|r| ((r[3] + r[50]) * 3.0) as u8).collect();
        let params = GbtParams {
            n_rounds: 8,
            ..Default::default()
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| train_rows(&refs(&rows), &labels, 6, &params).unwrap());
        let b = four.install(|| train_rows(&refs(&rows), &labels, 6, &params).unwrap());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn save_load_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f32>> = (0..300).map(|_| (0..6).map(|_| rng.random::<f32>()).collect()).collect();
        let labels: Vec<u8> = rows.iter().map(|r| (r[1] * 6.0) as u8).collect();
        let params = GbtParams {
            n_rounds: 12,
            ..Default::default()
        };
        let m = train_rows(&refs(&rows), &labels, 6, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&path, &m).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        for _ in 0..100 {
            let x: Vec<f32> = (0..6).map(|_| rng.random_range(-0.5..1.5)).collect();
            assert_eq!(m.predict_proba(&x).unwrap(), back.predict_proba(&x).unwrap());
        }

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(matches!(model_from_json(&text[..text.len() / 2]), Err(Error::Parse { .. })));
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(
            model_from_json(&bumped),
            Err(Error::UnsupportedVersion { found: 2, expected: 1 })
        ));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["trees"][0][0]["nodes"][0] = serde_json::json!({"feature": 99, "threshold": 0.5, "left": 1, "right": 2});
        assert!(matches!(model_from_json(&v.to_string()), Err(Error::Parse { .. })));
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(x in proptest::collection::vec(-10.0f32..10.0, 6)) {
            let (rows, labels) = separable_toy();
            let rows: Vec<Vec<f32>> = rows.iter().map(|r| vec![r[0], r[1], r[2], r[0], r[1], r[2]]).collect();
            let m = train_rows(&refs(&rows), &labels, 3, &GbtParams { n_rounds: 5, ..Default::default() }).unwrap();
            let p = m.predict_proba(&x).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
