//! Random-forest regression with exact midpoint split search and
//! impurity-decrease feature importances.

use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Predictor, TargetSpace};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` means ⌈p/3⌉.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidInput("forest needs at least one tree".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidInput("max_depth must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidInput("min_samples_leaf must be at least 1".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::InvalidInput("features_per_split must be at least 1".into()));
        }
        Ok(())
    }

    pub fn mtry(&self, n_features: usize) -> usize {
        self.features_per_split.unwrap_or(n_features.div_ceil(3)).clamp(1, n_features.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        prediction: f64,
        n_samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: usize,
        /// Decrease of the summed squared error achieved by this split.
        impurity_decrease: f64,
    },
}

/// Arena-allocated tree; node 0 is the root. Rows with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { prediction, .. } => return *prediction,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    fn add_importances(&self, acc: &mut [f64]) {
        for n in &self.nodes {
            if let Node::Split {
                feature,
                impurity_decrease,
                ..
            } = n
            {
                acc[*feature] += impurity_decrease;
            }
        }
    }
}

struct Builder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    params: &'a ForestParams,
    mtry: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Builder<'_> {
    fn leaf(&mut self, samples: &[usize], mean: f64) -> usize {
        self.nodes.push(Node::Leaf {
            prediction: mean,
            n_samples: samples.len(),
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, samples: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = samples.len();
        let mean = samples.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let sse: f64 = samples.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        let depth_reached = self.params.max_depth.is_some_and(|d| depth >= d);
        if sse <= 0.0 || n < 2 * self.params.min_samples_leaf || depth_reached {
            return self.leaf(samples, mean);
        }
        let Some(best) = self.best_split(samples, mean, rng) else {
            return self.leaf(samples, mean);
        };
        let id = self.nodes.len();
        // placeholder until the children exist
        self.nodes.push(Node::Leaf {
            prediction: mean,
            n_samples: n,
        });
        let left = self.grow(&best.left, depth + 1, rng);
        let right = self.grow(&best.right, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            n_samples: n,
            impurity_decrease: best.decrease.max(0.0),
        };
        id
    }

    /// Visits features in random order until `mtry` non-constant ones were
    /// searched; constant features do not count toward the quota.
    fn best_split(&self, samples: &[usize], mean: f64, rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let p = self.x.ncols();
        let min_leaf = self.params.min_samples_leaf;
        let n = samples.len();
        let mut order: Vec<usize> = (0..p).collect();
        let mut searched = 0;
        let mut best: Option<(usize, f64, f64, usize)> = None; // feature, threshold, decrease, n_left
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(n);
        let parent: f64 = samples.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();

        for k in 0..p {
            if searched == self.mtry {
                break;
            }
            let pick = rng.random_range(k..p);
            order.swap(k, pick);
            let f = order[k];
            sorted.clear();
            sorted.extend(samples.iter().map(|&i| (self.x[(i, f)], self.y[i] - mean)));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if sorted[0].0 == sorted[n - 1].0 {
                continue;
            }
            searched += 1;
            let total: f64 = sorted.iter().map(|s| s.1).sum();
            let total_sq: f64 = sorted.iter().map(|s| s.1 * s.1).sum();
            let (mut sum_l, mut sq_l) = (0.0, 0.0);
            for i in 0..n - 1 {
                sum_l += sorted[i].1;
                sq_l += sorted[i].1 * sorted[i].1;
                let n_l = i + 1;
                if sorted[i].0 == sorted[i + 1].0 || n_l < min_leaf || n - n_l < min_leaf {
                    continue;
                }
                let n_r = n - n_l;
                let sse_l = sq_l - sum_l * sum_l / n_l as f64;
                let sum_r = total - sum_l;
                let sse_r = (total_sq - sq_l) - sum_r * sum_r / n_r as f64;
                let decrease = parent - sse_l - sse_r;
                if best.is_none_or(|b| decrease > b.2) {
                    let (a, b) = (sorted[i].0, sorted[i + 1].0);
                    let mid = 0.5 * (a + b);
                    let threshold = if mid < b { mid } else { a };
                    best = Some((f, threshold, decrease, n_l));
                }
            }
        }
        let (feature, threshold, decrease, _) = best?;
        let (left, right): (Vec<usize>, Vec<usize>) =
            samples.iter().partition(|&&i| self.x[(i, feature)] <= threshold);
        Some(BestSplit {
            feature,
            threshold,
            decrease,
            left,
            right,
        })
    }
}

fn fit_tree(x: &DMatrix<f64>, y: &[f64], params: &ForestParams, seed: u64, stream: u64) -> RegressionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n = y.len();
    let samples: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut b = Builder {
        x,
        y,
        params,
        mtry: params.mtry(x.ncols()),
        nodes: Vec::new(),
    };
    b.grow(&samples, 0, &mut rng);
    RegressionTree { nodes: b.nodes }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub params: ForestParams,
    pub seed: u64,
    pub n_features: usize,
    pub target_space: TargetSpace,
    /// Normalized total impurity decrease per feature; all zero if no tree split.
    pub importances: Vec<f64>,
    pub trees: Vec<RegressionTree>,
}

/// Trains `params.n_trees` trees; tree `t` draws from stream `t` of a
/// generator seeded with `seed`, so results do not depend on scheduling.
pub fn fit_forest(x: &DMatrix<f64>, y: &[f64], params: &ForestParams, seed: u64) -> Result<Forest> {
    params.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: y.len() });
    }
    if x.ncols() == 0 {
        return Err(Error::InvalidInput("forest needs at least one feature".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forest training data".into()));
    }
    let trees: Vec<RegressionTree> = (0..params.n_trees as u64)
        .into_par_iter()
        .map(|t| fit_tree(x, y, params, seed, t))
        .collect();
    let mut importances = vec![0.0; x.ncols()];
    for t in &trees {
        t.add_importances(&mut importances);
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(Forest {
        params: *params,
        seed,
        n_features: x.ncols(),
        target_space: TargetSpace::default(),
        importances,
        trees,
    })
}

impl Forest {
    pub fn with_target_space(mut self, space: TargetSpace) -> Self {
        self.target_space = space;
        self
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let k = self.trees.len() as f64;
        Ok((0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                self.trees.iter().map(|t| t.predict_row(&row)).sum::<f64>() / k
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV `voltage_v,importance`, one row per feature.
    pub fn write_importances(&self, path: &Path, voltages: &[f64]) -> Result<()> {
        if voltages.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: voltages.len(),
            });
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let err = |e| Error::csv(path, e);
        w.write_record(["voltage_v", "importance"]).map_err(err)?;
        for (v, imp) in voltages.iter().zip(&self.importances) {
            w.write_record([v.to_string(), imp.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Mean of the tree predictions.
pub fn predict_forest(f: &Forest, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    f.predict(x)
}

impl Predictor for Forest {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Forest::predict(self, x)
    }

    fn target_space(&self) -> TargetSpace {
        self.target_space
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn data(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(0.0..1.0));
        let y = (0..n).map(|i| 3.0 * x[(i, 0)] - x[(i, 1 % p)] + 0.1 * rng.random_range(0.0..1.0)).collect();
        (x, y)
    }

    fn single_deep_tree() -> ForestParams {
        ForestParams {
            n_trees: 1,
            bootstrap: false,
            ..ForestParams::default()
        }
    }

    #[test]
    fn memorizes_without_bootstrap() {
        let (x, y) = data(40, 6, 1);
        let f = fit_forest(&x, &y, &single_deep_tree(), 3).unwrap();
        assert_eq!(f.predict(&x).unwrap(), y);
        assert!((f.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_target_gives_single_leaves() {
        let (x, _) = data(20, 3, 2);
        let f = fit_forest(
            &x,
            &[2.5; 20],
            &ForestParams {
                n_trees: 5,
                ..ForestParams::default()
            },
            0,
        )
        .unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        assert!(f.importances.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stump_matches_hand_enumeration() {
        // feature 0 splits: {1}|{2,3,4} → 14, {1,2}|{3,4} → 0.5, {1,2,3}|{4} → 32/3
        // feature 1 splits (sorted 10,20,30,40 → y 1,5,1,6): 14, 20.5, 32/3
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.0, 30.0, 3.0, 20.0, 4.0, 40.0]);
        let y = [1.0, 1.0, 5.0, 6.0];
        let params = ForestParams {
            n_trees: 1,
            max_depth: Some(1),
            features_per_split: Some(2),
            bootstrap: false,
            ..ForestParams::default()
        };
        let f = fit_forest(&x, &y, &params, 11).unwrap();
        let tree = &f.trees[0];
        match &tree.nodes[0] {
            Node::Split {
                feature,
                threshold,
                impurity_decrease,
                ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 2.5);
                // parent SSE 20.75 minus 0.5
                assert!((impurity_decrease - 20.25).abs() < 1e-12);
            }
            other => panic!("expected a split, got {other:?}"),
        }
        let probe = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 2.4, 100.0, 2.6, 0.0]);
        assert_eq!(f.predict(&probe).unwrap(), vec![1.0, 1.0, 5.5]);
        assert_eq!(f.importances, vec![1.0, 0.0]);
    }

    #[test]
    fn averaging_over_trees() {
        let (x, y) = data(30, 4, 5);
        let params = ForestParams {
            n_trees: 2,
            ..ForestParams::default()
        };
        let f = fit_forest(&x, &y, &params, 9).unwrap();
        let row: Vec<f64> = x.row(0).iter().copied().collect();
        let (a, b) = (f.trees[0].predict_row(&row), f.trees[1].predict_row(&row));
        assert_eq!(f.predict(&x.rows(0, 1).into_owned()).unwrap()[0], (a + b) / 2.0);

        let one = Forest {
            trees: vec![f.trees[0].clone()],
            ..f.clone()
        };
        assert_eq!(one.predict(&x.rows(0, 1).into_owned()).unwrap()[0], a);
        assert!(f.predict(&DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (x, y) = data(50, 10, 6);
        let params = ForestParams {
            n_trees: 20,
            ..ForestParams::default()
        };
        let a = fit_forest(&x, &y, &params, 42).unwrap();
        let b = fit_forest(&x, &y, &params, 42).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&x, &y, &params, 43).unwrap();
        assert_ne!(a.trees, c.trees);
        let back = Forest::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back.predict(&x).unwrap(), a.predict(&x).unwrap());
    }

    #[test]
    fn invalid_params() {
        let (x, y) = data(10, 2, 1);
        for p in [
            ForestParams {
                n_trees: 0,
                ..ForestParams::default()
            },
            ForestParams {
                max_depth: Some(0),
                ..ForestParams::default()
            },
        ] {
            assert!(fit_forest(&x, &y, &p, 0).is_err());
        }
    }

    #[test]
    fn importance_csv() {
        let (x, y) = data(20, 3, 1);
        let f = fit_forest(&x, &y, &single_deep_tree(), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imp.csv");
        f.write_importances(&path, &[2.0, 2.8, 3.6]).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("voltage_v,importance\n2,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn predictions_stay_within_training_range(seed in any::<u64>()) {
            let (x, y) = data(25, 4, seed);
            let params = ForestParams { n_trees: 10, ..ForestParams::default() };
            let f = fit_forest(&x, &y, &params, seed).unwrap();
            let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            let (probe, _) = data(15, 4, seed ^ 1);
            for p in f.predict(&(probe * 3.0)).unwrap() {
                prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
            }
            let s: f64 = f.importances.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(f.importances.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn permuting_columns_permutes_importances(seed in any::<u64>()) {
            // every feature examined at every split; shallow so that small
            // nodes with tied candidate splits do not occur
            let (x, y) = data(200, 3, seed);
            let params = ForestParams { n_trees: 1, bootstrap: false, max_depth: Some(2), features_per_split: Some(3), ..ForestParams::default() };
            let a = fit_forest(&x, &y, &params, 1).unwrap();
            let perm = [2usize, 0, 1];
            let xp = x.select_columns(&perm);
            let b = fit_forest(&xp, &y, &params, 1).unwrap();
            for (k, &j) in perm.iter().enumerate() {
                prop_assert!((b.importances[k] - a.importances[j]).abs() < 1e-9);
            }
        }
    }
}
