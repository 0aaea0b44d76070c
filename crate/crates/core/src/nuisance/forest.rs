//! Random forests built from CART trees: bootstrap-resampled rows,
//! `ceil(sqrt(d))` candidate features per split, variance reduction
//! (regression) or Gini impurity (binary classification) as the split
//! criterion — for 0/1 labels both reduce to the same sum-of-squares score,
//! so a single scorer serves both modes.
//!
//! Feature candidates are drawn over a name-ordered ranking and evaluated in
//! name order with strict improvement, which makes fits invariant to column
//! permutations of identically named inputs. Each tree derives its own seed
//! from the forest seed, so parallel construction is deterministic.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::util::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], idx: usize) -> usize {
            match &nodes[idx] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestFit {
    pub trees: Vec<Tree>,
    pub classifier: bool,
    pub n_features: usize,
}

impl ForestFit {
    /// Mean of the per-tree predictions (class fraction for classifiers —
    /// flooring into the open unit interval happens at the
    /// `FittedNuisance` level).
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let rows: Vec<usize> = (0..x.rows()).collect();
        rows.par_iter()
            .map(|&r| {
                let row = x.row(r);
                let s: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
                s / self.trees.len() as f64
            })
            .collect()
    }
}

pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
    pub classifier: bool,
}

pub fn fit_forest(
    x: &Matrix,
    y: &[f64],
    params: &ForestParams,
    names: Option<&[String]>,
) -> Result<ForestFit> {
    let (n, d) = (x.rows(), x.cols());
    if n != y.len() {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    if n == 0 || d == 0 {
        return Err(Error::BadSpec("forest needs at least one row and one column".into()));
    }
    if params.classifier {
        if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::BadSpec("classifier labels must be 0 or 1".into()));
        }
        let pos = y.iter().filter(|v| **v == 1.0).count();
        if pos == 0 || pos == n {
            return Err(Error::SingleClass);
        }
    }
    if let Some(names) = names {
        if names.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: names.len() });
        }
    }
    // Rank -> column map ordered by feature name (identity when unnamed):
    // all stochastic feature choices happen in rank space, so renumbering
    // identically named columns cannot change the fit.
    let mut order: Vec<usize> = (0..d).collect();
    if let Some(names) = names {
        order.sort_by(|&a, &b| names[a].cmp(&names[b]));
    }
    let m_try = (d as f64).sqrt().ceil() as usize;

    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut builder = TreeBuilder {
                x,
                y,
                order: &order,
                m_try,
                max_depth: params.max_depth,
                min_leaf: params.min_leaf,
                nodes: Vec::new(),
                rng,
            };
            builder.build(rows, 0);
            Tree { nodes: builder.nodes }
        })
        .collect();

    Ok(ForestFit { trees, classifier: params.classifier, n_features: d })
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    order: &'a [usize],
    m_try: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
    rng: ChaCha8Rng,
}

impl<'a> TreeBuilder<'a> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64;
        let pure = rows
            .iter()
            .all(|&r| (self.y[r] - self.y[rows[0]]).abs() < 1e-12);
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf || pure {
            self.nodes.push(TreeNode::Leaf { value: mean });
            return self.nodes.len() - 1;
        }
        let split = self.best_split(&rows);
        let Some((feature, threshold)) = split else {
            self.nodes.push(TreeNode::Leaf { value: mean });
            return self.nodes.len() - 1;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| self.x.get(r, feature) <= threshold);
        // Reserve this node's slot before recursing so child indices are
        // stable.
        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: mean }); // placeholder
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[idx] = TreeNode::Split { feature, threshold, left, right };
        idx
    }

    /// Chooses among `m_try` sampled feature ranks the split maximizing
    /// `S_L^2/n_L + S_R^2/n_R` (equivalent to variance reduction, and to
    /// Gini reduction for 0/1 labels). Strictly-greater comparisons in
    /// name-rank order make ties deterministic.
    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let d = self.order.len();
        let mut ranks: Vec<usize> = (0..d).collect();
        let (sampled, _) = ranks.partial_shuffle(&mut self.rng, self.m_try.min(d));
        let mut chosen: Vec<usize> = sampled.to_vec();
        chosen.sort_unstable();

        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let n = rows.len();
        let base = total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)

        for rank in chosen {
            let feature = self.order[rank];
            let mut pairs: Vec<(f64, f64)> =
                rows.iter().map(|&r| (self.x.get(r, feature), self.y[r])).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += pairs[k - 1].1;
                if pairs[k - 1].0 == pairs[k].0 {
                    continue; // No threshold separates equal values.
                }
                if k < self.min_leaf || n - k < self.min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / k as f64
                    + right_sum * right_sum / (n - k) as f64;
                if score > base + 1e-12 && best.as_ref().map_or(true, |b| score > b.0) {
                    let threshold = 0.5 * (pairs[k - 1].0 + pairs[k].0);
                    best = Some((score, feature, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::ModelSpec;
    use rand_distr::{Distribution, Normal};

    fn params(n_trees: usize, max_depth: usize, seed: u64, classifier: bool) -> ForestParams {
        ForestParams { n_trees, max_depth, min_leaf: 1, seed, classifier }
    }

    #[test]
    fn constant_labels_give_constant_predictions() {
        let x = Matrix::from_vec(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = vec![3.25; 5];
        let fit = fit_forest(&x, &y, &params(10, 5, 0, false), None).unwrap();
        for p in fit.predict(&x) {
            assert_eq!(p, 3.25);
        }
    }

    #[test]
    fn stumps_recover_a_step_function() {
        // y = sign(x): even depth-1 trees should fit both plateaus.
        let n = 200;
        let vals: Vec<f64> = (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect();
        let x = Matrix::from_vec(n, 1, vals.clone());
        let y: Vec<f64> = vals.iter().map(|v| if *v > 0.0 { 1.0 } else { -1.0 }).collect();
        let fit = fit_forest(&x, &y, &params(50, 1, 1, false), None).unwrap();
        let test = Matrix::from_vec(2, 1, vec![-1.0, 1.0]);
        let preds = fit.predict(&test);
        assert!((preds[0] + 1.0).abs() < 0.1, "left plateau {}", preds[0]);
        assert!((preds[1] - 1.0).abs() < 0.1, "right plateau {}", preds[1]);
        for t in &fit.trees {
            assert!(t.depth() <= 1);
        }
    }

    #[test]
    fn min_leaf_of_n_forces_a_single_leaf() {
        let x = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let p = ForestParams { n_trees: 3, max_depth: 10, min_leaf: 4, seed: 2, classifier: false };
        let fit = fit_forest(&x, &y, &p, None).unwrap();
        for t in &fit.trees {
            assert_eq!(t.nodes.len(), 1);
        }
    }

    #[test]
    fn same_seed_reproduces_different_seed_varies() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 120;
        let mut x = Matrix::zeros(n, 3);
        let mut y = Vec::new();
        for r in 0..n {
            for c in 0..3 {
                x.set(r, c, normal.sample(&mut rng));
            }
            y.push(x.get(r, 0) + 0.3 * normal.sample(&mut rng));
        }
        let a = fit_forest(&x, &y, &params(20, 6, 7, false), None).unwrap();
        let b = fit_forest(&x, &y, &params(20, 6, 7, false), None).unwrap();
        let c = fit_forest(&x, &y, &params(20, 6, 8, false), None).unwrap();
        assert_eq!(a.predict(&x), b.predict(&x));
        assert_ne!(a.predict(&x), c.predict(&x));
    }

    #[test]
    fn named_fits_are_invariant_to_column_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 150;
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(), Vec::new(), Vec::new()];
        let mut y = Vec::new();
        for _ in 0..n {
            let a = normal.sample(&mut rng);
            let b = normal.sample(&mut rng);
            let c = normal.sample(&mut rng);
            cols[0].push(a);
            cols[1].push(b);
            cols[2].push(c);
            y.push(2.0 * a - b + 0.2 * normal.sample(&mut rng));
        }
        let x_abc = Matrix::from_columns(&cols);
        let names_abc: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let x_cab = Matrix::from_columns(&[cols[2].clone(), cols[0].clone(), cols[1].clone()]);
        let names_cab: Vec<String> = vec!["c".into(), "a".into(), "b".into()];

        let f1 = fit_forest(&x_abc, &y, &params(15, 5, 3, false), Some(&names_abc)).unwrap();
        let f2 = fit_forest(&x_cab, &y, &params(15, 5, 3, false), Some(&names_cab)).unwrap();
        let p1 = f1.predict(&x_abc);
        let p2 = f2.predict(&x_cab);
        assert_eq!(p1, p2);
    }

    #[test]
    fn classifier_probabilities_are_floored_via_model_spec() {
        let n = 100;
        let vals: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x = Matrix::from_vec(n, 1, vals.clone());
        let y: Vec<f64> = vals.iter().map(|v| (*v >= 50.0) as u8 as f64).collect();
        let spec = ModelSpec::ForestClassifier { n_trees: 30, max_depth: 8, min_leaf: 1, seed: 4 };
        let fit = spec.fit(&x, &y, None).unwrap();
        let preds = fit.predict(&x).unwrap();
        for p in preds {
            assert!((0.001..=0.999).contains(&p));
        }
    }

    #[test]
    fn classifier_rejects_single_class_and_non_binary() {
        let x = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            fit_forest(&x, &[1.0, 1.0, 1.0], &params(3, 3, 0, true), None),
            Err(Error::SingleClass)
        ));
        assert!(fit_forest(&x, &[0.0, 0.5, 1.0], &params(3, 3, 0, true), None).is_err());
    }

    #[test]
    fn deeper_forests_fit_harder_targets_better() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 400;
        let mut x = Matrix::zeros(n, 2);
        let mut y = Vec::new();
        for r in 0..n {
            let a = normal.sample(&mut rng);
            let b = normal.sample(&mut rng);
            x.set(r, 0, a);
            x.set(r, 1, b);
            y.push(a * b); // pure interaction
        }
        let shallow = fit_forest(&x, &y, &params(40, 2, 3, false), None).unwrap();
        let deep = fit_forest(&x, &y, &params(40, 10, 3, false), None).unwrap();
        let mse = |preds: &[f64]| -> f64 {
            preds.iter().zip(&y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64
        };
        assert!(mse(&deep.predict(&x)) < mse(&shallow.predict(&x)));
    }
}
