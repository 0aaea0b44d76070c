//! K-fold cross-fitting: out-of-fold nuisance predictions where every
//! preprocessing step (imputation, standardization) is refit inside each
//! training fold, so held-out rows never leak into their own predictions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{apply_imputer, fit_imputer, fit_scaler, DesignMatrix};
use crate::matrix::Matrix;
use crate::nuisance::ModelSpec;

/// Deterministic fold assignment: a seeded shuffle dealt round-robin, so
/// fold sizes differ by at most one.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossFitPlan {
    k: usize,
    assignment: Vec<usize>,
}

impl CrossFitPlan {
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::BadSpec(format!("cross-fitting needs k >= 2, got {k}")));
        }
        if n < k {
            return Err(Error::FoldTooSmall { fold: 0 });
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let mut assignment = vec![0; n];
        for (pos, &row) in order.iter().enumerate() {
            assignment[row] = pos % k;
        }
        Ok(CrossFitPlan { k, assignment })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn fold_of(&self, row: usize) -> usize {
        self.assignment[row]
    }

    /// Rows held out in `fold`, ascending.
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&r| self.assignment[r] == fold).collect()
    }

    /// Rows used for training when `fold` is held out, ascending.
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&r| self.assignment[r] != fold).collect()
    }
}

struct PreparedFold {
    x_train: Matrix,
    x_test: Matrix,
    names: Vec<String>,
    train: Vec<usize>,
    test: Vec<usize>,
}

/// Shared per-fold preprocessing: imputer fitted on the training fold and
/// applied to both sides, then (for linear models) a scaler likewise
/// fitted on the training fold only.
fn prepare_fold(
    spec: &ModelSpec,
    dm: &DesignMatrix,
    plan: &CrossFitPlan,
    fold: usize,
) -> Result<PreparedFold> {
    let train = plan.train_rows(fold);
    let test = plan.fold_rows(fold);
    let imp = fit_imputer(dm, &train)?;
    let mut tr = apply_imputer(&imp, dm, &train)?;
    let mut te = apply_imputer(&imp, dm, &test)?;
    if spec.needs_standardization() {
        let all_tr: Vec<usize> = (0..tr.rows()).collect();
        let scaler = fit_scaler(&tr, &all_tr)?;
        tr = scaler.apply(&tr)?;
        te = scaler.apply(&te)?;
    }
    let names = tr.column_names.clone();
    Ok(PreparedFold { x_train: tr.values, x_test: te.values, names, train, test })
}

/// Out-of-fold predictions of `y` from the design matrix: each row is
/// predicted by the model fitted on the other folds. Classifier specs
/// require both classes inside every training fold.
pub fn cross_fit_predict(
    spec: &ModelSpec,
    dm: &DesignMatrix,
    y: &[f64],
    plan: &CrossFitPlan,
) -> Result<Vec<f64>> {
    if dm.rows() != y.len() || dm.rows() != plan.n() {
        return Err(Error::DimensionMismatch { expected: plan.n(), found: dm.rows() });
    }
    let mut out = vec![f64::NAN; y.len()];
    for fold in 0..plan.k() {
        let prep = prepare_fold(spec, dm, plan, fold)?;
        let y_train: Vec<f64> = prep.train.iter().map(|&r| y[r]).collect();
        if spec.is_classifier() && single_class(&y_train) {
            return Err(Error::FoldTooSmall { fold });
        }
        let model = spec.fit(&prep.x_train, &y_train, Some(&prep.names)).map_err(|e| match e {
            Error::SingleClass => Error::FoldTooSmall { fold },
            other => other,
        })?;
        let preds = model.predict(&prep.x_test)?;
        for (i, &row) in prep.test.iter().enumerate() {
            out[row] = preds[i];
        }
    }
    Ok(out)
}

/// Cross-fitted T-learner: separate outcome models per treatment arm,
/// returning out-of-fold predictions `(mu1, mu0)` of the outcome under
/// treatment and under control for every row. An empty arm inside any
/// training fold is an error.
pub fn cross_fit_t_learner(
    spec: &ModelSpec,
    dm: &DesignMatrix,
    y: &[f64],
    a: &[f64],
    plan: &CrossFitPlan,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if dm.rows() != y.len() || dm.rows() != a.len() || dm.rows() != plan.n() {
        return Err(Error::DimensionMismatch { expected: plan.n(), found: dm.rows() });
    }
    let mut mu1 = vec![f64::NAN; y.len()];
    let mut mu0 = vec![f64::NAN; y.len()];
    for fold in 0..plan.k() {
        let prep = prepare_fold(spec, dm, plan, fold)?;
        for arm in [1.0, 0.0] {
            let arm_pos: Vec<usize> = prep
                .train
                .iter()
                .enumerate()
                .filter(|(_, &r)| a[r] == arm)
                .map(|(i, _)| i)
                .collect();
            if arm_pos.is_empty() {
                return Err(Error::FoldTooSmall { fold });
            }
            let x_arm = prep.x_train.select_rows(&arm_pos);
            let y_arm: Vec<f64> =
                arm_pos.iter().map(|&i| y[prep.train[i]]).collect();
            if spec.is_classifier() && single_class(&y_arm) {
                return Err(Error::FoldTooSmall { fold });
            }
            let model =
                spec.fit(&x_arm, &y_arm, Some(&prep.names)).map_err(|e| match e {
                    Error::SingleClass => Error::FoldTooSmall { fold },
                    other => other,
                })?;
            let preds = model.predict(&prep.x_test)?;
            let target = if arm == 1.0 { &mut mu1 } else { &mut mu0 };
            for (i, &row) in prep.test.iter().enumerate() {
                target[row] = preds[i];
            }
        }
    }
    Ok((mu1, mu0))
}

fn single_class(y: &[f64]) -> bool {
    let pos = y.iter().filter(|v| **v == 1.0).count();
    pos == 0 || pos == y.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DesignMatrix;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn dense(values: Matrix) -> DesignMatrix {
        let names = (0..values.cols()).map(|c| format!("f{c}")).collect();
        DesignMatrix::dense(values, names)
    }

    #[test]
    fn plan_partitions_rows_with_balanced_folds() {
        let plan = CrossFitPlan::new(23, 5, 42).unwrap();
        let mut seen = vec![false; 23];
        let mut sizes = Vec::new();
        for f in 0..5 {
            let rows = plan.fold_rows(f);
            sizes.push(rows.len());
            for r in rows {
                assert!(!seen[r], "row {r} appears in two folds");
                seen[r] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(max - min <= 1, "fold sizes {sizes:?} differ by more than one");
        // Deterministic given the seed, different under another seed.
        assert_eq!(plan, CrossFitPlan::new(23, 5, 42).unwrap());
        assert_ne!(plan, CrossFitPlan::new(23, 5, 43).unwrap());
    }

    #[test]
    fn plan_rejects_bad_shapes() {
        assert!(CrossFitPlan::new(10, 1, 0).is_err());
        assert!(matches!(CrossFitPlan::new(3, 5, 0), Err(Error::FoldTooSmall { .. })));
    }

    #[test]
    fn constant_outcome_predicts_the_constant_everywhere() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut x = Matrix::zeros(n, 2);
        for r in 0..n {
            x.set(r, 0, normal.sample(&mut rng));
            x.set(r, 1, normal.sample(&mut rng));
        }
        let dm = dense(x);
        let y = vec![2.5; n];
        let plan = CrossFitPlan::new(n, 5, 7).unwrap();
        let spec = ModelSpec::RidgeRegression { alpha: 1.0 };
        let preds = cross_fit_predict(&spec, &dm, &y, &plan).unwrap();
        for p in preds {
            assert!((p - 2.5).abs() < 1e-8);
        }
    }

    #[test]
    fn out_of_fold_error_exceeds_in_sample_error_for_noisy_data() {
        let n = 80;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut x = Matrix::zeros(n, 3);
        let mut y = Vec::new();
        for r in 0..n {
            for c in 0..3 {
                x.set(r, c, normal.sample(&mut rng));
            }
            y.push(x.get(r, 0) + normal.sample(&mut rng));
        }
        let dm = dense(x.clone());
        let plan = CrossFitPlan::new(n, 5, 11).unwrap();
        let spec = ModelSpec::ForestRegressor { n_trees: 30, max_depth: 10, min_leaf: 1, seed: 5 };
        let oof = cross_fit_predict(&spec, &dm, &y, &plan).unwrap();
        let in_sample = spec.fit(&x, &y, None).unwrap().predict(&x).unwrap();
        let mse = |p: &[f64]| p.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
        assert!(
            mse(&in_sample) < mse(&oof),
            "bootstrap-averaged in-sample fit should look optimistically better"
        );
    }

    #[test]
    fn single_class_fold_is_reported() {
        // One lone positive: with k = 2 some training fold sees only zeros.
        let n = 10;
        let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect());
        let dm = dense(x);
        let mut y = vec![0.0; n];
        y[0] = 1.0;
        let plan = CrossFitPlan::new(n, 2, 0).unwrap();
        let spec = ModelSpec::LogisticL2 { c: 1.0 };
        assert!(matches!(
            cross_fit_predict(&spec, &dm, &y, &plan),
            Err(Error::FoldTooSmall { .. })
        ));
    }

    #[test]
    fn t_learner_separates_arm_means() {
        // Outcome is 1.0 for treated, 0.0 for controls, independent of x:
        // mu1 and mu0 should be flat at those values.
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut x = Matrix::zeros(n, 2);
        let mut a = Vec::new();
        let mut y = Vec::new();
        for r in 0..n {
            x.set(r, 0, normal.sample(&mut rng));
            x.set(r, 1, normal.sample(&mut rng));
            let ai = (rng.gen::<f64>() < 0.5) as u8 as f64;
            a.push(ai);
            y.push(10.0 * ai);
        }
        let dm = dense(x);
        let plan = CrossFitPlan::new(n, 4, 2).unwrap();
        let spec = ModelSpec::RidgeRegression { alpha: 0.1 };
        let (mu1, mu0) = cross_fit_t_learner(&spec, &dm, &y, &a, &plan).unwrap();
        for r in 0..n {
            assert!((mu1[r] - 10.0).abs() < 0.5, "mu1[{r}] = {}", mu1[r]);
            assert!(mu0[r].abs() < 0.5, "mu0[{r}] = {}", mu0[r]);
        }
    }

    #[test]
    fn t_learner_rejects_an_empty_arm() {
        let n = 12;
        let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect());
        let dm = dense(x);
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let a = vec![0.0; n];
        let plan = CrossFitPlan::new(n, 3, 1).unwrap();
        let spec = ModelSpec::RidgeRegression { alpha: 0.1 };
        assert!(matches!(
            cross_fit_t_learner(&spec, &dm, &y, &a, &plan),
            Err(Error::FoldTooSmall { .. })
        ));
    }

    #[test]
    fn per_fold_imputation_does_not_leak_test_rows() {
        // Metamorphic: change a held-out row's missing-value pattern
        // counterpart — the predictions of other folds must not move.
        let n = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut values = Matrix::zeros(n, 2);
        let mut missing = vec![false; n * 2];
        let mut y = Vec::new();
        for r in 0..n {
            values.set(r, 0, normal.sample(&mut rng));
            values.set(r, 1, normal.sample(&mut rng));
            if r % 5 == 0 {
                missing[r * 2 + 1] = true;
                values.set(r, 1, 0.0);
            }
            y.push(values.get(r, 0) * 2.0 + 0.1 * normal.sample(&mut rng));
        }
        let dm = DesignMatrix::new(values, vec!["u".into(), "v".into()], missing);
        let plan = CrossFitPlan::new(n, 3, 4).unwrap();
        let spec = ModelSpec::RidgeRegression { alpha: 0.5 };
        let base = cross_fit_predict(&spec, &dm, &y, &plan).unwrap();

        // Perturb one of fold 0's held-out rows. That row is training data
        // for the other folds, so their predictions may move — but fold 0's
        // model and imputer never see it, so the rest of fold 0 must not.
        let victim = plan.fold_rows(0)[0];
        let mut dm2 = dm.clone();
        dm2.values.set(victim, 0, 1e3);
        let pert = cross_fit_predict(&spec, &dm2, &y, &plan).unwrap();
        for &r in plan.fold_rows(0).iter().filter(|&&r| r != victim) {
            assert_eq!(base[r], pert[r], "fold-0 row {r} moved when a sibling was perturbed");
        }
    }
}
