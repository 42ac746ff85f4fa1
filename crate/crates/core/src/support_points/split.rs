use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::energy::PointSet;
use super::solver::{compute_support_points, snap_to_rows, SpConfig, SpResult};
use crate::data::{standardize, Dataset};
use crate::error::{Error, Result};
use crate::rng;

/// Disjoint test and train row sets covering the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResult {
    pub test_idx: Vec<usize>,
    pub train_idx: Vec<usize>,
}

/// A partition of `0..n` into folds used for cross-fitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    folds: Vec<Vec<usize>>,
    n: usize,
}

impl FoldPlan {
    /// Validates that `folds` partitions `0..n` with no empty fold.
    pub fn new(folds: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        if folds.is_empty() || folds.iter().any(Vec::is_empty) {
            return Err(Error::InvalidConfig("fold plan has an empty fold".into()));
        }
        let mut seen = vec![false; n];
        for &i in folds.iter().flatten() {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::DuplicateIndex(i));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidConfig(format!(
                "fold plan does not cover row {missing}"
            )));
        }
        Ok(FoldPlan { folds, n })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn fold(&self, k: usize) -> &[usize] {
        &self.folds[k]
    }

    /// Every row outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        let mut inside = vec![false; self.n];
        for &i in &self.folds[k] {
            inside[i] = true;
        }
        (0..self.n).filter(|&i| !inside[i]).collect()
    }
}

/// Balanced fold sizes: the first `n % k` folds get one extra row.
fn fold_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

/// Uniformly shuffled K-fold partition.
pub fn random_kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::InvalidConfig(format!(
            "random K-fold needs 2 <= K <= n, got K = {k}, n = {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::seeded(seed));
    let mut folds = Vec::with_capacity(k);
    let mut rest = perm.as_slice();
    for size in fold_sizes(n, k) {
        let (head, tail) = rest.split_at(size);
        folds.push(head.to_vec());
        rest = tail;
    }
    FoldPlan::new(folds, n)
}

/// The standardized joint `(T, X[, Y])` cloud that support points are fitted to.
pub fn splitting_cloud(d: &Dataset, include_outcome: bool) -> Result<PointSet> {
    let (z, _) = standardize(&d.joint_matrix(include_outcome))?;
    PointSet::from_matrix(&z)
}

/// Support points of size `n_points` on the rows `pool` of `cloud`, snapped
/// back to pool rows. Returned indices refer to `cloud`.
fn sp_subset(
    cloud: &PointSet,
    pool: &[usize],
    cfg: &SpConfig,
    n_points: usize,
) -> Result<(Vec<usize>, SpResult)> {
    let sub = cloud.select(pool);
    let sp = compute_support_points(&sub, &cfg.with_points(n_points))?;
    let local = snap_to_rows(&sp.points, &sub)?;
    Ok((local.into_iter().map(|i| pool[i]).collect(), sp))
}

/// Support-points train/test split on an already standardized cloud.
pub fn spss_split_cloud(
    cloud: &PointSet,
    test_fraction: f64,
    cfg: &SpConfig,
) -> Result<(SplitResult, SpResult)> {
    let n = cloud.len();
    let n_test = test_size(n, test_fraction)?;
    let all: Vec<usize> = (0..n).collect();
    let (mut test_idx, sp) = sp_subset(cloud, &all, cfg, n_test)?;
    test_idx.sort_unstable();
    let train_idx = complement(&test_idx, n);
    Ok((
        SplitResult {
            test_idx,
            train_idx,
        },
        sp,
    ))
}

pub(crate) fn test_size(n: usize, fraction: f64) -> Result<usize> {
    let invalid = Error::InvalidFraction { fraction, n };
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid);
    }
    let n_test = (fraction * n as f64).round() as usize;
    if n_test < 1 || n_test + 1 > n {
        return Err(invalid);
    }
    Ok(n_test)
}

fn complement(sorted: &[usize], n: usize) -> Vec<usize> {
    let mut inside = vec![false; n];
    for &i in sorted {
        inside[i] = true;
    }
    (0..n).filter(|&i| !inside[i]).collect()
}

/// Uniform random train/test split with the same test size as [`spss_split`].
pub fn random_split(n: usize, test_fraction: f64, seed: u64) -> Result<SplitResult> {
    let n_test = test_size(n, test_fraction)?;
    let mut test_idx = rand::seq::index::sample(&mut rng::seeded(seed), n, n_test).into_vec();
    test_idx.sort_unstable();
    let train_idx = complement(&test_idx, n);
    Ok(SplitResult {
        test_idx,
        train_idx,
    })
}

/// Support-points sample splitting: the test set is the data rows nearest to the
/// support points of the standardized joint cloud, the train set is the rest.
pub fn spss_split(d: &Dataset, test_fraction: f64, cfg: &SpConfig) -> Result<SplitResult> {
    spss_split_detailed(d, test_fraction, cfg).map(|(s, _)| s)
}

/// [`spss_split`] also returning the solver record.
pub fn spss_split_detailed(
    d: &Dataset,
    test_fraction: f64,
    cfg: &SpConfig,
) -> Result<(SplitResult, SpResult)> {
    let cloud = splitting_cloud(d, cfg.include_outcome)?;
    spss_split_cloud(&cloud, test_fraction, cfg)
}

/// K folds by sequential peeling: fold `k` is the support-points subset of the
/// rows not yet assigned, and the last fold takes whatever remains.
pub fn spss_kfold_cloud(cloud: &PointSet, k: usize, cfg: &SpConfig) -> Result<FoldPlan> {
    let n = cloud.len();
    if k < 2 || 2 * k > n {
        return Err(Error::InvalidConfig(format!(
            "support-points K-fold needs 2 <= K <= n/2, got K = {k}, n = {n}"
        )));
    }
    let sizes = fold_sizes(n, k);
    let mut pool: Vec<usize> = (0..n).collect();
    let mut folds = Vec::with_capacity(k);
    for (fold, &size) in sizes.iter().enumerate().take(k - 1) {
        let fold_cfg = SpConfig {
            seed: cfg.seed.wrapping_add(fold as u64),
            ..cfg.clone()
        };
        let (mut picked, _) = sp_subset(cloud, &pool, &fold_cfg, size)?;
        picked.sort_unstable();
        let mut taken = vec![false; n];
        for &i in &picked {
            taken[i] = true;
        }
        pool.retain(|&i| !taken[i]);
        folds.push(picked);
    }
    folds.push(pool);
    FoldPlan::new(folds, n)
}

pub fn spss_kfold(d: &Dataset, k: usize, cfg: &SpConfig) -> Result<FoldPlan> {
    let cloud = splitting_cloud(d, cfg.include_outcome)?;
    spss_kfold_cloud(&cloud, k, cfg)
}
