//! Fold construction and train/val/test assembly.
//!
//! Cross-validation folds partition pose ids, stratified by posture
//! category. Training sees all three cover conditions; validation and test
//! see only the covered ones.

use super::{Category, Cover, DataError, Dataset, Sample};
use crate::rng::{derive_seed, Rng};

/// Disjoint equal-size pose-id folds plus the fold roles for one run.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SplitPlan {
    pub folds: Vec<Vec<u32>>,
    pub test_fold: usize,
    pub val_fold: usize,
}

impl SplitPlan {
    pub fn new(folds: Vec<Vec<u32>>, test_fold: usize, val_fold: usize) -> Result<Self, DataError> {
        if test_fold >= folds.len() || val_fold >= folds.len() {
            return Err(DataError::BadSplit(format!(
                "fold index out of range ({test_fold}/{val_fold} of {})",
                folds.len()
            )));
        }
        if test_fold == val_fold {
            return Err(DataError::BadSplit("test and validation folds must differ".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for fold in &folds {
            for &id in fold {
                if !seen.insert(id) {
                    return Err(DataError::BadSplit(format!("pose id {id} appears in two folds")));
                }
            }
        }
        Ok(SplitPlan { folds, test_fold, val_fold })
    }
}

/// Category-stratified partition of a dataset's pose ids into `k` folds.
///
/// Every fold receives the same number of poses from each posture category,
/// so both the total pose count and each per-category count must divide by
/// `k`.
pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Vec<u32>>, DataError> {
    if k < 2 {
        return Err(DataError::BadSplit(format!("need at least 2 folds, got {k}")));
    }
    let ids = dataset.pose_ids();
    if ids.is_empty() || ids.len() % k != 0 {
        return Err(DataError::NotDivisible(ids.len(), k));
    }
    let mut folds = vec![Vec::with_capacity(ids.len() / k); k];
    for (ci, cat) in Category::ALL.iter().enumerate() {
        let mut cat_ids: Vec<u32> = ids
            .iter()
            .copied()
            .filter(|&id| dataset.category_of(id) == Some(*cat))
            .collect();
        if cat_ids.len() % k != 0 {
            return Err(DataError::BadSplit(format!(
                "category {cat:?} has {} poses, not divisible into {k} folds",
                cat_ids.len()
            )));
        }
        let mut rng = Rng::new(derive_seed(&[seed, 0x666f_6c64, ci as u64]));
        rng.shuffle(&mut cat_ids);
        let chunk = cat_ids.len() / k;
        for (f, fold) in folds.iter_mut().enumerate() {
            fold.extend_from_slice(&cat_ids[f * chunk..(f + 1) * chunk]);
        }
    }
    Ok(folds)
}

/// Materialize the train/val/test sample lists for a split plan.
///
/// Train: the remaining folds under all covers. Val/test: their fold under
/// thin and thick covers only.
pub fn assemble_split(
    dataset: &Dataset,
    plan: &SplitPlan,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>), DataError> {
    let in_fold = |fold: usize, id: u32| plan.folds[fold].contains(&id);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for sample in &dataset.samples {
        let id = sample.pose_id;
        if in_fold(plan.test_fold, id) {
            if sample.cover != Cover::Uncovered {
                test.push(sample.clone());
            }
        } else if in_fold(plan.val_fold, id) {
            if sample.cover != Cover::Uncovered {
                val.push(sample.clone());
            }
        } else if plan.folds.iter().any(|f| f.contains(&id)) {
            train.push(sample.clone());
        }
        // Pose ids outside every fold are simply not part of this run.
    }

    let ids = |set: &[Sample]| -> std::collections::BTreeSet<u32> {
        set.iter().map(|s| s.pose_id).collect()
    };
    let (tr, va, te) = (ids(&train), ids(&val), ids(&test));
    if tr.intersection(&va).next().is_some()
        || tr.intersection(&te).next().is_some()
        || va.intersection(&te).next().is_some()
    {
        return Err(DataError::Internal("split outputs share a pose id".into()));
    }
    Ok((train, val, test))
}

/// Prefix holdout split: the first `train_poses` pose ids train under all
/// covers, the rest validate under the covered conditions.
pub fn assemble_holdout(
    dataset: &Dataset,
    train_poses: usize,
) -> Result<(Vec<Sample>, Vec<Sample>), DataError> {
    let ids = dataset.pose_ids();
    if train_poses == 0 || train_poses >= ids.len() {
        return Err(DataError::BadSplit(format!(
            "holdout needs 0 < train poses < {}, got {train_poses}",
            ids.len()
        )));
    }
    let train_set: std::collections::BTreeSet<u32> = ids[..train_poses].iter().copied().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for sample in &dataset.samples {
        if train_set.contains(&sample.pose_id) {
            train.push(sample.clone());
        } else if sample.cover != Cover::Uncovered {
            val.push(sample.clone());
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::super::{generate_dataset, Source};
    use super::*;

    #[test]
    fn folds_of_sixty_with_twenty_per_category() {
        let ds = generate_dataset(300, 7, Source::SmalLike).unwrap();
        let folds = make_folds(&ds, 5, 1).unwrap();
        assert_eq!(folds.len(), 5);
        for fold in &folds {
            assert_eq!(fold.len(), 60);
            for cat in Category::ALL {
                let n = fold
                    .iter()
                    .filter(|&&id| ds.category_of(id) == Some(cat))
                    .count();
                assert_eq!(n, 20);
            }
        }
    }

    #[test]
    fn fifteen_poses_make_folds_of_three() {
        let ds = generate_dataset(15, 2, Source::SmalLike).unwrap();
        let folds = make_folds(&ds, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 3));
    }

    #[test]
    fn folds_partition_all_pose_ids() {
        let ds = generate_dataset(30, 4, Source::SmalLike).unwrap();
        let folds = make_folds(&ds, 5, 9).unwrap();
        let mut all: Vec<u32> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<u32>>());
    }

    #[test]
    fn non_divisible_fold_count_rejected() {
        let ds = generate_dataset(9, 1, Source::SmalLike).unwrap();
        assert!(matches!(make_folds(&ds, 4, 1), Err(DataError::NotDivisible(9, 4))));
    }

    #[test]
    fn smal_split_counts_540_120_120() {
        let ds = generate_dataset(300, 7, Source::SmalLike).unwrap();
        let folds = make_folds(&ds, 5, 1).unwrap();
        let plan = SplitPlan::new(folds, 0, 1).unwrap();
        let (train, val, test) = assemble_split(&ds, &plan).unwrap();
        assert_eq!(train.len(), 540);
        assert_eq!(val.len(), 120);
        assert_eq!(test.len(), 120);
    }

    #[test]
    fn no_uncovered_in_val_or_test() {
        let ds = generate_dataset(15, 3, Source::SmalLike).unwrap();
        let plan = SplitPlan::new(make_folds(&ds, 5, 1).unwrap(), 2, 3).unwrap();
        let (train, val, test) = assemble_split(&ds, &plan).unwrap();
        assert!(val.iter().chain(&test).all(|s| s.cover != Cover::Uncovered));
        assert_eq!(train.len(), 9 * 3);
    }

    #[test]
    fn same_test_and_val_fold_rejected() {
        let ds = generate_dataset(15, 3, Source::SmalLike).unwrap();
        let folds = make_folds(&ds, 5, 1).unwrap();
        assert!(matches!(SplitPlan::new(folds, 2, 2), Err(DataError::BadSplit(_))));
    }

    #[test]
    fn holdout_prefix_counts() {
        let ds = generate_dataset(30, 8, Source::SlpLike).unwrap();
        let (train, val) = assemble_holdout(&ds, 24).unwrap();
        assert_eq!(train.len(), 24 * 3);
        assert_eq!(val.len(), 6 * 2);
        assert!(val.iter().all(|s| s.cover != Cover::Uncovered));
    }
}
