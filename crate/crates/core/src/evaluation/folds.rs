use crate::connectivity::Label;
use crate::error::{Error, Result};
use crate::numerics::RandomStream;

/// Stream used for the within-class shuffles of a fold plan.
pub const FOLD_STREAM: u64 = u64::MAX;

/// Disjoint stratified folds over sample indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    /// Sorted sample indices of each held-out fold.
    pub folds: Vec<Vec<usize>>,
    /// `(sz, hc)` counts per fold.
    pub class_counts: Vec<(usize, usize)>,
    pub seed: u64,
}

impl FoldPlan {
    /// Indices outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn n_samples(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }
}

/// Shuffles each class with a seeded stream and deals its members to the
/// folds round-robin. The dealing position carries over from one class to
/// the next so fold sizes stay within one of each other.
pub fn stratified_kfold(labels: &[Label], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Stratification(format!(
            "need at least 2 folds, got {k}"
        )));
    }
    let mut rng = RandomStream::new(seed, FOLD_STREAM);
    let mut folds = vec![Vec::new(); k];
    let mut class_counts = vec![(0, 0); k];
    let mut next = 0;
    for label in [Label::Sz, Label::Hc] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if members.len() < k {
            return Err(Error::Stratification(format!(
                "class {label} has {} samples, fewer than {k} folds",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        for i in members {
            folds[next].push(i);
            match label {
                Label::Sz => class_counts[next].0 += 1,
                Label::Hc => class_counts[next].1 += 1,
            }
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan {
        k,
        folds,
        class_counts,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cohort(sz: usize, hc: usize) -> Vec<Label> {
        let mut v = vec![Label::Sz; sz];
        v.extend(vec![Label::Hc; hc]);
        v
    }

    #[test]
    fn cohort_of_131() {
        let plan = stratified_kfold(&cohort(60, 71), 10, 3).unwrap();
        for &(sz, hc) in &plan.class_counts {
            assert_eq!(sz, 6);
            assert!(hc == 7 || hc == 8);
        }
    }

    #[test]
    fn two_per_class() {
        let plan = stratified_kfold(&cohort(2, 2), 2, 0).unwrap();
        assert_eq!(plan.class_counts, vec![(1, 1), (1, 1)]);
    }

    #[test]
    fn too_small_class() {
        assert!(matches!(
            stratified_kfold(&cohort(3, 10), 5, 0),
            Err(Error::Stratification(_))
        ));
        assert!(stratified_kfold(&cohort(3, 3), 1, 0).is_err());
    }

    #[test]
    fn duplication_keeps_ratios() {
        let labels = cohort(10, 15);
        let doubled: Vec<Label> = labels.iter().chain(&labels).copied().collect();
        let a = stratified_kfold(&labels, 5, 1).unwrap();
        let b = stratified_kfold(&doubled, 5, 1).unwrap();
        for (x, y) in a.class_counts.iter().zip(&b.class_counts) {
            assert_eq!((2 * x.0, 2 * x.1), *y);
        }
    }

    proptest! {
        #[test]
        fn partitions_exactly(sz in 3usize..30, hc in 3usize..30, k in 2usize..4, seed in any::<u64>()) {
            let labels = cohort(sz, hc);
            let plan = stratified_kfold(&labels, k, seed).unwrap();
            prop_assert_eq!(&plan, &stratified_kfold(&labels, k, seed).unwrap());
            let mut all: Vec<usize> = plan.folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            let per = |c: usize| plan.class_counts.iter().map(move |x| if c == 0 { x.0 } else { x.1 });
            for c in 0..2 {
                let lo = per(c).min().unwrap();
                let hi = per(c).max().unwrap();
                prop_assert!(hi - lo <= 1);
            }
        }
    }
}
