use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::numerics::RngStream;

/// How a stratified subset divides its size among classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Allocation {
    /// Equal share per class; remainders go to the lowest class indices and
    /// shortfalls of small classes are redistributed.
    #[default]
    Balanced,
    /// Shares proportional to class frequency (largest-remainder rounding).
    Proportional,
}

fn balanced_quota(counts: &[usize], n: usize) -> Vec<usize> {
    let mut quota = vec![0usize; counts.len()];
    let mut left = n;
    loop {
        let open: Vec<usize> = (0..counts.len()).filter(|&c| quota[c] < counts[c]).collect();
        if left == 0 || open.is_empty() {
            break;
        }
        let share = left / open.len();
        let extra = left % open.len();
        for (rank, &c) in open.iter().enumerate() {
            let want = share + usize::from(rank < extra);
            let got = want.min(counts[c] - quota[c]);
            quota[c] += got;
            left -= got;
        }
    }
    quota
}

fn proportional_quota(counts: &[usize], n: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let mut quota: Vec<usize> = counts.iter().map(|&c| c * n / total).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // largest fractional part first; ties to the lower class
    order.sort_by_key(|&c| (std::cmp::Reverse(counts[c] * n % total), c));
    let mut left = n - quota.iter().sum::<usize>();
    for c in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        if quota[c] < counts[c] {
            quota[c] += 1;
            left -= 1;
        }
    }
    quota
}

/// Class-stratified sample of `n` items, returned in ascending index order.
/// `n == ds.len()` returns the dataset unchanged.
pub fn stratified_subset(
    ds: &Dataset,
    n: usize,
    allocation: Allocation,
    rng: &mut RngStream,
) -> Result<Dataset, DataError> {
    if n > ds.len() {
        return Err(DataError::SubsetTooLarge { requested: n, available: ds.len() });
    }
    if n == ds.len() {
        return Ok(ds.clone());
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let quota = match allocation {
        Allocation::Balanced => balanced_quota(&counts, n),
        Allocation::Proportional => proportional_quota(&counts, n),
    };
    let mut chosen = Vec::with_capacity(n);
    for (members, &q) in by_class.iter_mut().zip(&quota) {
        // partial Fisher-Yates: the first q slots become a uniform sample
        for i in 0..q {
            let j = i + rng.below(members.len() - i);
            members.swap(i, j);
        }
        chosen.extend_from_slice(&members[..q]);
    }
    chosen.sort_unstable();
    let name = format!("{}[{}]", ds.name(), n);
    Ok(ds.select(&chosen).with_name(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Normalization;
    use proptest::prelude::*;

    fn labelled(labels: Vec<u8>, classes: usize) -> Dataset {
        let inputs = (0..labels.len()).map(|i| i as f32).collect();
        Dataset::new("t", vec![1], classes, inputs, labels, Normalization::None).unwrap()
    }

    #[test]
    fn full_size_is_identity() {
        let d = labelled(vec![2, 0, 1, 1, 0], 3);
        let s = stratified_subset(&d, 5, Allocation::Balanced, &mut RngStream::new(0, 3)).unwrap();
        assert_eq!(s, d);
    }

    #[test]
    fn too_large_is_an_error() {
        let d = labelled(vec![0, 1], 2);
        let r = stratified_subset(&d, 3, Allocation::Balanced, &mut RngStream::new(0, 3));
        assert!(matches!(r, Err(DataError::SubsetTooLarge { requested: 3, available: 2 })));
    }

    #[test]
    fn unbalanced_source_gives_equal_classes() {
        // class sizes like MNIST's: unequal, all above the per-class share
        let sizes = [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949];
        let labels: Vec<u8> = sizes.iter().enumerate().flat_map(|(c, &k)| vec![c as u8; k]).collect();
        let d = labelled(labels, 10);
        let s = stratified_subset(&d, 10_000, Allocation::Balanced, &mut RngStream::new(1, 3)).unwrap();
        assert_eq!(s.class_counts(), vec![1000; 10]);
        let again = stratified_subset(&d, 10_000, Allocation::Balanced, &mut RngStream::new(1, 3)).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn small_class_shortfall_is_redistributed() {
        let mut labels = vec![0u8; 2];
        labels.extend(vec![1u8; 20]);
        labels.extend(vec![2u8; 20]);
        let d = labelled(labels, 3);
        let s = stratified_subset(&d, 13, Allocation::Balanced, &mut RngStream::new(0, 3)).unwrap();
        assert_eq!(s.class_counts(), vec![2, 6, 5]);
    }

    proptest! {
        #[test]
        fn proportions_preserved_when_divisible(per in prop::collection::vec(1usize..6, 2..6), k in 1usize..4, seed: u64) {
            // each class has m*per[c] members; drawing m'=k of every m preserves proportions exactly
            let m = 4;
            let labels: Vec<u8> = per.iter().enumerate().flat_map(|(c, &p)| vec![c as u8; m * p]).collect();
            let d = labelled(labels, per.len());
            let n: usize = per.iter().map(|p| p * k).sum();
            prop_assume!(n < d.len());
            for alloc in [Allocation::Proportional] {
                let s = stratified_subset(&d, n, alloc, &mut RngStream::new(seed, 3)).unwrap();
                let want: Vec<usize> = per.iter().map(|p| p * k).collect();
                prop_assert_eq!(s.class_counts(), want);
            }
            let balanced = labelled((0..per.len() * m).map(|i| (i % per.len()) as u8).collect(), per.len());
            let s = stratified_subset(&balanced, per.len() * k, Allocation::Balanced, &mut RngStream::new(seed, 3)).unwrap();
            prop_assert_eq!(s.class_counts(), vec![k; per.len()]);
        }

        #[test]
        fn subset_is_sorted_unique_and_sized(labels in prop::collection::vec(0u8..4, 1..80), frac in 0.0f64..1.0, seed: u64) {
            let d = labelled(labels, 4);
            let n = (frac * d.len() as f64) as usize;
            for alloc in [Allocation::Balanced, Allocation::Proportional] {
                let s = stratified_subset(&d, n, alloc, &mut RngStream::new(seed, 3)).unwrap();
                prop_assert_eq!(s.len(), n);
                let idx: Vec<f32> = s.inputs().to_vec();
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
