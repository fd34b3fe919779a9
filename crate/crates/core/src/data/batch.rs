use serde::{Deserialize, Serialize};

use crate::numerics::RngStream;

/// Mini-batch schedule: each epoch's order is a pure function of
/// `(seed, stream, epoch)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub seed: u64,
    pub stream: u64,
    pub batch_size: usize,
    pub len: usize,
}

impl BatchPlan {
    pub fn new(seed: u64, stream: u64, batch_size: usize, len: usize) -> Self {
        Self { seed, stream, batch_size: batch_size.max(1), len }
    }

    pub fn permutation(&self, epoch: usize) -> Vec<usize> {
        RngStream::new(self.seed, self.stream).derive(epoch as u64).permutation(self.len)
    }

    /// Index batches for `epoch`; the last batch may be short.
    pub fn batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        self.permutation(epoch).chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes_include_short_tail() {
        let sizes: Vec<usize> = BatchPlan::new(0, 2, 32, 100).batches(0).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
        assert_eq!(BatchPlan::new(0, 2, 100, 100).batches(3).len(), 1);
    }

    #[test]
    fn epochs_differ_but_repeat() {
        let p = BatchPlan::new(5, 2, 10, 50);
        assert_ne!(p.permutation(0), p.permutation(1));
        assert_eq!(p.permutation(1), BatchPlan::new(5, 2, 10, 50).permutation(1));
    }

    proptest! {
        #[test]
        fn epoch_is_a_partition(n in 1usize..300, bs in 1usize..64, seed: u64, epoch in 0usize..10) {
            let mut all: Vec<usize> = BatchPlan::new(seed, 2, bs, n).batches(epoch).concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
