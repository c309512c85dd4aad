use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{decode_state, encode_state, seeded, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub x: Tensor,
}

/// Endless mini-batch stream: each epoch is a fresh seeded permutation of
/// `0..n`; the trailing partial batch of an epoch is yielded as is.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    rng: Rng,
    perm: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    epoch: u64,
}

impl BatchIterator {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        Self::from_rng(n, batch_size, seeded(seed))
    }

    pub fn from_rng(n: usize, batch_size: usize, rng: Rng) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::Config(format!(
                "batch iterator needs n > 0 and batch_size > 0 (n={n}, batch_size={batch_size})"
            )));
        }
        Ok(BatchIterator {
            rng,
            perm: (0..n).collect(),
            cursor: n,
            batch_size,
            epoch: 0,
        })
    }

    /// Epochs started so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor >= self.perm.len() {
            self.perm.sort_unstable();
            self.perm.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let end = (self.cursor + self.batch_size).min(self.perm.len());
        let out = self.perm[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }

    pub fn next_batch(&mut self, ds: &Dataset) -> Batch {
        let indices = self.next_indices();
        let x = ds.x.select_rows(&indices);
        Batch { indices, x }
    }

    /// Serialized position, restorable with [`BatchIterator::restore`].
    pub fn state(&self) -> String {
        let perm: Vec<String> = if self.cursor < self.perm.len() {
            self.perm.iter().map(usize::to_string).collect()
        } else {
            Vec::new()
        };
        format!(
            "{};{};{};{}",
            encode_state(&self.rng),
            self.cursor,
            self.epoch,
            perm.join(",")
        )
    }

    pub fn restore(n: usize, batch_size: usize, state: &str) -> Result<Self> {
        let bad = || Error::Checkpoint("malformed batch iterator state".into());
        let parts: Vec<&str> = state.split(';').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let mut it = Self::from_rng(n, batch_size, decode_state(parts[0])?)?;
        it.cursor = parts[1].parse().map_err(|_| bad())?;
        it.epoch = parts[2].parse().map_err(|_| bad())?;
        if parts[3].is_empty() {
            it.cursor = n;
        } else {
            let perm: Vec<usize> = parts[3]
                .split(',')
                .map(|s| s.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            if perm.len() != n {
                return Err(bad());
            }
            it.perm = perm;
        }
        Ok(it)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_of_ten_by_four() {
        let mut it = BatchIterator::new(10, 4, 0).unwrap();
        let sizes: Vec<usize> = (0..3).map(|_| it.next_indices().len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(it.epoch(), 1);
        it.next_indices();
        assert_eq!(it.epoch(), 2);
    }

    #[test]
    fn each_epoch_is_a_permutation_and_seeded() {
        let mut a = BatchIterator::new(23, 5, 7).unwrap();
        let mut b = BatchIterator::new(23, 5, 7).unwrap();
        for _ in 0..3 {
            let mut seen = Vec::new();
            while seen.len() < 23 {
                let ia = a.next_indices();
                assert_eq!(ia, b.next_indices());
                seen.extend(ia);
            }
            seen.sort_unstable();
            assert_eq!(seen, (0..23).collect::<Vec<_>>());
        }
    }

    #[test]
    fn restore_continues_identically() {
        let mut a = BatchIterator::new(11, 3, 3).unwrap();
        a.next_indices();
        a.next_indices();
        let mut b = BatchIterator::restore(11, 3, &a.state()).unwrap();
        for _ in 0..20 {
            assert_eq!(a.next_indices(), b.next_indices());
        }
    }
}
