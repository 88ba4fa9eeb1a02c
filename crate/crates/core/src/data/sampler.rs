//! Class-balanced window sampling for imbalance mitigation.
//!
//! Each window is keyed by the majority of its valid expression labels; the
//! stream draws a present class uniformly, then a window of that class
//! uniformly, so every class is sampled at equal rate regardless of how many
//! windows it owns.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::EXPR_CLASSES;

use super::window::Window;
use super::LoadedDataset;

/// Majority valid expression label of a window; ties break to the smallest
/// class id. `None` when the window has no valid expression frames.
pub fn window_class_key(ds: &LoadedDataset, w: &Window) -> Option<u8> {
    let labels = &ds.videos[w.video].labels.expr;
    let mut counts = [0usize; EXPR_CLASSES];
    for i in w.start..w.start + w.len {
        if labels.mask[i] {
            counts[labels.classes[i] as usize] += 1;
        }
    }
    let mut best: Option<u8> = None;
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 && best.is_none_or(|b| n > counts[b as usize]) {
            best = Some(c as u8);
        }
    }
    best
}

/// Infinite deterministic stream of window indices, class-balanced.
#[derive(Debug, Clone)]
pub struct BalancedStream {
    /// Sorted present classes; parallel to `per_class`.
    classes: Vec<u8>,
    per_class: Vec<Vec<usize>>,
    rng: Rng,
}

impl BalancedStream {
    /// `keys[i]` is the class key of window i; windows without a key are
    /// never drawn.
    pub fn new(keys: &[Option<u8>], seed_rng: Rng) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::data(0, "balanced sampling over an empty split"));
        }
        let mut per_class_map: Vec<Vec<usize>> = vec![Vec::new(); EXPR_CLASSES];
        for (i, key) in keys.iter().enumerate() {
            if let Some(c) = key {
                per_class_map[*c as usize].push(i);
            }
        }
        let mut classes = Vec::new();
        let mut per_class = Vec::new();
        for (c, windows) in per_class_map.into_iter().enumerate() {
            if !windows.is_empty() {
                classes.push(c as u8);
                per_class.push(windows);
            }
        }
        if classes.is_empty() {
            return Err(Error::data(
                0,
                "no window has a valid expression label to balance on",
            ));
        }
        Ok(BalancedStream {
            classes,
            per_class,
            rng: seed_rng,
        })
    }

    pub fn present_classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn next_index(&mut self) -> usize {
        let c = self.rng.below(self.classes.len());
        let w = self.rng.below(self.per_class[c].len());
        self.per_class[c][w]
    }

    pub fn rng_state(&self) -> u64 {
        self.rng.state()
    }

    pub fn set_rng_state(&mut self, state: u64) {
        self.rng = Rng::from_state(state);
    }
}

/// Uniform fallback over an eligible subset, used when no expression labels
/// exist to balance on.
#[derive(Debug, Clone)]
pub struct UniformStream {
    eligible: Vec<usize>,
    rng: Rng,
}

impl UniformStream {
    pub fn new(eligible: Vec<usize>, seed_rng: Rng) -> Result<Self> {
        if eligible.is_empty() {
            return Err(Error::data(0, "uniform sampling over an empty split"));
        }
        Ok(UniformStream {
            eligible,
            rng: seed_rng,
        })
    }

    pub fn next_index(&mut self) -> usize {
        self.eligible[self.rng.below(self.eligible.len())]
    }

    pub fn rng_state(&self) -> u64 {
        self.rng.state()
    }

    pub fn set_rng_state(&mut self, state: u64) {
        self.rng = Rng::from_state(state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(split: &[(u8, usize)]) -> Vec<Option<u8>> {
        let mut out = Vec::new();
        for &(class, count) in split {
            out.extend(std::iter::repeat_n(Some(class), count));
        }
        out
    }

    #[test]
    fn ninety_ten_split_draws_half_and_half() {
        let keys = keys(&[(0, 90), (1, 10)]);
        let mut stream = BalancedStream::new(&keys, Rng::new(7)).unwrap();
        let mut counts = [0usize; 2];
        let draws = 10_000;
        for _ in 0..draws {
            let idx = stream.next_index();
            counts[if idx < 90 { 0 } else { 1 }] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.5).abs() <= 0.05, "class frequency {freq}");
        }
    }

    #[test]
    fn single_class_always_that_class() {
        let keys = keys(&[(3, 12)]);
        let mut stream = BalancedStream::new(&keys, Rng::new(8)).unwrap();
        for _ in 0..100 {
            assert!(stream.next_index() < 12);
        }
        assert_eq!(stream.present_classes(), &[3]);
    }

    #[test]
    fn same_seed_same_prefix() {
        let keys = keys(&[(0, 5), (1, 5), (2, 5)]);
        let mut a = BalancedStream::new(&keys, Rng::new(9)).unwrap();
        let mut b = BalancedStream::new(&keys, Rng::new(9)).unwrap();
        for _ in 0..200 {
            assert_eq!(a.next_index(), b.next_index());
        }
    }

    #[test]
    fn chi_square_uniform_over_classes() {
        let keys = keys(&[(0, 50), (1, 20), (2, 5), (5, 100)]);
        let mut stream = BalancedStream::new(&keys, Rng::new(10)).unwrap();
        let draws = 10_000usize;
        let mut per_class = [0usize; 4];
        for _ in 0..draws {
            let idx = stream.next_index();
            let class = if idx < 50 {
                0
            } else if idx < 70 {
                1
            } else if idx < 75 {
                2
            } else {
                3
            };
            per_class[class] += 1;
        }
        let expected = draws as f64 / 4.0;
        let chi2: f64 = per_class
            .iter()
            .map(|&n| {
                let d = n as f64 - expected;
                d * d / expected
            })
            .sum();
        // 3 degrees of freedom; 16.27 is the 0.1% critical value.
        assert!(chi2 < 16.27, "chi-square {chi2}");
    }

    #[test]
    fn empty_split_is_an_error() {
        assert!(BalancedStream::new(&[], Rng::new(0)).is_err());
        assert!(BalancedStream::new(&[None, None], Rng::new(0)).is_err());
        assert!(UniformStream::new(vec![], Rng::new(0)).is_err());
    }

    #[test]
    fn state_round_trip_resumes_stream() {
        let keys = keys(&[(0, 4), (1, 4)]);
        let mut a = BalancedStream::new(&keys, Rng::new(11)).unwrap();
        for _ in 0..17 {
            a.next_index();
        }
        let state = a.rng_state();
        let upcoming: Vec<usize> = (0..20).map(|_| a.next_index()).collect();
        let mut b = BalancedStream::new(&keys, Rng::new(0)).unwrap();
        b.set_rng_state(state);
        let resumed: Vec<usize> = (0..20).map(|_| b.next_index()).collect();
        assert_eq!(upcoming, resumed);
    }
}
