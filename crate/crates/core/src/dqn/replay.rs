//! Proportional prioritized replay backed by a sum tree.

use rand::Rng;

/// One stored transition. Observations are kept in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub obs: Vec<f32>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f32>,
    pub terminal: bool,
    /// The step closed a slot, so the discount applies to its bootstrap.
    pub slot_boundary: bool,
}

/// Binary tree holding sums and minima of leaf values.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    sum: Vec<f64>,
    min: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        SumTree {
            leaves,
            sum: vec![0.0; 2 * leaves],
            min: vec![f64::INFINITY; 2 * leaves],
        }
    }

    pub fn set(&mut self, index: usize, value: f64) {
        let mut k = index + self.leaves;
        self.sum[k] = value;
        self.min[k] = value;
        while k > 1 {
            k /= 2;
            self.sum[k] = self.sum[2 * k] + self.sum[2 * k + 1];
            self.min[k] = self.min[2 * k].min(self.min[2 * k + 1]);
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.sum[index + self.leaves]
    }

    pub fn total(&self) -> f64 {
        self.sum[1]
    }

    pub fn min(&self) -> f64 {
        self.min[1]
    }

    /// Leaf whose cumulative range contains `mass`, for `0 <= mass < total`.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = 2 * k;
            if mass < self.sum[left] || self.sum[left + 1] <= 0.0 {
                k = left;
            } else {
                mass -= self.sum[left];
                k = left + 1;
            }
        }
        k - self.leaves
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Fixed-capacity FIFO memory with proportional prioritization.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    alpha: f64,
    priority_eps: f64,
    items: Vec<Experience>,
    /// Raw priorities, before the `alpha` exponent.
    priorities: Vec<f64>,
    tree: SumTree,
    next: usize,
    max_priority: f64,
}

impl ReplayMemory {
    pub fn new(capacity: usize, alpha: f64, priority_eps: f64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayMemory {
            capacity,
            alpha,
            priority_eps,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            priorities: Vec::with_capacity(capacity.min(1 << 16)),
            tree: SumTree::new(capacity),
            next: 0,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &Experience {
        &self.items[index]
    }

    pub fn priority(&self, index: usize) -> f64 {
        self.priorities[index]
    }

    /// Slot written by the next [`ReplayMemory::push`].
    pub fn next_slot(&self) -> usize {
        self.next
    }

    /// Stores an experience at the current maximum priority, evicting the
    /// oldest one when full. Returns the slot used.
    pub fn push(&mut self, exp: Experience) -> usize {
        let slot = self.next;
        let p = self.max_priority;
        if self.items.len() < self.capacity {
            self.items.push(exp);
            self.priorities.push(p);
        } else {
            self.items[slot] = exp;
            self.priorities[slot] = p;
        }
        self.tree.set(slot, p.powf(self.alpha));
        self.next = (self.next + 1) % self.capacity;
        slot
    }

    /// Sampling probability of a stored index.
    pub fn probability(&self, index: usize) -> f64 {
        self.tree.get(index) / self.tree.total()
    }

    /// Draws `batch` indices i.i.d. with probability `p_i^alpha / sum p^alpha`;
    /// importance weights `(N P(i))^-beta` are divided by their maximum over
    /// the memory. Draws are with replacement; `None` on an empty memory.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, beta: f64, rng: &mut R) -> Option<Sample> {
        if batch == 0 || self.is_empty() {
            return None;
        }
        let total = self.tree.total();
        let p_min = self.tree.min() / total;
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mass = rng.random::<f64>() * total;
            let mut i = self.tree.find(mass).min(self.len() - 1);
            while self.tree.get(i) <= 0.0 && i > 0 {
                i -= 1;
            }
            let p = self.tree.get(i) / total;
            indices.push(i);
            weights.push((p / p_min).powf(-beta));
        }
        Some(Sample { indices, weights })
    }

    /// Sets priority `|delta| + eps` for each sampled index.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        for (&i, &d) in indices.iter().zip(td_errors) {
            let p = d.abs() + self.priority_eps;
            self.priorities[i] = p;
            self.tree.set(i, p.powf(self.alpha));
            if p > self.max_priority {
                self.max_priority = p;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn exp(tag: usize) -> Experience {
        Experience {
            obs: vec![tag as f32],
            action: tag,
            reward: 0.0,
            next_obs: vec![0.0],
            terminal: false,
            slot_boundary: false,
        }
    }

    #[test]
    fn equal_priorities_sample_uniformly() {
        let k = 10;
        let mut mem = ReplayMemory::new(16, 0.6, 1e-3);
        for i in 0..k {
            mem.push(exp(i));
        }
        let mut rng = stream(1, Stream::Replay, 0);
        let mut counts = vec![0usize; k];
        let draws = 100_000;
        for _ in 0..draws / 50 {
            for i in mem.sample(50, 0.4, &mut rng).unwrap().indices {
                counts[i] += 1;
            }
        }
        let expected = draws as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // upper 1% point of chi-square with 9 degrees of freedom
        assert!(chi2 < 21.666, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn dominant_priority_concentrates_draws() {
        let mut mem = ReplayMemory::new(100, 1.0, 0.0);
        for i in 0..50 {
            mem.push(exp(i));
        }
        let others: Vec<usize> = (0..50).filter(|&i| i != 17).collect();
        mem.update_priorities(&others, &vec![1e-6; 49]);
        mem.update_priorities(&[17], &[1.0]);
        let mut rng = stream(2, Stream::Replay, 0);
        let s = mem.sample(10_000, 0.5, &mut rng).unwrap();
        let hits = s.indices.iter().filter(|&&i| i == 17).count();
        assert!(hits as f64 > 0.99 * 10_000.0, "hits {hits}");
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut mem = ReplayMemory::new(7, 0.6, 1e-3);
        for i in 0..7 {
            mem.push(exp(i));
        }
        mem.update_priorities(&[0, 3, 5], &[0.5, 2.0, 0.0]);
        let s: f64 = (0..7).map(|i| mem.probability(i)).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!((0..7).all(|i| mem.priority(i) > 0.0));
    }

    #[test]
    fn beta_zero_gives_unit_weights() {
        let mut mem = ReplayMemory::new(8, 0.6, 1e-3);
        for i in 0..8 {
            mem.push(exp(i));
        }
        mem.update_priorities(&[1, 2], &[3.0, 0.1]);
        let s = mem.sample(32, 0.0, &mut stream(3, Stream::Replay, 0)).unwrap();
        assert!(s.weights.iter().all(|&w| w == 1.0));
        let s = mem.sample(32, 1.0, &mut stream(3, Stream::Replay, 0)).unwrap();
        assert!(s.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn priority_floor_and_isolation() {
        let mut mem = ReplayMemory::new(4, 0.6, 1e-3);
        for i in 0..4 {
            mem.push(exp(i));
        }
        mem.update_priorities(&[0], &[0.0]);
        assert_eq!(mem.priority(0), 1e-3);
        mem.update_priorities(&[1, 2], &[0.5, -2.0]);
        assert!(mem.priority(2) > mem.priority(1));
        assert_eq!(mem.priority(3), 1.0);
        // new items come in at the running maximum
        mem.push(exp(9));
        assert_eq!(mem.priority(0), 2.0 + 1e-3);
    }

    #[test]
    fn fifo_eviction_within_capacity() {
        let mut mem = ReplayMemory::new(3, 0.6, 1e-3);
        assert!(mem.sample(1, 0.4, &mut stream(0, Stream::Replay, 0)).is_none());
        for i in 0..7 {
            assert_eq!(mem.push(exp(i)), i % 3);
            assert!(mem.len() <= 3);
        }
        let tags: Vec<usize> = (0..3).map(|i| mem.get(i).action).collect();
        assert_eq!(tags, vec![6, 4, 5]);
        assert_eq!(
            mem.sample(4, 0.4, &mut stream(0, Stream::Replay, 0))
                .unwrap()
                .indices
                .len(),
            4
        );
    }
}
