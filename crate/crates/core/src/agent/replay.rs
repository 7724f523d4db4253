use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Transition;
use crate::seeding::Rng;

/// Fixed-capacity experience store; the oldest transition is evicted first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push overwrites once the buffer is full.
    head: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            head: 0,
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total pushes since creation, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        self.inserted += 1;
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer.iter())
    }

    /// Uniform draw with replacement. `None` until the buffer holds at
    /// least `batch_size` transitions.
    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Option<Vec<&Transition>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return None;
        }
        Some(
            (0..batch_size)
                .map(|_| &self.items[rng.gen_range(0..self.items.len())])
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ActionMask;
    use rand::SeedableRng;

    fn t(reward: f64) -> Transition {
        Transition {
            obs: vec![reward],
            action: 0,
            reward,
            next_obs: vec![reward],
            terminal: false,
            next_mask: ActionMask::all(1),
        }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(2);
        for r in [1.0, 2.0, 3.0] {
            buf.push(t(r));
        }
        let held: Vec<f64> = buf.iter().map(|x| x.reward).collect();
        assert_eq!(held, vec![2.0, 3.0]);
        assert_eq!(buf.inserted(), 3);

        let mut buf = ReplayBuffer::new(3);
        for r in 0..10 {
            buf.push(t(r as f64));
            assert!(buf.len() <= 3);
        }
        let held: Vec<f64> = buf.iter().map(|x| x.reward).collect();
        assert_eq!(held, vec![7.0, 8.0, 9.0]);
    }

    #[test]
    fn sampling_is_reproducible_and_gated() {
        let mut buf = ReplayBuffer::new(10);
        for r in 0..4 {
            buf.push(t(r as f64));
        }
        assert!(buf.sample(5, &mut Rng::seed_from_u64(0)).is_none());
        let a: Vec<f64> = buf.sample(4, &mut Rng::seed_from_u64(9)).unwrap().iter().map(|x| x.reward).collect();
        let b: Vec<f64> = buf.sample(4, &mut Rng::seed_from_u64(9)).unwrap().iter().map(|x| x.reward).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut buf = ReplayBuffer::new(4);
        for r in 0..4 {
            buf.push(t(r as f64));
        }
        let n = 10_000;
        let mut counts = [0usize; 4];
        let mut rng = Rng::seed_from_u64(17);
        for _ in 0..n {
            counts[buf.sample(1, &mut rng).unwrap()[0].reward as usize] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 4.0).abs() < 3.0 * sigma, "{counts:?}");
        }
    }
}
