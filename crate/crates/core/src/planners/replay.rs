use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next: usize,
    pub done: bool,
}

/// FIFO experience buffer with uniform sampling.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    entries: VecDeque<Transition>,
    capacity: Option<usize>,
}

impl ReplayBuffer {
    /// `None` means unbounded.
    pub fn new(capacity: Option<usize>) -> Self {
        ReplayBuffer { entries: VecDeque::new(), capacity }
    }

    pub fn push(&mut self, t: Transition) {
        if let Some(cap) = self.capacity {
            if cap == 0 {
                return;
            }
            if self.entries.len() == cap {
                self.entries.pop_front();
            }
        }
        self.entries.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&Transition> {
        if self.entries.is_empty() {
            return None;
        }
        self.entries.get(rng.gen_range(0..self.entries.len()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: usize) -> Transition {
        Transition { state: i, action: 0, reward: 0.0, next: 0, done: false }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(Some(3));
        for i in 0..5 {
            b.push(t(i));
        }
        let states: Vec<usize> = b.iter().map(|x| x.state).collect();
        assert_eq!(states, vec![2, 3, 4]);
    }

    #[test]
    fn sampling_is_seeded() {
        let mut b = ReplayBuffer::new(None);
        assert!(b.sample(&mut ChaCha8Rng::seed_from_u64(0)).is_none());
        for i in 0..10 {
            b.push(t(i));
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| b.sample(&mut rng).unwrap().state).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
    }
}
