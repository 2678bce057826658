use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

/// One real transition. `obs` and `next_obs` are the environment's
/// observations; `aug` is what the policy saw, forecast slots included.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub aug: Vec<f64>,
    pub action: usize,
    /// Scaled reward.
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Bounded FIFO of real transitions; the oldest record is evicted first.
#[derive(Debug, Clone)]
pub struct TransitionBuffer {
    cap: usize,
    items: VecDeque<Arc<Transition>>,
    pushed: usize,
}

impl TransitionBuffer {
    pub fn new(cap: usize) -> Self {
        assert!(cap > 0, "buffer capacity must be positive");
        Self {
            cap,
            items: VecDeque::with_capacity(cap.min(1 << 16)),
            pushed: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.cap {
            self.items.pop_front();
        }
        self.items.push_back(Arc::new(t));
        self.pushed += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    /// Records ever pushed, evicted ones included.
    pub fn total_pushed(&self) -> usize {
        self.pushed
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i).map(|t| t.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter().map(|t| t.as_ref())
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&Transition> {
        if self.items.is_empty() {
            return None;
        }
        Some(&self.items[rng.gen_range(0..self.items.len())])
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        (0..n).filter_map(|_| self.sample(rng)).collect()
    }
}
