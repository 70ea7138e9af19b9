use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SacError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub x_next: Vec<f64>,
    /// 1.0 when the episode terminated at `x_next`, else 0.0.
    pub d: f64,
}

/// Sampled transitions laid out row-major for batched forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub r: Vec<f64>,
    pub x_next: Vec<f64>,
    pub d: Vec<f64>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let mut b = Batch {
            size: ts.len(),
            x: Vec::new(),
            a: Vec::new(),
            r: Vec::with_capacity(ts.len()),
            x_next: Vec::new(),
            d: Vec::with_capacity(ts.len()),
        };
        for t in ts {
            b.x.extend_from_slice(&t.x);
            b.a.extend_from_slice(&t.a);
            b.r.push(t.r);
            b.x_next.extend_from_slice(&t.x_next);
            b.d.push(t.d);
        }
        b
    }
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push overwrites once full.
    head: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, rng: ChaCha8Rng) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            rng,
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&mut self, n: usize) -> Result<Vec<usize>, SacError> {
        if self.items.is_empty() {
            return Err(SacError::EmptyBuffer);
        }
        let len = self.items.len();
        Ok((0..n).map(|_| self.rng.random_range(0..len)).collect())
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn sample(&mut self, n: usize) -> Result<Batch, SacError> {
        let idx = self.sample_indices(n)?;
        let ts: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Ok(Batch::from_transitions(&ts))
    }
}
