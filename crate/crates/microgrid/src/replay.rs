//! Prioritized experience replay.
//!
//! A ring buffer of transitions paired with a sum tree over transformed
//! priorities `(|td| + epsilon)^upsilon`, so sampling is proportional to the
//! transformed priority in O(log n). A parallel min tree tracks the smallest
//! occupied leaf, which normalizes the importance-sampling weights to
//! `(min_leaf / leaf)^phi` — exactly 1 for every element when priorities are
//! equal. New transitions enter at the largest raw priority seen so that
//! nothing is starved before its first replay. Every slot carries a stamp so
//! that a priority update arriving after the slot was overwritten is
//! detected and skipped rather than corrupting the new occupant.

use rand::Rng;

use crate::error::{Error, Result};

/// Additive floor keeping zero-error transitions sampleable.
pub const PRIORITY_EPSILON: f64 = 1e-6;

/// Perfect binary tree embedded in an array, every internal node the sum of
/// its children. The leaf row is padded to the next power of two so that
/// slot order matches cumulative-mass order; padding leaves stay at zero.
#[derive(Debug, Clone)]
pub struct SumTree {
    nodes: Vec<f64>,
    capacity: usize,
    base: usize,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "sum tree needs at least one leaf");
        let base = capacity.next_power_of_two();
        Self { nodes: vec![0.0; 2 * base - 1], capacity, base }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.nodes[0]
    }

    pub fn get(&self, slot: usize) -> f64 {
        self.nodes[self.base - 1 + slot]
    }

    /// Write a leaf and recompute the sums on the path to the root.
    pub fn set(&mut self, slot: usize, value: f64) {
        assert!(slot < self.capacity);
        assert!(value.is_finite() && value >= 0.0, "leaf value {value}");
        let mut i = self.base - 1 + slot;
        self.nodes[i] = value;
        while i > 0 {
            i = (i - 1) / 2;
            self.nodes[i] = self.nodes[2 * i + 1] + self.nodes[2 * i + 2];
        }
    }

    /// Slot whose cumulative-priority interval contains `mass`
    /// (`0 <= mass < total`).
    pub fn find(&self, mass: f64) -> usize {
        let mut mass = mass.clamp(0.0, self.total() * (1.0 - 1e-15));
        let mut i = 0;
        while 2 * i + 1 < self.nodes.len() {
            let left = 2 * i + 1;
            if mass < self.nodes[left] {
                i = left;
            } else {
                mass -= self.nodes[left];
                i = left + 1;
            }
        }
        (i - (self.base - 1)).min(self.capacity - 1)
    }
}

/// One stored interaction, ready to become a training example once the
/// bootstrap value is filled in by the current network.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features: Vec<f64>,
    pub action_heads: [usize; 4],
    /// Discounted n-step reward sum (already scaled for the loss).
    pub n_step_return: f64,
    /// Features of the state n steps later; `None` past the terminal.
    pub bootstrap_features: Option<Vec<f64>>,
    /// Discount applied to the bootstrap value (`gamma^n`).
    pub gamma_n: f64,
}

/// A stratified draw: parallel indices, staleness stamps, and normalized
/// importance-sampling weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub indices: Vec<usize>,
    pub stamps: Vec<u64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PrioritizedBuffer<T> {
    items: Vec<Option<T>>,
    stamps: Vec<u64>,
    raw: Vec<f64>,
    tree: SumTree,
    /// Parallel min tree over occupied leaves (vacant = +inf).
    min_nodes: Vec<f64>,
    upsilon: f64,
    next_slot: usize,
    len: usize,
    push_count: u64,
    max_raw: f64,
    stale_updates: u64,
}

impl<T> PrioritizedBuffer<T> {
    /// `upsilon` is the priority exponent: 0 is uniform sampling, 1 is
    /// fully proportional to the raw priority.
    pub fn new(capacity: usize, upsilon: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Replay("capacity must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&upsilon) {
            return Err(Error::Replay(format!("priority exponent {upsilon} outside [0, 1]")));
        }
        let tree = SumTree::new(capacity);
        let min_len = 2 * tree.base - 1;
        Ok(Self {
            items: (0..capacity).map(|_| None).collect(),
            stamps: vec![0; capacity],
            raw: vec![0.0; capacity],
            tree,
            min_nodes: vec![f64::INFINITY; min_len],
            upsilon,
            next_slot: 0,
            len: 0,
            push_count: 0,
            max_raw: 0.0,
            stale_updates: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.items.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.tree.total()
    }

    /// Priority updates dropped because the slot had been overwritten.
    pub fn stale_update_count(&self) -> u64 {
        self.stale_updates
    }

    pub fn get(&self, index: usize) -> Option<&T> {
        self.items.get(index).and_then(|x| x.as_ref())
    }

    /// Transformed priority currently stored for a slot.
    pub fn leaf(&self, index: usize) -> f64 {
        self.tree.get(index)
    }

    fn set_leaf(&mut self, slot: usize, raw: f64) {
        self.raw[slot] = raw;
        let leaf = raw.powf(self.upsilon);
        self.tree.set(slot, leaf);
        let mut i = self.tree.base - 1 + slot;
        self.min_nodes[i] = if self.items[slot].is_some() { leaf } else { f64::INFINITY };
        while i > 0 {
            i = (i - 1) / 2;
            self.min_nodes[i] = self.min_nodes[2 * i + 1].min(self.min_nodes[2 * i + 2]);
        }
    }

    fn min_leaf(&self) -> f64 {
        self.min_nodes[0]
    }

    /// Insert at the ring position, at the largest raw priority seen so far
    /// (1 when the buffer has never been updated). Returns the slot.
    pub fn push(&mut self, item: T) -> usize {
        let slot = self.next_slot;
        self.next_slot = (self.next_slot + 1) % self.capacity();
        if self.items[slot].is_none() {
            self.len += 1;
        }
        self.push_count += 1;
        self.items[slot] = Some(item);
        self.stamps[slot] = self.push_count;
        let raw = if self.max_raw > 0.0 { self.max_raw } else { 1.0 };
        self.set_leaf(slot, raw);
        slot
    }

    /// Stratified proportional draw of `k` elements: the cumulative mass is
    /// split into `k` equal segments and one point is drawn uniformly in
    /// each. `phi` is the importance-sampling exponent.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, phi: f64, rng: &mut R) -> Result<SampleBatch> {
        if self.len == 0 {
            return Err(Error::Replay("cannot sample from an empty buffer".into()));
        }
        if k == 0 {
            return Err(Error::Replay("sample size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::Replay(format!("weight exponent {phi} outside [0, 1]")));
        }
        let total = self.total_mass();
        if !(total > 0.0) {
            return Err(Error::Replay(format!("degenerate priority mass {total}")));
        }
        let seg = total / k as f64;
        let min_leaf = self.min_leaf();
        let mut indices = Vec::with_capacity(k);
        let mut stamps = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        for j in 0..k {
            let mass = rng.gen_range(j as f64 * seg..(j + 1) as f64 * seg);
            let slot = self.tree.find(mass);
            debug_assert!(self.items[slot].is_some(), "sampled a vacant slot");
            indices.push(slot);
            stamps.push(self.stamps[slot]);
            weights.push((min_leaf / self.tree.get(slot)).powf(phi).min(1.0));
        }
        Ok(SampleBatch { indices, stamps, weights })
    }

    /// Re-prioritize sampled slots from their new TD errors; a slot whose
    /// stamp changed since sampling is skipped. Returns how many applied.
    pub fn update_priorities(
        &mut self,
        indices: &[usize],
        stamps: &[u64],
        td_errors: &[f64],
    ) -> Result<usize> {
        if indices.len() != stamps.len() || indices.len() != td_errors.len() {
            return Err(Error::Replay(format!(
                "mismatched update lengths: {} indices, {} stamps, {} errors",
                indices.len(),
                stamps.len(),
                td_errors.len()
            )));
        }
        let mut applied = 0;
        for ((&slot, &stamp), &td) in indices.iter().zip(stamps).zip(td_errors) {
            if slot >= self.capacity() {
                return Err(Error::Replay(format!("priority update for slot {slot}")));
            }
            if !td.is_finite() {
                return Err(Error::Replay(format!("non-finite TD error {td}")));
            }
            if self.stamps[slot] != stamp || self.items[slot].is_none() {
                self.stale_updates += 1;
                continue;
            }
            let raw = td.abs() + PRIORITY_EPSILON;
            self.max_raw = self.max_raw.max(raw);
            self.set_leaf(slot, raw);
            applied += 1;
        }
        Ok(applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    /// Reference: first leaf whose cumulative sum exceeds the mass.
    fn linear_find(leaves: &[f64], mass: f64) -> usize {
        let mut acc = 0.0;
        for (i, &v) in leaves.iter().enumerate() {
            acc += v;
            if mass < acc {
                return i;
            }
        }
        leaves.len() - 1
    }

    #[test]
    fn tree_total_tracks_leaf_updates() {
        let mut t = SumTree::new(7); // non-power-of-two on purpose
        let mut leaves = vec![0.0; 7];
        let mut r = rng(1);
        use rand::Rng;
        for _ in 0..500 {
            let slot = r.gen_range(0..7);
            let v = r.gen_range(0.0..10.0);
            t.set(slot, v);
            leaves[slot] = v;
            let want: f64 = leaves.iter().sum();
            assert!((t.total() - want).abs() < 1e-9);
            for (i, &l) in leaves.iter().enumerate() {
                assert_eq!(t.get(i), l);
            }
        }
    }

    #[test]
    fn tree_find_matches_linear_scan() {
        use rand::Rng;
        for cap in [1usize, 2, 3, 5, 8, 13] {
            let mut t = SumTree::new(cap);
            let mut leaves = vec![0.0; cap];
            let mut r = rng(cap as u64);
            for i in 0..cap {
                let v = if i % 3 == 0 { 0.0 } else { r.gen_range(0.1..5.0) };
                t.set(i, v);
                leaves[i] = v;
            }
            if t.total() == 0.0 {
                continue;
            }
            for _ in 0..2000 {
                let mass = r.gen_range(0.0..t.total());
                assert_eq!(t.find(mass), linear_find(&leaves, mass), "cap {cap} mass {mass}");
            }
        }
    }

    #[test]
    fn proportional_sampling_matches_priority_ratio() {
        // raw priorities {3, 1} with exponent 1: expect 75% / 25%
        let mut buf = PrioritizedBuffer::new(2, 1.0).unwrap();
        let a = buf.push("a");
        let b = buf.push("b");
        buf.update_priorities(
            &[a, b],
            &[buf.stamps[a], buf.stamps[b]],
            &[3.0 - PRIORITY_EPSILON, 1.0 - PRIORITY_EPSILON],
        )
        .unwrap();
        let mut r = rng(2);
        let n = 200_000;
        let mut count_a = 0usize;
        for _ in 0..n {
            let s = buf.sample(1, 1.0, &mut r).unwrap();
            if s.indices[0] == a {
                count_a += 1;
            }
        }
        let freq = count_a as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.01, "frequency {freq}");
    }

    #[test]
    fn equal_priorities_mean_uniform_draws_and_unit_weights() {
        let mut buf = PrioritizedBuffer::new(8, 0.6).unwrap();
        for i in 0..8 {
            buf.push(i);
        }
        let mut r = rng(3);
        let mut counts = [0usize; 8];
        let n = 40_000;
        for _ in 0..n {
            let s = buf.sample(4, 0.4, &mut r).unwrap();
            for (&i, &w) in s.indices.iter().zip(&s.weights) {
                counts[i] += 1;
                assert_eq!(w, 1.0, "weight must be exactly 1 for equal priorities");
            }
        }
        for &c in &counts {
            let freq = c as f64 / (4 * n) as f64;
            assert!((freq - 0.125).abs() < 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn weights_follow_the_min_over_leaf_rule() {
        let mut buf = PrioritizedBuffer::new(4, 0.8).unwrap();
        for i in 0..4 {
            buf.push(i);
        }
        let stamps = buf.stamps.clone();
        buf.update_priorities(&[0, 1, 2, 3], &stamps, &[0.5, 1.5, 4.0, 0.1]).unwrap();
        let phi = 0.7;
        let min_leaf = (0..4).map(|i| buf.leaf(i)).fold(f64::INFINITY, f64::min);
        let mut r = rng(4);
        let s = buf.sample(16, phi, &mut r).unwrap();
        for (&i, &w) in s.indices.iter().zip(&s.weights) {
            let expect = (min_leaf / buf.leaf(i)).powf(phi);
            assert!((w - expect).abs() < 1e-12);
            assert!(w <= 1.0 + 1e-12);
        }
        // the lowest-priority slot carries weight exactly 1 when drawn
        let lowest = (0..4).min_by(|&a, &b| buf.leaf(a).partial_cmp(&buf.leaf(b)).unwrap());
        assert_eq!(lowest, Some(3));
    }

    #[test]
    fn leaves_store_transformed_priorities() {
        let mut buf = PrioritizedBuffer::new(3, 0.6).unwrap();
        for i in 0..3 {
            buf.push(i);
        }
        let stamps = buf.stamps.clone();
        buf.update_priorities(&[0, 1, 2], &stamps, &[2.0, 0.0, 7.5]).unwrap();
        for (i, td) in [(0usize, 2.0f64), (1, 0.0), (2, 7.5)] {
            let want = (td.abs() + PRIORITY_EPSILON).powf(0.6);
            assert!((buf.leaf(i) - want).abs() < 1e-15);
        }
        // zero TD error keeps a positive floor
        assert!(buf.leaf(1) > 0.0);
    }

    #[test]
    fn new_items_enter_at_the_maximum_raw_priority() {
        let mut buf = PrioritizedBuffer::new(4, 1.0).unwrap();
        buf.push(0);
        buf.push(1);
        let stamps = buf.stamps.clone();
        buf.update_priorities(&[0, 1], &stamps[..2], &[5.0, 1.0]).unwrap();
        let slot = buf.push(2);
        assert!((buf.raw[slot] - (5.0 + PRIORITY_EPSILON)).abs() < 1e-12);
        // before any update, pushes land at raw priority 1
        let fresh: PrioritizedBuffer<i32> = {
            let mut b = PrioritizedBuffer::new(2, 1.0).unwrap();
            b.push(9);
            b
        };
        assert_eq!(fresh.raw[0], 1.0);
    }

    #[test]
    fn ring_overwrites_oldest_and_stale_updates_are_skipped() {
        let mut buf = PrioritizedBuffer::new(3, 1.0).unwrap();
        for i in 0..3 {
            buf.push(i);
        }
        let mut r = rng(5);
        let s = buf.sample(2, 1.0, &mut r).unwrap();
        // overwrite every slot before applying the update
        for i in 10..13 {
            buf.push(i);
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.get(0), Some(&10));
        let before: Vec<f64> = (0..3).map(|i| buf.leaf(i)).collect();
        let applied = buf
            .update_priorities(&s.indices, &s.stamps, &vec![99.0; s.indices.len()])
            .unwrap();
        assert_eq!(applied, 0);
        assert_eq!(buf.stale_update_count(), 2);
        for i in 0..3 {
            assert_eq!(buf.leaf(i), before[i], "stale update must not touch slot {i}");
        }
        // a fresh sample's stamps do apply
        let s2 = buf.sample(2, 1.0, &mut r).unwrap();
        let applied = buf.update_priorities(&s2.indices, &s2.stamps, &[1.0, 2.0]).unwrap();
        assert_eq!(applied, 2);
    }

    #[test]
    fn stratified_draw_with_equal_mass_hits_every_segment() {
        let mut buf = PrioritizedBuffer::new(6, 0.6).unwrap();
        for i in 0..6 {
            buf.push(i);
        }
        let mut r = rng(6);
        for _ in 0..50 {
            let s = buf.sample(6, 1.0, &mut r).unwrap();
            let mut seen = s.indices.clone();
            seen.sort_unstable();
            assert_eq!(seen, vec![0, 1, 2, 3, 4, 5], "one draw per equal segment");
        }
    }

    #[test]
    fn partially_filled_buffer_never_samples_vacant_slots() {
        let mut buf = PrioritizedBuffer::new(16, 0.6).unwrap();
        buf.push(1);
        buf.push(2);
        let mut r = rng(7);
        for _ in 0..1000 {
            let s = buf.sample(3, 0.5, &mut r).unwrap();
            for &i in &s.indices {
                assert!(i < 2);
                assert!(buf.get(i).is_some());
            }
        }
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        assert!(PrioritizedBuffer::<i32>::new(0, 0.6).is_err());
        assert!(PrioritizedBuffer::<i32>::new(4, 1.5).is_err());
        let mut buf = PrioritizedBuffer::new(2, 0.6).unwrap();
        let mut r = rng(8);
        assert!(buf.sample(1, 0.5, &mut r).is_err()); // empty
        buf.push(1);
        assert!(buf.sample(0, 0.5, &mut r).is_err());
        assert!(buf.sample(1, 1.5, &mut r).is_err());
        assert!(buf.update_priorities(&[0], &[1], &[f64::NAN]).is_err());
        assert!(buf.update_priorities(&[0, 1], &[1], &[1.0]).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_rng_state() {
        let mut buf = PrioritizedBuffer::new(8, 0.6).unwrap();
        for i in 0..8 {
            buf.push(i);
        }
        let stamps = buf.stamps.clone();
        buf.update_priorities(&[0, 3, 5], &stamps[..1], &[2.0]).ok();
        buf.update_priorities(&[3], &[stamps[3]], &[4.0]).unwrap();
        let a = buf.sample(4, 0.6, &mut rng(99)).unwrap();
        let b = buf.sample(4, 0.6, &mut rng(99)).unwrap();
        assert_eq!(a, b);
    }
}
