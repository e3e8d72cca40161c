use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// A scored slot. `rank` is the tie-break key: on equal scores the smaller
/// rank wins. Callers map it to ascending question id.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Scored {
    pub score: f64,
    pub rank: u32,
}

impl Scored {
    /// `Less` means `self` ranks ahead of `other`.
    pub fn order(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.rank.cmp(&other.rank))
    }
}

// Heap order puts the weakest retained entry on top.
struct Worst(Scored);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Worst {}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.order(&other.0)
    }
}

/// Bounded selection of the `k` best entries (highest score, then lowest rank).
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Worst>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.min(4096) + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, entry: Scored) {
        if self.k == 0 {
            return;
        }
        if self.heap.len() < self.k {
            self.heap.push(Worst(entry));
        } else if let Some(mut top) = self.heap.peek_mut() {
            if entry.order(&top.0) == Ordering::Less {
                *top = Worst(entry);
            }
        }
    }

    /// Entries best-first.
    pub fn into_sorted(self) -> Vec<Scored> {
        let mut out: Vec<Scored> = self.heap.into_iter().map(|w| w.0).collect();
        out.sort_by(|a, b| a.order(b));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_best_k_with_rank_tie_break() {
        let mut top = TopK::new(3);
        for (score, rank) in [(1.0, 5), (3.0, 2), (3.0, 1), (0.5, 0), (2.0, 9), (3.0, 7)] {
            top.push(Scored { score, rank });
        }
        let got: Vec<(f64, u32)> = top.into_sorted().iter().map(|s| (s.score, s.rank)).collect();
        assert_eq!(got, vec![(3.0, 1), (3.0, 2), (3.0, 7)]);
    }

    #[test]
    fn zero_k_is_empty() {
        let mut top = TopK::new(0);
        top.push(Scored { score: 1.0, rank: 0 });
        assert!(top.into_sorted().is_empty());
    }
}
