/// Binary indexed tree over access times holding one mark per live address.
///
/// Grows one slot at a time as the trace is scanned; a slot is only ever
/// queried after it has been pushed.
pub(super) struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    pub(super) fn with_capacity(n: usize) -> Self {
        Self { tree: Vec::with_capacity(n) }
    }

    /// Appends a zero-valued slot.
    pub(super) fn push(&mut self) {
        // Slot i (1-based) covers (i - lowbit(i), i]; seed it with the sum of
        // the already-present slots it covers.
        let i = self.tree.len() + 1;
        let low = i & i.wrapping_neg();
        let mut sum = 0;
        let mut j = i - 1;
        while j > i - low {
            sum += self.tree[j - 1];
            j -= j & j.wrapping_neg();
        }
        self.tree.push(sum);
    }

    pub(super) fn add(&mut self, index: usize, delta: i64) {
        let mut i = index + 1;
        while i <= self.tree.len() {
            self.tree[i - 1] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum of slots `0..end`.
    fn prefix(&self, end: usize) -> i64 {
        let mut i = end;
        let mut sum = 0;
        while i > 0 {
            sum += self.tree[i - 1];
            i -= i & i.wrapping_neg();
        }
        sum
    }

    /// Sum of slots `start..end`.
    pub(super) fn range_sum(&self, start: usize, end: usize) -> i64 {
        if end <= start {
            0
        } else {
            self.prefix(end) - self.prefix(start)
        }
    }
}
