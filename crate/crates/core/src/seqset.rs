use std::collections::BTreeSet;

/// Set of positive sequence numbers stored as a contiguous prefix `1..=n`
/// plus out-of-order extras.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeqSet {
    prefix: u64,
    extra: BTreeSet<u64>,
}

impl SeqSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Set holding exactly `1..=n`.
    pub fn filled(n: u64) -> Self {
        SeqSet {
            prefix: n,
            extra: BTreeSet::new(),
        }
    }

    /// Returns true if `seq` was not already present.
    pub fn insert(&mut self, seq: u64) -> bool {
        if seq == 0 || self.contains(seq) {
            return false;
        }
        self.extra.insert(seq);
        while self.extra.remove(&(self.prefix + 1)) {
            self.prefix += 1;
        }
        true
    }

    pub fn contains(&self, seq: u64) -> bool {
        seq != 0 && (seq <= self.prefix || self.extra.contains(&seq))
    }

    pub fn max(&self) -> u64 {
        self.extra.last().copied().unwrap_or(self.prefix)
    }

    pub fn len(&self) -> u64 {
        self.prefix + self.extra.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Length of the gap-free prefix.
    pub fn contiguous(&self) -> u64 {
        self.prefix
    }

    /// Sequence numbers in `1..=upto` that are absent.
    pub fn missing(&self, upto: u64) -> impl Iterator<Item = u64> + '_ {
        (self.prefix + 1..=upto).filter(move |s| !self.extra.contains(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prefix_absorbs_extras() {
        let mut s = SeqSet::new();
        assert!(s.insert(2));
        assert!(s.insert(3));
        assert_eq!(s.contiguous(), 0);
        assert!(s.insert(1));
        assert_eq!(s.contiguous(), 3);
        assert!(!s.insert(2));
        assert_eq!(s.missing(5).collect::<Vec<_>>(), vec![4, 5]);
    }

    proptest! {
        #[test]
        fn matches_btreeset(xs in proptest::collection::vec(1u64..40, 0..60)) {
            let mut s = SeqSet::new();
            let mut b = BTreeSet::new();
            for x in xs {
                prop_assert_eq!(s.insert(x), b.insert(x));
            }
            prop_assert_eq!(s.len(), b.len() as u64);
            prop_assert_eq!(s.max(), b.last().copied().unwrap_or(0));
            let want: Vec<u64> = (1..=45).filter(|x| !b.contains(x)).collect();
            prop_assert_eq!(s.missing(45).collect::<Vec<_>>(), want);
        }
    }
}
