//! Finite unions of closed intervals on the line, kept sorted and disjoint.
//! Every measure in the crate is computed here by linear endpoint merges.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "reversed interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn centered(c: f64, r: f64) -> Self {
        Interval::new(c - r, c + r)
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn intersect(&self, o: &Interval) -> Option<Interval> {
        let lo = self.lo.max(o.lo);
        let hi = self.hi.min(o.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }
}

/// Sorted, pairwise disjoint, non-touching closed intervals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    parts: Vec<Interval>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet { parts: Vec::new() }
    }

    pub fn single(iv: Interval) -> Self {
        IntervalSet { parts: vec![iv] }
    }

    /// Normalizes an arbitrary list: sort by left endpoint, merge overlaps and touches.
    pub fn from_intervals(mut v: Vec<Interval>) -> Self {
        v.retain(|iv| iv.lo <= iv.hi);
        v.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mut parts: Vec<Interval> = Vec::with_capacity(v.len());
        for iv in v {
            match parts.last_mut() {
                Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
                _ => parts.push(iv),
            }
        }
        IntervalSet { parts }
    }

    /// Caller guarantees the list is already sorted and disjoint.
    pub fn from_sorted_unchecked(parts: Vec<Interval>) -> Self {
        IntervalSet { parts }
    }

    pub fn parts(&self) -> &[Interval] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn measure(&self) -> f64 {
        crate::numeric::pairwise_sum_by(self.parts.len(), &|i| self.parts[i].len())
    }

    pub fn hull(&self) -> Option<Interval> {
        Some(Interval::new(self.parts.first()?.lo, self.parts.last()?.hi))
    }

    pub fn contains(&self, x: f64) -> bool {
        let i = self.parts.partition_point(|iv| iv.hi < x);
        i < self.parts.len() && self.parts[i].lo <= x
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        let mut v = Vec::with_capacity(self.len() + other.len());
        v.extend_from_slice(&self.parts);
        v.extend_from_slice(&other.parts);
        IntervalSet::from_intervals(v)
    }

    /// Linear two-pointer merge; both inputs sorted and disjoint, so the output is too.
    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let (a, b) = (&self.parts, &other.parts);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            if let Some(iv) = a[i].intersect(&b[j]) {
                out.push(iv);
            }
            if a[i].hi < b[j].hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet { parts: out }
    }

    pub fn intersection_measure(&self, other: &IntervalSet) -> f64 {
        let (a, b) = (&self.parts, &other.parts);
        let (mut i, mut j) = (0, 0);
        let mut acc = Vec::new();
        while i < a.len() && j < b.len() {
            let lo = a[i].lo.max(b[j].lo);
            let hi = a[i].hi.min(b[j].hi);
            if lo < hi {
                acc.push(hi - lo);
            }
            if a[i].hi < b[j].hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        crate::numeric::pairwise_sum(&acc)
    }

    /// True iff every part of `self` lies inside one part of `other`.
    pub fn is_subset_of(&self, other: &IntervalSet) -> bool {
        let mut j = 0;
        for iv in &self.parts {
            while j < other.parts.len() && other.parts[j].hi < iv.lo {
                j += 1;
            }
            match other.parts.get(j) {
                Some(o) if o.lo <= iv.lo && iv.hi <= o.hi => {}
                _ => return false,
            }
        }
        true
    }

    /// Gap between the two sets; zero if they meet.
    pub fn distance(&self, other: &IntervalSet) -> f64 {
        if self.is_empty() || other.is_empty() {
            return f64::INFINITY;
        }
        let (a, b) = (&self.parts, &other.parts);
        let (mut i, mut j) = (0, 0);
        let mut best = f64::INFINITY;
        while i < a.len() && j < b.len() {
            let d = (a[i].lo - b[j].hi).max(b[j].lo - a[i].hi).max(0.0);
            best = best.min(d);
            if a[i].hi < b[j].hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        best
    }

    pub fn translate(&self, s: f64) -> IntervalSet {
        IntervalSet {
            parts: self
                .parts
                .iter()
                .map(|iv| Interval::new(iv.lo + s, iv.hi + s))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_overlapping_and_touching() {
        let s = IntervalSet::from_intervals(vec![
            Interval::new(3.0, 4.0),
            Interval::new(0.0, 1.0),
            Interval::new(1.0, 2.0),
            Interval::new(0.5, 0.7),
        ]);
        assert_eq!(
            s.parts(),
            &[Interval::new(0.0, 2.0), Interval::new(3.0, 4.0)]
        );
        assert_eq!(s.measure(), 3.0);
    }

    #[test]
    fn intersection_by_merge() {
        let a = IntervalSet::from_intervals(vec![Interval::new(0.0, 2.0), Interval::new(3.0, 5.0)]);
        let b = IntervalSet::from_intervals(vec![Interval::new(1.0, 4.0)]);
        let c = a.intersect(&b);
        assert_eq!(
            c.parts(),
            &[Interval::new(1.0, 2.0), Interval::new(3.0, 4.0)]
        );
        assert_eq!(a.intersection_measure(&b), 2.0);
        assert_eq!(b.intersection_measure(&a), 2.0);
    }

    #[test]
    fn subset_and_distance() {
        let a = IntervalSet::from_intervals(vec![Interval::new(0.0, 1.0), Interval::new(2.0, 3.0)]);
        let big = IntervalSet::single(Interval::new(-1.0, 3.0));
        assert!(a.is_subset_of(&big));
        assert!(!big.is_subset_of(&a));
        let far = IntervalSet::single(Interval::new(4.5, 6.0));
        assert_eq!(a.distance(&far), 1.5);
        assert_eq!(a.distance(&big), 0.0);
    }

    #[test]
    fn membership_binary_search() {
        let a = IntervalSet::from_intervals(vec![Interval::new(0.0, 1.0), Interval::new(2.0, 3.0)]);
        assert!(a.contains(0.0) && a.contains(1.0) && a.contains(2.5));
        assert!(!a.contains(1.5) && !a.contains(-0.1) && !a.contains(3.1));
    }
}
