//! Fixed-length bit vector used for truth tables over the world space.
//!
//! Invariant: bits past `len` in the last block are always zero, so whole
//! blocks can be compared without masking.

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BitVec {
    blocks: Vec<u64>,
    len: usize,
}

impl BitVec {
    pub fn zeros(len: usize) -> Self {
        BitVec { blocks: vec![0; len.div_ceil(64)], len }
    }

    pub fn ones(len: usize) -> Self {
        let mut bv = BitVec { blocks: vec![!0u64; len.div_ceil(64)], len };
        bv.mask_tail();
        bv
    }

    fn mask_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.blocks.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn set(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.blocks[i / 64] |= 1u64 << (i % 64);
    }

    #[cfg(test)]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.blocks[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn and_assign(&mut self, other: &BitVec) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a &= b;
        }
    }

    /// `self &= !other`, used for negated body literals.
    pub fn and_not_assign(&mut self, other: &BitVec) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a &= !b;
        }
    }

    pub fn or_assign(&mut self, other: &BitVec) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a |= b;
        }
    }

    /// Visit the blocks overlapping `[start, start + len)` together with the
    /// mask of bits belonging to the range.
    fn masked_blocks(&self, start: usize, len: usize) -> impl Iterator<Item = (u64, u64)> + '_ {
        debug_assert!(start + len <= self.len);
        let end = start + len;
        let first = start / 64;
        let last = if end == 0 { 0 } else { (end - 1) / 64 };
        (first..=last).filter(move |_| len > 0).map(move |b| {
            let lo = start.max(b * 64);
            let hi = end.min((b + 1) * 64);
            let width_mask = if hi - lo == 64 { !0u64 } else { ((1u64 << (hi - lo)) - 1) << (lo % 64) };
            (self.blocks[b], width_mask)
        })
    }

    pub fn range_all_zero(&self, start: usize, len: usize) -> bool {
        self.masked_blocks(start, len).all(|(block, mask)| block & mask == 0)
    }

    pub fn range_all_one(&self, start: usize, len: usize) -> bool {
        self.masked_blocks(start, len).all(|(block, mask)| block & mask == mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_get_roundtrip() {
        let mut bv = BitVec::zeros(130);
        for i in [0, 1, 63, 64, 65, 127, 128, 129] {
            bv.set(i);
        }
        for i in 0..130 {
            let expect = matches!(i, 0 | 1 | 63 | 64 | 65 | 127 | 128 | 129);
            assert_eq!(bv.get(i), expect, "bit {i}");
        }
    }

    #[test]
    fn boolean_ops_match_naive() {
        let n = 200;
        let mut a = BitVec::zeros(n);
        let mut b = BitVec::zeros(n);
        let mut na = vec![false; n];
        let mut nb = vec![false; n];
        for i in 0..n {
            if i % 3 == 0 {
                a.set(i);
                na[i] = true;
            }
            if i % 5 == 0 || i % 7 == 1 {
                b.set(i);
                nb[i] = true;
            }
        }
        let mut and = a.clone();
        and.and_assign(&b);
        let mut or = a.clone();
        or.or_assign(&b);
        let mut andnot = a.clone();
        andnot.and_not_assign(&b);
        for i in 0..n {
            assert_eq!(and.get(i), na[i] && nb[i]);
            assert_eq!(or.get(i), na[i] || nb[i]);
            assert_eq!(andnot.get(i), na[i] && !nb[i]);
        }
    }

    #[test]
    fn range_checks_match_naive() {
        let n = 150;
        let mut bv = BitVec::zeros(n);
        let mut naive = vec![false; n];
        for i in 40..100 {
            bv.set(i);
            naive[i] = true;
        }
        for start in 0..n {
            for len in [0, 1, 2, 5, 63, 64, 65, 80] {
                if start + len > n {
                    continue;
                }
                let slice = &naive[start..start + len];
                assert_eq!(
                    bv.range_all_zero(start, len),
                    slice.iter().all(|&x| !x),
                    "zero check at {start}+{len}"
                );
                assert_eq!(
                    bv.range_all_one(start, len),
                    slice.iter().all(|&x| x),
                    "one check at {start}+{len}"
                );
            }
        }
    }

    #[test]
    fn ones_respects_length() {
        let bv = BitVec::ones(70);
        assert!(bv.range_all_one(0, 70));
        let mut clone = bv.clone();
        clone.and_not_assign(&BitVec::zeros(70));
        assert_eq!(clone, bv);
    }
}
