//! Levenshtein distance over Unicode scalar values.
//!
//! Bit-parallel (Myers/Hyyrö): one 64-bit word per 64 pattern characters,
//! `O(ceil(m/64) * n)` word operations. Common prefixes and suffixes are
//! stripped first and the shorter string is always the pattern.

use std::cell::RefCell;
use std::collections::HashMap;

/// Exact edit distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    bounded_levenshtein(a, b, usize::MAX).expect("unbounded distance always resolves")
}

/// `lev(a, b) / max(|a|, |b|)`, with two empty strings at distance 0.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    normalize(levenshtein_chars(&a, &b), a.len().max(b.len()))
}

pub fn normalize(distance: usize, max_len: usize) -> f64 {
    if max_len == 0 {
        0.0
    } else {
        distance as f64 / max_len as f64
    }
}

/// Exact distance if it is at most `cutoff`, `None` otherwise.
pub fn bounded_levenshtein(a: &[char], b: &[char], cutoff: usize) -> Option<usize> {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);

    let (pattern, text) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if text.len() - pattern.len() > cutoff {
        return None;
    }
    if pattern.is_empty() {
        return Some(text.len());
    }
    PEQ.with(|peq| {
        let mut peq = peq.borrow_mut();
        peq.load(pattern);
        let d = if pattern.len() <= 64 {
            single_word(&peq, pattern.len(), text, cutoff)
        } else {
            multi_block(&peq, pattern.len(), text, cutoff)
        };
        peq.clear(pattern);
        d
    })
}

thread_local! {
    static PEQ: RefCell<Peq> = RefCell::new(Peq::default());
}

/// Match masks: bit `i` of block `b` for character `c` is set when
/// `pattern[64 * b + i] == c`.
#[derive(Default)]
struct Peq {
    blocks: usize,
    /// `128 * blocks` words, character-major.
    ascii: Vec<u64>,
    other: HashMap<char, Vec<u64>>,
}

impl Peq {
    fn load(&mut self, pattern: &[char]) {
        self.blocks = pattern.len().div_ceil(64);
        if self.ascii.len() < 128 * self.blocks {
            self.ascii.resize(128 * self.blocks, 0);
        }
        let blocks = self.blocks;
        for (i, &c) in pattern.iter().enumerate() {
            let (b, bit) = (i / 64, 1u64 << (i % 64));
            if (c as u32) < 128 {
                self.ascii[c as usize * blocks + b] |= bit;
            } else {
                self.other.entry(c).or_insert_with(|| vec![0; blocks])[b] |= bit;
            }
        }
    }

    fn clear(&mut self, pattern: &[char]) {
        for &c in pattern {
            if (c as u32) < 128 {
                let at = c as usize * self.blocks;
                self.ascii[at..at + self.blocks].fill(0);
            }
        }
        self.other.clear();
    }

    #[inline]
    fn get(&self, c: char, block: usize) -> u64 {
        if (c as u32) < 128 {
            self.ascii[c as usize * self.blocks + block]
        } else {
            self.other.get(&c).map_or(0, |v| v[block])
        }
    }
}

fn single_word(peq: &Peq, m: usize, text: &[char], cutoff: usize) -> Option<usize> {
    let high = 1u64 << (m - 1);
    let mut pv = !0u64;
    let mut mv = 0u64;
    let mut score = m;
    let n = text.len();
    for (j, &c) in text.iter().enumerate() {
        let eq = peq.get(c, 0);
        let xv = eq | mv;
        let xh = ((eq & pv).wrapping_add(pv) ^ pv) | eq;
        let mut ph = mv | !(xh | pv);
        let mut mh = pv & xh;
        if ph & high != 0 {
            score += 1;
        } else if mh & high != 0 {
            score -= 1;
        }
        ph = (ph << 1) | 1;
        mh <<= 1;
        pv = mh | !(xv | ph);
        mv = ph & xv;
        // the last row can drop by at most one per remaining column
        if score > cutoff && score - cutoff > n - j - 1 {
            return None;
        }
    }
    (score <= cutoff).then_some(score)
}

fn multi_block(peq: &Peq, m: usize, text: &[char], cutoff: usize) -> Option<usize> {
    let blocks = peq.blocks;
    let last_high = 1u64 << ((m - 1) % 64);
    let mut pv = vec![!0u64; blocks];
    let mut mv = vec![0u64; blocks];
    let mut score = m;
    let n = text.len();
    for (j, &c) in text.iter().enumerate() {
        let mut hin: i8 = 1;
        for b in 0..blocks {
            let high = if b + 1 == blocks { last_high } else { 1u64 << 63 };
            hin = advance_block(&mut pv[b], &mut mv[b], peq.get(c, b), hin, high);
        }
        match hin {
            1 => score += 1,
            -1 => score -= 1,
            _ => {}
        }
        if score > cutoff && score - cutoff > n - j - 1 {
            return None;
        }
    }
    (score <= cutoff).then_some(score)
}

/// One column step for one block; returns the horizontal delta leaving the
/// block's bottom row (`high` marks that row).
#[inline]
fn advance_block(pv: &mut u64, mv: &mut u64, eq: u64, hin: i8, high: u64) -> i8 {
    let mut eq = eq;
    let xv = eq | *mv;
    if hin < 0 {
        eq |= 1;
    }
    let xh = ((eq & *pv).wrapping_add(*pv) ^ *pv) | eq;
    let mut ph = *mv | !(xh | *pv);
    let mut mh = *pv & xh;
    let hout = if ph & high != 0 {
        1
    } else if mh & high != 0 {
        -1
    } else {
        0
    };
    ph <<= 1;
    mh <<= 1;
    if hin < 0 {
        mh |= 1;
    } else if hin > 0 {
        ph |= 1;
    }
    *pv = mh | !(xv | ph);
    *mv = ph & xv;
    hout
}
