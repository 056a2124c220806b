//! Ternary feature values and their 2-bit packed encoding.
//!
//! Codes are packed four per byte, lowest bits first: feature `j` lives in
//! byte `j / 4` at bit offset `2 * (j % 4)`. `00` is 0, `01` is +1, `10` is -1
//! and `11` is reserved as invalid.

use std::fmt;

/// A discretised feature value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(i8)]
pub enum Ternary {
    /// Characteristic by absence (atypically low activation).
    Absent = -1,
    /// Uncharacteristic (typical activation).
    Neutral = 0,
    /// Characteristic by presence (atypically high activation).
    Present = 1,
}

impl Ternary {
    pub const ALL: [Ternary; 3] = [Ternary::Absent, Ternary::Neutral, Ternary::Present];

    #[inline]
    pub fn value(self) -> i8 {
        self as i8
    }

    #[inline]
    pub fn code(self) -> u8 {
        match self {
            Ternary::Neutral => 0b00,
            Ternary::Present => 0b01,
            Ternary::Absent => 0b10,
        }
    }

    #[inline]
    pub fn from_code(code: u8) -> Option<Ternary> {
        match code & 0b11 {
            0b00 => Some(Ternary::Neutral),
            0b01 => Some(Ternary::Present),
            0b10 => Some(Ternary::Absent),
            _ => None,
        }
    }

    #[inline]
    pub fn from_value(v: i8) -> Option<Ternary> {
        match v {
            -1 => Some(Ternary::Absent),
            0 => Some(Ternary::Neutral),
            1 => Some(Ternary::Present),
            _ => None,
        }
    }

    /// Index into `[-1, 0, +1]` ordered count arrays.
    #[inline]
    pub(crate) fn slot(self) -> usize {
        (self.value() + 1) as usize
    }
}

impl fmt::Display for Ternary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// Bytes needed to pack `n` ternary codes.
#[inline]
pub fn packed_len(n: usize) -> usize {
    n.div_ceil(4)
}

#[inline]
pub(crate) fn get_code(packed: &[u8], j: usize) -> u8 {
    (packed[j >> 2] >> ((j & 3) * 2)) & 0b11
}

#[inline]
pub(crate) fn set_code(packed: &mut [u8], j: usize, t: Ternary) {
    let shift = (j & 3) * 2;
    let byte = &mut packed[j >> 2];
    *byte = (*byte & !(0b11 << shift)) | (t.code() << shift);
}

/// Decodes a packed code at `j`. Callers guarantee validity (checked on load).
#[inline]
pub(crate) fn get(packed: &[u8], j: usize) -> Ternary {
    Ternary::from_code(get_code(packed, j)).expect("packed ternary buffers are validated on construction")
}

/// Returns the index of the first `11` code within the first `n` codes, or of a
/// non-zero padding bit past `n`.
pub(crate) fn first_invalid(packed: &[u8], n: usize) -> Option<usize> {
    for (b, &byte) in packed.iter().enumerate() {
        // high bit of every pair set together with its low bit
        let bad = byte & (byte >> 1) & 0b0101_0101;
        if bad != 0 {
            let j = b * 4 + (bad.trailing_zeros() as usize) / 2;
            return Some(j.min(n));
        }
    }
    let tail = n % 4;
    if tail != 0 {
        let last = packed[packed.len() - 1];
        if last >> (tail * 2) != 0 {
            return Some(n);
        }
    }
    None
}

/// A packed vector of ternary values.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TernaryVector {
    n_features: usize,
    codes: Vec<u8>,
}

impl TernaryVector {
    /// All-neutral vector of length `n_features`.
    pub fn zeros(n_features: usize) -> Self {
        TernaryVector {
            n_features,
            codes: vec![0; packed_len(n_features)],
        }
    }

    /// Wraps already packed codes. Returns `None` when the buffer has the wrong
    /// length, contains a `11` code, or has non-zero padding.
    pub fn from_packed(n_features: usize, codes: Vec<u8>) -> Option<Self> {
        if codes.len() != packed_len(n_features) || first_invalid(&codes, n_features).is_some() {
            return None;
        }
        Some(TernaryVector { n_features, codes })
    }

    pub fn from_ternary(values: &[Ternary]) -> Self {
        let mut v = Self::zeros(values.len());
        for (j, &t) in values.iter().enumerate() {
            set_code(&mut v.codes, j, t);
        }
        v
    }

    /// Packs integer values; `None` if any value is outside {-1, 0, 1}.
    pub fn from_values(values: &[i8]) -> Option<Self> {
        let mut v = Self::zeros(values.len());
        for (j, &x) in values.iter().enumerate() {
            set_code(&mut v.codes, j, Ternary::from_value(x)?);
        }
        Some(v)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n_features == 0
    }

    #[inline]
    pub fn get(&self, j: usize) -> Ternary {
        assert!(j < self.n_features, "feature {j} out of range {}", self.n_features);
        get(&self.codes, j)
    }

    pub fn set(&mut self, j: usize, t: Ternary) {
        assert!(j < self.n_features, "feature {j} out of range {}", self.n_features);
        set_code(&mut self.codes, j, t);
    }

    pub fn iter(&self) -> impl Iterator<Item = Ternary> + '_ {
        (0..self.n_features).map(move |j| get(&self.codes, j))
    }

    pub fn to_values(&self) -> Vec<i8> {
        self.iter().map(Ternary::value).collect()
    }

    pub fn packed(&self) -> &[u8] {
        &self.codes
    }
}
