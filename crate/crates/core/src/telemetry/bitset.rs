//! Fixed-width occupation bitstrings and the portable packed container.
//!
//! Bit `j` of a row lives at byte `j / 8`, bit `j % 8`: orbital 0 is the
//! lowest index and the least significant bit. The textual rendering
//! prints orbital `num_bits-1 .. 0` left to right, so a half-filled
//! six-orbital reference reads `"000111"`.
//!
//! Container layout (`pack_bitstrings`):
//!
//! ```text
//! bitset1 num_bits=<M> rows=<N> counts=<0|1>\n   ASCII manifest line
//! N x ceil(M/8) bytes                            packed rows
//! [N x 4 bytes]                                  little-endian u32 counts
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitstring {
    width: u16,
    // Invariant: len == ceil(width/8) and trailing bits above `width` are
    // zero, so derived Eq/Hash/Ord are well defined. Ord on the raw byte
    // vector is little-endian-lexicographic; `cmp_numeric` orders by value.
    bytes: Vec<u8>,
}

impl Bitstring {
    pub fn zeros(width: u16) -> Self {
        Bitstring {
            width,
            bytes: vec![0u8; Self::byte_len(width)],
        }
    }

    pub fn byte_len(width: u16) -> usize {
        (usize::from(width) + 7) / 8
    }

    /// Builds a row from packed bytes; bits above `width` are masked off.
    pub fn from_bytes(width: u16, mut bytes: Vec<u8>) -> Result<Self, BitsetError> {
        if bytes.len() != Self::byte_len(width) {
            return Err(BitsetError::RowLength {
                expected: Self::byte_len(width),
                actual: bytes.len(),
            });
        }
        let spare = bytes.len() * 8 - usize::from(width);
        if spare > 0 {
            if let Some(last) = bytes.last_mut() {
                *last &= 0xffu8 >> spare;
            }
        }
        Ok(Bitstring { width, bytes })
    }

    /// Builds a row of width <= 64 from an integer occupation mask.
    pub fn from_mask(width: u16, mask: u64) -> Self {
        assert!(width <= 64, "mask constructor limited to 64 bits");
        let mut bytes = vec![0u8; Self::byte_len(width)];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = ((mask >> (8 * i)) & 0xff) as u8;
        }
        Bitstring::from_bytes(width, bytes).expect("length is correct by construction")
    }

    /// Parses the textual form (orbital `width-1..0` left to right).
    pub fn from_text(text: &str) -> Result<Self, BitsetError> {
        let width = u16::try_from(text.len()).map_err(|_| BitsetError::TooWide)?;
        let mut row = Bitstring::zeros(width);
        for (pos, ch) in text.chars().enumerate() {
            let orbital = usize::from(width) - 1 - pos;
            match ch {
                '0' => {}
                '1' => row.set(orbital),
                other => return Err(BitsetError::BadTextChar(other)),
            }
        }
        Ok(row)
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn get(&self, j: usize) -> bool {
        debug_assert!(j < usize::from(self.width));
        self.bytes[j / 8] & (1 << (j % 8)) != 0
    }

    fn set(&mut self, j: usize) {
        self.bytes[j / 8] |= 1 << (j % 8);
    }

    pub fn with_bit(mut self, j: usize, value: bool) -> Self {
        if value {
            self.bytes[j / 8] |= 1 << (j % 8);
        } else {
            self.bytes[j / 8] &= !(1 << (j % 8));
        }
        self
    }

    pub fn count_ones(&self) -> u32 {
        self.bytes.iter().map(|b| b.count_ones()).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..usize::from(self.width)).filter(move |&j| self.get(j))
    }

    pub fn hamming(&self, other: &Bitstring) -> u32 {
        debug_assert_eq!(self.width, other.width);
        self.bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// Occupation mask for rows of width <= 64.
    pub fn to_mask(&self) -> u64 {
        assert!(self.width <= 64);
        self.bytes
            .iter()
            .enumerate()
            .fold(0u64, |m, (i, b)| m | (u64::from(*b) << (8 * i)))
    }

    /// Splits a full-width row into (low, high) halves of equal width.
    pub fn split_half(&self) -> (Bitstring, Bitstring) {
        assert!(self.width % 2 == 0, "split requires even width");
        let half = self.width / 2;
        let mut low = Bitstring::zeros(half);
        let mut high = Bitstring::zeros(half);
        for j in 0..usize::from(half) {
            if self.get(j) {
                low.set(j);
            }
            if self.get(j + usize::from(half)) {
                high.set(j);
            }
        }
        (low, high)
    }

    /// Concatenates `low` (bits `[0, w)`) and `high` (bits `[w, 2w)`).
    pub fn concat(low: &Bitstring, high: &Bitstring) -> Bitstring {
        assert_eq!(low.width, high.width);
        let w = usize::from(low.width);
        let mut out = Bitstring::zeros(low.width * 2);
        for j in 0..w {
            if low.get(j) {
                out.set(j);
            }
            if high.get(j) {
                out.set(j + w);
            }
        }
        out
    }

    /// Numeric (big-endian textual) ordering; equals the lexicographic
    /// order of `to_string()` for equal widths.
    pub fn cmp_numeric(&self, other: &Bitstring) -> std::cmp::Ordering {
        debug_assert_eq!(self.width, other.width);
        for (a, b) in self.bytes.iter().rev().zip(other.bytes.iter().rev()) {
            match a.cmp(b) {
                std::cmp::Ordering::Equal => continue,
                ord => return ord,
            }
        }
        std::cmp::Ordering::Equal
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in (0..usize::from(self.width)).rev() {
            f.write_str(if self.get(j) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// A set (optionally multiset) of fixed-width bitstrings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstringSet {
    num_bits: u16,
    rows: Vec<Bitstring>,
    counts: Option<Vec<u32>>,
}

impl BitstringSet {
    pub fn empty(num_bits: u16) -> Self {
        BitstringSet {
            num_bits,
            rows: Vec::new(),
            counts: None,
        }
    }

    /// Plain set: rows as given, no multiplicities.
    pub fn new(num_bits: u16, rows: Vec<Bitstring>) -> Result<Self, BitsetError> {
        for row in &rows {
            if row.width() != num_bits {
                return Err(BitsetError::WidthMismatch {
                    expected: num_bits,
                    actual: row.width(),
                });
            }
        }
        Ok(BitstringSet {
            num_bits,
            rows,
            counts: None,
        })
    }

    /// Multiset: parallel multiplicities, all >= 1.
    pub fn with_counts(
        num_bits: u16,
        rows: Vec<Bitstring>,
        counts: Vec<u32>,
    ) -> Result<Self, BitsetError> {
        if counts.len() != rows.len() {
            return Err(BitsetError::CountRowMismatch {
                rows: rows.len(),
                counts: counts.len(),
            });
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(BitsetError::ZeroCount);
        }
        let mut set = BitstringSet::new(num_bits, rows)?;
        set.counts = Some(counts);
        Ok(set)
    }

    /// Collapses a stream of rows into a canonical multiset: unique rows in
    /// numeric order with multiplicities.
    pub fn multiset_from(
        num_bits: u16,
        rows: impl IntoIterator<Item = Bitstring>,
    ) -> Result<Self, BitsetError> {
        let mut tally: BTreeMap<Bitstring, u32> = BTreeMap::new();
        for row in rows {
            if row.width() != num_bits {
                return Err(BitsetError::WidthMismatch {
                    expected: num_bits,
                    actual: row.width(),
                });
            }
            *tally.entry(row).or_insert(0) += 1;
        }
        let mut ordered: Vec<(Bitstring, u32)> = tally.into_iter().collect();
        ordered.sort_by(|a, b| a.0.cmp_numeric(&b.0));
        let (rows, counts): (Vec<_>, Vec<_>) = ordered.into_iter().unzip();
        BitstringSet::with_counts(num_bits, rows, counts)
    }

    /// Deduplicated plain set in numeric order.
    pub fn unique_from(
        num_bits: u16,
        rows: impl IntoIterator<Item = Bitstring>,
    ) -> Result<Self, BitsetError> {
        let multi = Self::multiset_from(num_bits, rows)?;
        BitstringSet::new(num_bits, multi.rows)
    }

    pub fn num_bits(&self) -> u16 {
        self.num_bits
    }

    /// Number of stored rows (distinct entries, not total multiplicity).
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Total multiplicity across all rows.
    pub fn total_count(&self) -> u64 {
        match &self.counts {
            Some(c) => c.iter().map(|&x| u64::from(x)).sum(),
            None => self.rows.len() as u64,
        }
    }

    pub fn rows(&self) -> &[Bitstring] {
        &self.rows
    }

    pub fn counts(&self) -> Option<&[u32]> {
        self.counts.as_deref()
    }

    pub fn has_duplicate_rows(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.rows.len());
        self.rows.iter().any(|r| !seen.insert(r))
    }

    /// The distinct rows as a hash set (multiplicities dropped).
    pub fn unique_rows(&self) -> std::collections::HashSet<&Bitstring> {
        self.rows.iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BitsetError {
    #[error("malformed container header")]
    MalformedHeader,
    #[error("container body length mismatch: expected {expected} bytes, found {actual}")]
    BodyLength { expected: usize, actual: usize },
    #[error("row has {actual} bytes, width needs {expected}")]
    RowLength { expected: usize, actual: usize },
    #[error("row width {actual} does not match set width {expected}")]
    WidthMismatch { expected: u16, actual: u16 },
    #[error("{counts} counts for {rows} rows")]
    CountRowMismatch { rows: usize, counts: usize },
    #[error("multiset counts must be >= 1")]
    ZeroCount,
    #[error("row stores a bit above the declared width")]
    NonCanonicalRow { index: usize },
    #[error("bitstring width exceeds 65535")]
    TooWide,
    #[error("textual bitstrings contain only '0' and '1', found {0:?}")]
    BadTextChar(char),
}

/// Serializes a set into the portable container.
pub fn pack_bitstrings(set: &BitstringSet) -> Vec<u8> {
    let row_bytes = Bitstring::byte_len(set.num_bits());
    let has_counts = set.counts().is_some();
    let header = format!(
        "bitset1 num_bits={} rows={} counts={}\n",
        set.num_bits(),
        set.len(),
        u8::from(has_counts)
    );
    let mut out = Vec::with_capacity(
        header.len() + set.len() * row_bytes + if has_counts { set.len() * 4 } else { 0 },
    );
    out.extend_from_slice(header.as_bytes());
    for row in set.rows() {
        out.extend_from_slice(row.as_bytes());
    }
    if let Some(counts) = set.counts() {
        for c in counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

/// Parses the portable container back into a set.
pub fn unpack_bitstrings(bytes: &[u8]) -> Result<BitstringSet, BitsetError> {
    // The manifest line is short; refuse to scan unbounded garbage.
    let scan = bytes.len().min(96);
    let nl = bytes[..scan]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(BitsetError::MalformedHeader)?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| BitsetError::MalformedHeader)?;
    let mut parts = header.split(' ');
    if parts.next() != Some("bitset1") {
        return Err(BitsetError::MalformedHeader);
    }
    let num_bits: u16 = parse_field(parts.next(), "num_bits")?;
    let rows: usize = parse_field(parts.next(), "rows")?;
    let counts_flag: u8 = parse_field(parts.next(), "counts")?;
    if parts.next().is_some() || counts_flag > 1 {
        return Err(BitsetError::MalformedHeader);
    }

    let row_bytes = Bitstring::byte_len(num_bits);
    let body = &bytes[nl + 1..];
    let expected = rows * row_bytes + if counts_flag == 1 { rows * 4 } else { 0 };
    if body.len() != expected {
        return Err(BitsetError::BodyLength {
            expected,
            actual: body.len(),
        });
    }

    let mut parsed = Vec::with_capacity(rows);
    for i in 0..rows {
        let chunk = &body[i * row_bytes..(i + 1) * row_bytes];
        let row = Bitstring::from_bytes(num_bits, chunk.to_vec())?;
        if row.as_bytes() != chunk {
            return Err(BitsetError::NonCanonicalRow { index: i });
        }
        parsed.push(row);
    }
    if counts_flag == 1 {
        let counts_body = &body[rows * row_bytes..];
        let counts: Vec<u32> = counts_body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        BitstringSet::with_counts(num_bits, parsed, counts)
    } else {
        BitstringSet::new(num_bits, parsed)
    }
}

fn parse_field<T: std::str::FromStr>(part: Option<&str>, name: &str) -> Result<T, BitsetError> {
    let part = part.ok_or(BitsetError::MalformedHeader)?;
    let value = part
        .strip_prefix(name)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or(BitsetError::MalformedHeader)?;
    value.parse().map_err(|_| BitsetError::MalformedHeader)
}
