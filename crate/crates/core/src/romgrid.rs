//! Turns ROM bit matrices read from die images into 64-bit words: column
//! inversion, per-segment inversion and subarray de-interleaving.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RomGridError {
    #[error("line {line}: unexpected character `{ch}` (expected 0 or 1)")]
    BadCharacter { line: usize, ch: char },
    #[error("line {line}: row has {found} bits, expected {expected}")]
    RaggedRow { line: usize, found: usize, expected: usize },
    #[error("segment boundaries must be strictly increasing and inside 1..{cols}: {boundaries:?}")]
    InvalidBoundary { boundaries: Vec<usize>, cols: usize },
    #[error("{0}")]
    Alignment(String),
    #[error("subarray order {order:?} is not a permutation of 0..{count}")]
    BadOrder { order: Vec<usize>, count: usize },
}

/// Row-major boolean matrix.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitGrid {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BitGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        BitGrid { rows, cols, bits: vec![false; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.cols + col] = value;
    }

    /// Parses one row per line of `0`/`1` characters; blank lines are
    /// skipped.
    pub fn parse_text(text: &str) -> Result<Self, RomGridError> {
        let mut grid = BitGrid::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut row = Vec::with_capacity(line.len());
            for ch in line.chars() {
                match ch {
                    '0' => row.push(false),
                    '1' => row.push(true),
                    _ => return Err(RomGridError::BadCharacter { line: i + 1, ch }),
                }
            }
            if grid.rows == 0 {
                grid.cols = row.len();
            } else if row.len() != grid.cols {
                return Err(RomGridError::RaggedRow { line: i + 1, found: row.len(), expected: grid.cols });
            }
            grid.bits.extend(row);
            grid.rows += 1;
        }
        Ok(grid)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(if self.get(r, c) { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    fn map_columns(&self, invert: impl Fn(usize) -> bool) -> BitGrid {
        let mut g = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if invert(c) {
                    let i = r * self.cols + c;
                    g.bits[i] = !g.bits[i];
                }
            }
        }
        g
    }
}

/// Which columns `normalize_columns` inverts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parity {
    /// Invert columns 1, 3, 5, ...
    #[default]
    Even,
    /// Invert columns 0, 2, 4, ...
    Odd,
}

/// Inverts every other column.
pub fn normalize_columns(g: &BitGrid, parity: Parity) -> BitGrid {
    let phase = match parity {
        Parity::Even => 1,
        Parity::Odd => 0,
    };
    g.map_columns(|c| c % 2 == phase)
}

/// Inverts every bit (swaps the left-via/right-via reading).
pub fn flip_convention(g: &BitGrid) -> BitGrid {
    g.map_columns(|_| true)
}

fn check_boundaries(boundaries: &[usize], cols: usize) -> Result<(), RomGridError> {
    let ok = boundaries.iter().all(|&b| b > 0 && b < cols) && boundaries.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(RomGridError::InvalidBoundary { boundaries: boundaries.to_vec(), cols })
    }
}

/// Splits the columns at `boundaries` and inverts every column of the
/// odd-numbered segments, shifting the alternation phase per segment.
pub fn apply_segment_inversion(g: &BitGrid, boundaries: &[usize]) -> Result<BitGrid, RomGridError> {
    check_boundaries(boundaries, g.cols)?;
    Ok(g.map_columns(|c| boundaries.iter().filter(|&&b| b <= c).count() % 2 == 1))
}

fn check_layout(cols: usize, subarrays: usize, order: &[usize]) -> Result<(), RomGridError> {
    if subarrays == 0 || !cols.is_multiple_of(subarrays) {
        return Err(RomGridError::Alignment(format!("{cols} columns do not split into {subarrays} subarrays")));
    }
    if !cols.is_multiple_of(64) {
        return Err(RomGridError::Alignment(format!("row width {cols} is not a multiple of 64")));
    }
    let mut seen = vec![false; subarrays];
    let valid = order.len() == subarrays && order.iter().all(|&k| k < subarrays && !std::mem::replace(&mut seen[k], true));
    if !valid {
        return Err(RomGridError::BadOrder { order: order.to_vec(), count: subarrays });
    }
    Ok(())
}

/// Column of the grid holding logical bit `j` of a row.
fn source_column(j: usize, width: usize, order: &[usize]) -> usize {
    let n = order.len();
    order[j % n] * width + j / n
}

/// The grid's columns form `order.len()` equal subarrays side by side.
/// Logical bit `j` of a row comes from subarray `order[j % n]`, local
/// column `j / n`. Each row is then cut into 64-bit words, bit 0 first.
pub fn interleave_subarrays(g: &BitGrid, order: &[usize]) -> Result<Vec<u64>, RomGridError> {
    let n = order.len();
    check_layout(g.cols, n, order)?;
    let width = g.cols / n;
    let mut words = Vec::with_capacity(g.rows * g.cols / 64);
    for r in 0..g.rows {
        for w in 0..g.cols / 64 {
            let mut word = 0u64;
            for bit in 0..64 {
                if g.get(r, source_column(w * 64 + bit, width, order)) {
                    word |= 1 << bit;
                }
            }
            words.push(word);
        }
    }
    Ok(words)
}

/// Inverse of [`interleave_subarrays`] for a grid `cols` wide.
pub fn words_to_grid(words: &[u64], cols: usize, order: &[usize]) -> Result<BitGrid, RomGridError> {
    let n = order.len();
    check_layout(cols, n, order)?;
    let per_row = cols / 64;
    if !words.len().is_multiple_of(per_row) {
        return Err(RomGridError::Alignment(format!("{} words do not fill rows of {per_row}", words.len())));
    }
    let width = cols / n;
    let mut g = BitGrid::new(words.len() / per_row, cols);
    for (i, word) in words.iter().enumerate() {
        let (r, w) = (i / per_row, i % per_row);
        for bit in 0..64 {
            g.set(r, source_column(w * 64 + bit, width, order), word >> bit & 1 == 1);
        }
    }
    Ok(g)
}

/// Parameters of the grid-to-words pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridConfig {
    /// Alternating column inversion; `None` skips it.
    pub parity: Option<Parity>,
    pub segments: Vec<usize>,
    /// Subarray order; its length is the subarray count.
    pub order: Vec<usize>,
    pub flip: bool,
}

impl GridConfig {
    pub fn new(subarrays: usize) -> Self {
        GridConfig { parity: Some(Parity::Even), segments: Vec::new(), order: (0..subarrays).collect(), flip: false }
    }
}

fn invert_all(g: &BitGrid, cfg: &GridConfig) -> Result<BitGrid, RomGridError> {
    let mut g = if cfg.flip { flip_convention(g) } else { g.clone() };
    if let Some(p) = cfg.parity {
        g = normalize_columns(&g, p);
    }
    apply_segment_inversion(&g, &cfg.segments)
}

/// flip, normalize, segment inversion, de-interleave.
pub fn grid_to_words(g: &BitGrid, cfg: &GridConfig) -> Result<Vec<u64>, RomGridError> {
    interleave_subarrays(&invert_all(g, cfg)?, &cfg.order)
}

/// Builds the grid that [`grid_to_words`] maps back to `words`.
pub fn synthesize_grid(words: &[u64], cols: usize, cfg: &GridConfig) -> Result<BitGrid, RomGridError> {
    invert_all(&words_to_grid(words, cols, &cfg.order)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_alternates_and_is_an_involution() {
        let g = BitGrid::parse_text("1111\n1111\n").unwrap();
        let n = normalize_columns(&g, Parity::Even);
        assert_eq!(n.to_text(), "1010\n1010\n");
        assert_eq!(normalize_columns(&n, Parity::Even), g);
        assert_eq!(normalize_columns(&g, Parity::Odd).to_text(), "0101\n0101\n");
    }

    #[test]
    fn segment_inversion() {
        let g = BitGrid::parse_text("000000").unwrap();
        assert_eq!(apply_segment_inversion(&g, &[2, 4]).unwrap().to_text(), "001100\n");
        assert!(apply_segment_inversion(&g, &[4, 2]).is_err());
        assert!(apply_segment_inversion(&g, &[6]).is_err());
        assert!(apply_segment_inversion(&g, &[0]).is_err());
    }

    #[test]
    fn eight_by_eight_is_one_word() {
        let order: Vec<usize> = (0..8).collect();
        let g = words_to_grid(&[0x0123_4567_89ab_cdef], 64, &order).unwrap();
        assert_eq!(g.rows(), 1);
        assert_eq!(interleave_subarrays(&g, &order).unwrap(), vec![0x0123_4567_89ab_cdef]);
        let mut swapped = order.clone();
        swapped.swap(0, 1);
        assert_ne!(interleave_subarrays(&g, &swapped).unwrap(), vec![0x0123_4567_89ab_cdef]);
    }

    #[test]
    fn alignment_errors() {
        assert!(matches!(interleave_subarrays(&BitGrid::new(1, 60), &[0, 1, 2]), Err(RomGridError::Alignment(_))));
        assert!(matches!(interleave_subarrays(&BitGrid::new(1, 64), &[0, 0]), Err(RomGridError::BadOrder { .. })));
        assert!(matches!(BitGrid::parse_text("01\n011"), Err(RomGridError::RaggedRow { line: 2, .. })));
    }
}
