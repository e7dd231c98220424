use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sign bitmap: bit `c` of row `r` is 1 iff the weight is `+1`.
///
/// Bits are LSB-first within each 64-bit word and every row starts on a
/// fresh word, so trailing bits of a row's last word are zero padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitmap {
    rows: usize,
    cols: usize,
    words: Vec<u64>,
}

impl Bitmap {
    pub fn words_per_row(cols: usize) -> usize {
        cols.div_ceil(64)
    }

    /// Packs a row-major `rows × cols` matrix of `±1` entries.
    pub fn pack(values: &[f32], rows: usize, cols: usize) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dim("pack_weights", &[values.len()], &[rows, cols]));
        }
        let wpr = Self::words_per_row(cols);
        let mut words = vec![0u64; rows * wpr];
        for (r, row) in values.chunks(cols.max(1)).enumerate().take(rows) {
            for (c, &v) in row.iter().enumerate() {
                if v == 1.0 {
                    words[r * wpr + c / 64] |= 1 << (c % 64);
                } else if v != -1.0 {
                    return Err(Error::Argument(format!(
                        "cannot pack weight {v} at row {r}, column {c}: entries must be +1 or -1"
                    )));
                }
            }
        }
        Ok(Bitmap { rows, cols, words })
    }

    /// Rebuilds from raw words; padding bits must be zero.
    pub fn from_words(rows: usize, cols: usize, words: Vec<u64>) -> Result<Self> {
        let wpr = Self::words_per_row(cols);
        if words.len() != rows * wpr {
            return Err(Error::dim("bitmap", &[words.len()], &[rows, wpr]));
        }
        if cols % 64 != 0 {
            let mask = !0u64 << (cols % 64);
            if words.chunks(wpr).any(|row| row[wpr - 1] & mask != 0) {
                return Err(Error::Argument("bitmap padding bits are not zero".into()));
            }
        }
        Ok(Bitmap { rows, cols, words })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn row(&self, r: usize) -> &[u64] {
        let wpr = Self::words_per_row(self.cols);
        &self.words[r * wpr..(r + 1) * wpr]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.row(r)[c / 64] >> (c % 64) & 1 == 1
    }

    pub fn unpack(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            out.extend((0..self.cols).map(|c| if self.get(r, c) { 1.0 } else { -1.0 }));
        }
        out
    }

    /// `ceil(rows·cols / 8)`: the payload if bits were stored back to back.
    pub fn unpadded_bytes(&self) -> usize {
        (self.rows * self.cols).div_ceil(8)
    }

    pub fn padded_bytes(&self) -> usize {
        self.words.len() * 8
    }
}

/// Packs a `±1` tensor, treating its leading axis as rows and the remaining
/// axes as columns.
pub fn pack_weights(w_b: &Tensor<f32>) -> Result<Bitmap> {
    let rows = w_b.shape().first().copied().unwrap_or(1);
    let cols = if rows == 0 { 0 } else { w_b.len() / rows };
    Bitmap::pack(w_b.data(), rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lsb_first_encoding() {
        let b = Bitmap::pack(&[1.0, -1.0, 1.0, 1.0], 1, 4).unwrap();
        assert_eq!(b.words(), &[0b1101]);
        assert!(b.get(0, 0) && !b.get(0, 1) && b.get(0, 2) && b.get(0, 3));
    }

    #[test]
    fn negative_row_is_zero() {
        let b = Bitmap::pack(&[-1.0; 70], 1, 70).unwrap();
        assert_eq!(b.words(), &[0, 0]);
    }

    #[test]
    fn rows_are_padded_independently() {
        let mut v = vec![-1.0; 2 * 37];
        v[37] = 1.0;
        let b = Bitmap::pack(&v, 2, 37).unwrap();
        assert_eq!(b.words(), &[0, 1]);
        assert_eq!(b.padded_bytes(), 16);
        assert_eq!(b.unpadded_bytes(), 10);
    }

    #[test]
    fn rejects_non_binary() {
        assert!(Bitmap::pack(&[1.0, 0.0], 1, 2).is_err());
        assert!(Bitmap::pack(&[1.0, f32::NAN], 1, 2).is_err());
        assert!(Bitmap::from_words(1, 3, vec![0b1000]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(rows in 1usize..4, cols in 1usize..130, seed: u64) {
            let mut s = seed;
            let v: Vec<f32> = (0..rows * cols)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    if s >> 63 == 1 { 1.0 } else { -1.0 }
                })
                .collect();
            let b = Bitmap::pack(&v, rows, cols).unwrap();
            prop_assert_eq!(b.unpack(), v);
            prop_assert_eq!(Bitmap::from_words(rows, cols, b.words().to_vec()).unwrap(), b);
        }
    }
}
