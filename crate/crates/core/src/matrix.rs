//! Integer matrices and their bit-serial (significance plane) storage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interpretation of the top bit plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signedness {
    /// Two's complement: the top plane carries weight `-2^(bits-1)`.
    Signed,
    /// Plain binary: the top plane carries weight `+2^(bits-1)`.
    Unsigned,
}

impl Signedness {
    pub fn label(self) -> &'static str {
        match self {
            Signedness::Signed => "signed",
            Signedness::Unsigned => "unsigned",
        }
    }

    /// Inclusive representable range for `bits`-wide values.
    pub fn range(self, bits: u8) -> (i64, i64) {
        match self {
            Signedness::Signed => (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1),
            Signedness::Unsigned => (0, (1i64 << bits) - 1),
        }
    }
}

/// Dense row-major integer matrix with a declared bit width.
///
/// Operand matrices for the bit-serial engine use `bits` in `[2, 8]`;
/// GEMM results reuse the same type with the accumulator width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i32>,
    bits: u8,
    signedness: Signedness,
}

/// Widest bit width an [`IntMatrix`] may declare (i32 storage).
pub const MAX_BITS: u8 = 31;

/// Operand precision accepted by the bit-serial engine.
pub const OPERAND_BITS: std::ops::RangeInclusive<u8> = 2..=8;

impl IntMatrix {
    /// Build a matrix, validating that every element is representable.
    pub fn new(
        rows: usize,
        cols: usize,
        data: Vec<i32>,
        bits: u8,
        signedness: Signedness,
    ) -> Result<Self> {
        if bits < 2 || bits > MAX_BITS {
            return Err(Error::invalid(format!("bits {bits} outside [2, {MAX_BITS}]")));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix with {} elements",
                data.len()
            )));
        }
        let (lo, hi) = signedness.range(bits);
        for &v in &data {
            if (v as i64) < lo || (v as i64) > hi {
                return Err(Error::OutOfRange {
                    value: v as i64,
                    bits,
                    signedness: signedness.label(),
                });
            }
        }
        Ok(Self { rows, cols, data, bits, signedness })
    }

    pub fn zeros(rows: usize, cols: usize, bits: u8, signedness: Signedness) -> Result<Self> {
        Self::new(rows, cols, vec![0; rows * cols], bits, signedness)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn signedness(&self) -> Signedness {
        self.signedness
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> i32 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    /// True when the precision is accepted as a bit-serial operand.
    pub fn is_operand_precision(&self) -> bool {
        OPERAND_BITS.contains(&self.bits)
    }

    /// Split into bit-significance planes (LSB first).
    pub fn bit_slice(&self) -> Result<BitSlicedMatrix> {
        bit_slice(self)
    }
}

/// An integer matrix stored as ordered binary significance planes.
///
/// Plane `b` holds bit `b` of every element; plane index equals bit
/// significance (0 = LSB). For signed matrices the top plane carries
/// weight `-2^(bits-1)`, otherwise `+2^(bits-1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitSlicedMatrix {
    rows: usize,
    cols: usize,
    bits: u8,
    signedness: Signedness,
    /// `bits` planes of `rows * cols` entries in {0, 1}, row-major.
    planes: Vec<Vec<u8>>,
}

impl BitSlicedMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn signedness(&self) -> Signedness {
        self.signedness
    }

    pub fn plane(&self, b: usize) -> &[u8] {
        &self.planes[b]
    }

    /// Signed weight of plane `b` in the reconstruction.
    pub fn plane_weight(&self, b: usize) -> i64 {
        plane_weight(b, self.bits, self.signedness)
    }

    /// Reassemble the integer matrix. Inverse of [`bit_slice`].
    pub fn reconstruct(&self) -> IntMatrix {
        let n = self.rows * self.cols;
        let mut data = vec![0i64; n];
        for b in 0..self.bits as usize {
            let w = self.plane_weight(b);
            let plane = &self.planes[b];
            for (acc, &bit) in data.iter_mut().zip(plane) {
                *acc += w * bit as i64;
            }
        }
        let data = data.into_iter().map(|v| v as i32).collect();
        IntMatrix::new(self.rows, self.cols, data, self.bits, self.signedness)
            .expect("reconstruction stays in range")
    }
}

fn plane_weight(b: usize, bits: u8, signedness: Signedness) -> i64 {
    let top = b == bits as usize - 1;
    match (signedness, top) {
        (Signedness::Signed, true) => -(1i64 << b),
        _ => 1i64 << b,
    }
}

/// Decompose `m` into bit planes. Only operand precisions (2..=8 bits)
/// are accepted; wider matrices have no bit-serial layout here.
pub fn bit_slice(m: &IntMatrix) -> Result<BitSlicedMatrix> {
    if !m.is_operand_precision() {
        return Err(Error::invalid(format!(
            "bit_slice requires operand precision 2..=8, got {} bits",
            m.bits
        )));
    }
    let n = m.rows * m.cols;
    let mut planes = vec![vec![0u8; n]; m.bits as usize];
    for (i, &v) in m.data.iter().enumerate() {
        // Two's complement bits of v; for unsigned values this is the
        // plain binary expansion.
        for (b, plane) in planes.iter_mut().enumerate() {
            plane[i] = ((v >> b) & 1) as u8;
        }
    }
    Ok(BitSlicedMatrix {
        rows: m.rows,
        cols: m.cols,
        bits: m.bits,
        signedness: m.signedness,
        planes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(value: i32, bits: u8, signedness: Signedness) -> IntMatrix {
        IntMatrix::new(1, 1, vec![value], bits, signedness).unwrap()
    }

    #[test]
    fn signed_two_bit_minus_two() {
        let sliced = bit_slice(&single(-2, 2, Signedness::Signed)).unwrap();
        assert_eq!(sliced.plane(0), &[0]);
        assert_eq!(sliced.plane(1), &[1]);
        assert_eq!(sliced.reconstruct().get(0, 0), -2);
    }

    #[test]
    fn unsigned_three_bit_five() {
        let sliced = bit_slice(&single(5, 3, Signedness::Unsigned)).unwrap();
        assert_eq!(sliced.plane(0), &[1]);
        assert_eq!(sliced.plane(1), &[0]);
        assert_eq!(sliced.plane(2), &[1]);
    }

    #[test]
    fn out_of_range_is_rejected() {
        assert!(matches!(
            IntMatrix::new(1, 1, vec![2], 2, Signedness::Signed),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            IntMatrix::new(1, 1, vec![-1], 4, Signedness::Unsigned),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(IntMatrix::new(2, 2, vec![0; 3], 4, Signedness::Signed).is_err());
    }

    #[test]
    fn roundtrip_random_4bit_signed() {
        use rand::Rng;
        let mut rng = crate::rng::substream(7, "matrix-test", 0);
        let data: Vec<i32> = (0..64).map(|_| rng.gen_range(-8..8)).collect();
        let m = IntMatrix::new(8, 8, data, 4, Signedness::Signed).unwrap();
        assert_eq!(bit_slice(&m).unwrap().reconstruct(), m);
    }

    proptest! {
        #[test]
        fn roundtrip_all_precisions(
            bits in 2u8..=8,
            signed in proptest::bool::ANY,
            seed in proptest::num::u64::ANY,
        ) {
            use rand::Rng;
            let signedness = if signed { Signedness::Signed } else { Signedness::Unsigned };
            let (lo, hi) = signedness.range(bits);
            let mut rng = crate::rng::substream(seed, "roundtrip", 0);
            let data: Vec<i32> =
                (0..24).map(|_| rng.gen_range(lo..=hi) as i32).collect();
            let m = IntMatrix::new(4, 6, data, bits, signedness).unwrap();
            prop_assert_eq!(bit_slice(&m).unwrap().reconstruct(), m);
        }
    }
}
