//! Dense row-major `f32` storage and the `GNNH` tensor file format.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const MAGIC: &[u8; 4] = b"GNNH";
const VERSION: u8 = 1;

/// Row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

/// Node feature storage, one row per node.
pub type FeatureMatrix = Matrix;
/// Learnable weight matrix.
pub type DenseMatrix = Matrix;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Self::zeros(size, size);
        for i in 0..size {
            m.data[i * size + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Fills a matrix with values uniform in `[-0.5, 0.5)`, row-major.
    pub fn seeded(rows: usize, cols: usize, rng: &mut SplitMix64) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform_f32(-0.5, 0.5)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f32) {
        self.data[r * self.cols + c] = value;
    }

    /// Rows `start..start + count` as a new matrix (used to slice stacked heads).
    pub fn row_block(&self, start: usize, count: usize) -> Matrix {
        Matrix {
            rows: count,
            cols: self.cols,
            data: self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.cols as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + 4 * self.data.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 13];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("truncated header".into()))?;
        if &header[..4] != MAGIC {
            return Err(Error::Format("bad magic, expected GNNH".into()));
        }
        if header[4] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", header[4])));
        }
        let rows = u32::from_le_bytes(header[5..9].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(header[9..13].try_into().unwrap()) as usize;
        let mut raw = vec![0u8; rows * cols * 4];
        r.read_exact(&mut raw)
            .map_err(|_| Error::Format(format!("truncated payload for {rows}x{cols}")))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { rows, cols, data })
    }
}

/// `out[r] = sum_c m[r, c] * x[c]`, columns accumulated in ascending order.
pub fn vmm(x: &[f32], m: &Matrix) -> Result<Vec<f32>> {
    if x.len() != m.cols {
        return Err(Error::Dimension(format!(
            "vector of length {} against {}x{} matrix",
            x.len(),
            m.rows,
            m.cols
        )));
    }
    let mut out = vec![0.0f32; m.rows];
    vmm_into(x, m, &mut out);
    Ok(out)
}

/// [`vmm`] without the dimension check; `out` must have `m.rows()` entries.
pub(crate) fn vmm_into(x: &[f32], m: &Matrix, out: &mut [f32]) {
    for (r, slot) in out.iter_mut().enumerate() {
        let row = m.row(r);
        let mut acc = 0.0f32;
        for c in 0..row.len() {
            acc += row[c] * x[c];
        }
        *slot = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_vmm() {
        let x = [1.0, -2.0, 3.5];
        assert_eq!(vmm(&x, &Matrix::identity(3)).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_vmm() {
        assert_eq!(vmm(&[1.0, 2.0], &Matrix::zeros(3, 2)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn vmm_matches_scalar_loop() {
        let mut rng = SplitMix64::new(5);
        let m = Matrix::seeded(5, 5, &mut rng);
        let x: Vec<f32> = (0..5).map(|_| rng.uniform_f32(-1.0, 1.0)).collect();
        let got = vmm(&x, &m).unwrap();
        for r in 0..5 {
            let mut acc = 0.0f32;
            for c in 0..5 {
                acc += m.get(r, c) * x[c];
            }
            assert_eq!(got[r], acc);
        }
    }

    #[test]
    fn vmm_rejects_mismatch() {
        assert!(matches!(
            vmm(&[1.0; 3], &Matrix::zeros(2, 2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(Matrix::read_from(&b"GNNX\x01"[..]).is_err());
        let mut bytes = Matrix::zeros(2, 2).to_bytes();
        bytes[4] = 9;
        assert!(Matrix::read_from(&bytes[..]).is_err());
        let bytes = Matrix::zeros(2, 2).to_bytes();
        assert!(Matrix::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(Matrix::read_from(&long[..]).is_err());
    }

    #[test]
    fn header_layout() {
        let m = Matrix::from_vec(1, 2, vec![1.0, -0.5]).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..5], b"GNNH\x01");
        assert_eq!(&bytes[5..9], &1u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &2u32.to_le_bytes());
        assert_eq!(&bytes[13..17], &1.0f32.to_le_bytes());
    }

    proptest! {
        #[test]
        fn file_round_trip(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let m = Matrix::seeded(rows, cols, &mut SplitMix64::new(seed));
            let back = Matrix::read_from(&m.to_bytes()[..]).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
