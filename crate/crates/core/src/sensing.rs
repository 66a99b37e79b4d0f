//! The measurement operator `Φ` and its prefix semantics.
//!
//! Row `i` of `Φ` is the `i`-th sensing pattern. Sensing at rate `r/n` uses
//! exactly the first `r` rows; rows past `r` are never read.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::nn::PhiPrefix;
use crate::tensor::{Real, Tensor};

/// Largest magnitude of the signed 9-bit export.
pub const QUANT_MAX: i16 = 255;
pub const QUANT_MIN: i16 = -256;

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementMatrix<T = f32> {
    n: usize,
    m_max: usize,
    k_min: usize,
    rows: Vec<T>,
    trainable_rows: Vec<bool>,
}

/// Measurements `y = Φ(1:r,:) x` of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBlock<T = f32> {
    pub r: usize,
    pub values: Vec<T>,
}

/// Signed 9-bit integer patterns with a shared scale: `Φ ≈ scale · q`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedPhi {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<i16>,
    pub scale: f64,
}

impl QuantizedPhi {
    pub fn dequantize(&self) -> Vec<f64> {
        self.values.iter().map(|&q| q as f64 * self.scale).collect()
    }
}

fn check_bounds(n: usize, m_max: usize, k_min: usize) -> Result<()> {
    if !(1 <= k_min && k_min <= m_max && m_max <= n) {
        return Err(Error::invalid(format!(
            "need 1 <= k_min <= m_max <= n, got k_min={k_min}, m_max={m_max}, n={n}"
        )));
    }
    Ok(())
}

impl<T: Real> MeasurementMatrix<T> {
    /// Wraps `m_max × n` row-major values. All rows start trainable.
    pub fn new(n: usize, m_max: usize, k_min: usize, rows: Vec<T>) -> Result<Self> {
        check_bounds(n, m_max, k_min)?;
        if rows.len() != m_max * n {
            return Err(Error::dim(format!(
                "Φ of {m_max}x{n} needs {} values, got {}",
                m_max * n,
                rows.len()
            )));
        }
        Ok(Self {
            n,
            m_max,
            k_min,
            rows,
            trainable_rows: vec![true; m_max],
        })
    }

    /// i.i.d. `N(0, 1/n)` entries, deterministic per seed.
    pub fn gaussian_init(n: usize, m_max: usize, k_min: usize, seed: u64) -> Result<Self> {
        check_bounds(n, m_max, k_min)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, (1.0 / n as f64).sqrt()).expect("positive variance");
        let rows = (0..m_max * n)
            .map(|_| T::from_f64(dist.sample(&mut rng)))
            .collect();
        Self::new(n, m_max, k_min, rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn k_min(&self) -> usize {
        self.k_min
    }

    pub fn set_k_min(&mut self, k_min: usize) -> Result<()> {
        check_bounds(self.n, self.m_max, k_min)?;
        self.k_min = k_min;
        Ok(())
    }

    pub fn rows(&self) -> &[T] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [T] {
        &mut self.rows
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.rows[i * self.n..(i + 1) * self.n]
    }

    pub fn trainable_rows(&self) -> &[bool] {
        &self.trainable_rows
    }

    /// Marks rows in `range` trainable and every other row frozen.
    pub fn set_trainable(&mut self, range: std::ops::Range<usize>) {
        for (i, t) in self.trainable_rows.iter_mut().enumerate() {
            *t = range.contains(&i);
        }
    }

    pub fn measurement_rate(&self, r: usize) -> f64 {
        r as f64 / self.n as f64
    }

    fn check_r(&self, r: usize) -> Result<()> {
        if r < self.k_min || r > self.m_max {
            return Err(Error::invalid(format!(
                "prefix r={r} outside [{}, {}]",
                self.k_min, self.m_max
            )));
        }
        Ok(())
    }

    /// View of `Φ(1:r,:)` for a network pass. Gradients are requested for the
    /// rows currently flagged trainable, which must form one contiguous range.
    pub fn prefix(&self, r: usize) -> Result<PhiPrefix<'_, T>> {
        self.check_r(r)?;
        let first = self.trainable_rows[..r].iter().position(|&t| t);
        let range = match first {
            Some(s) => {
                let len = self.trainable_rows[s..r].iter().take_while(|&&t| t).count();
                s..s + len
            }
            None => 0..0,
        };
        Ok(PhiPrefix::new(&self.rows, r, self.n)?.with_trainable(range))
    }

    /// Same as [`prefix`](Self::prefix) with no gradient requested.
    pub fn prefix_frozen(&self, r: usize) -> Result<PhiPrefix<'_, T>> {
        self.check_r(r)?;
        PhiPrefix::new(&self.rows, r, self.n)
    }

    /// First `r` rows as a 64-bit matrix.
    pub fn prefix_matrix(&self, r: usize) -> Result<Matrix> {
        self.check_r(r)?;
        Matrix::from_real(r, self.n, &self.rows[..r * self.n])
    }

    /// `Φ(1:r,:)` as a new matrix with `m_max = r` and `k_min` clamped to `r`.
    pub fn truncated(&self, r: usize) -> Result<Self> {
        if r == 0 || r > self.m_max {
            return Err(Error::invalid(format!("cannot truncate {} rows to {r}", self.m_max)));
        }
        Self::new(self.n, r, self.k_min.min(r), self.rows[..r * self.n].to_vec())
    }

    /// Stacks `row` below the existing rows, raising `m_max` by one.
    pub fn push_row(&mut self, row: &[T]) -> Result<()> {
        if row.len() != self.n {
            return Err(Error::dim(format!("row of length {} for n={}", row.len(), self.n)));
        }
        if self.m_max + 1 > self.n {
            return Err(Error::invalid("Φ cannot have more rows than columns"));
        }
        self.rows.extend_from_slice(row);
        self.m_max += 1;
        self.trainable_rows.push(true);
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> MeasurementMatrix<U> {
        MeasurementMatrix {
            n: self.n,
            m_max: self.m_max,
            k_min: self.k_min,
            rows: self.rows.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            trainable_rows: self.trainable_rows.clone(),
        }
    }

    /// `y = Φ(1:r,:) x`.
    pub fn measure(&self, x: &[T], r: usize) -> Result<EncodedBlock<T>> {
        self.check_r(r)?;
        if x.len() != self.n {
            return Err(Error::dim(format!("block of length {} for n={}", x.len(), self.n)));
        }
        let values = (0..r)
            .map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect();
        Ok(EncodedBlock { r, values })
    }

    /// Pseudo-image `Ψ_r y` with `Ψ_r = (Φ(1:r,:))†`, shaped `b × b` when `n`
    /// is a perfect square and `[n]` otherwise.
    pub fn decode_init(&self, y: &EncodedBlock<T>) -> Result<Tensor<T>> {
        if y.values.len() != y.r {
            return Err(Error::dim(format!(
                "encoded block claims r={} but holds {} values",
                y.r,
                y.values.len()
            )));
        }
        let state = linalg::pinv_rows(&self.prefix_matrix(y.r)?)?;
        let psi = state.psi();
        let out: Vec<T> = (0..self.n)
            .map(|i| {
                let v: f64 = psi
                    .row(i)
                    .iter()
                    .zip(&y.values)
                    .map(|(p, v)| p * v.as_f64())
                    .sum();
                T::from_f64(v)
            })
            .collect();
        let side = (self.n as f64).sqrt().round() as usize;
        let shape = if side * side == self.n {
            vec![side, side]
        } else {
            vec![self.n]
        };
        Tensor::new(shape, out)
    }

    /// Signed 9-bit export of the first `r` rows, scaled by the largest
    /// magnitude in the whole of `Φ` so every prefix shares one scale.
    pub fn quantize_export(&self, r: usize) -> Result<QuantizedPhi> {
        self.check_r(r)?;
        let max = self
            .rows
            .iter()
            .map(|v| v.as_f64().abs())
            .fold(0.0, f64::max);
        if max == 0.0 {
            return Err(Error::invalid("cannot quantize an all-zero Φ"));
        }
        let values = self.rows[..r * self.n]
            .iter()
            .map(|v| {
                let q = (v.as_f64() / max * QUANT_MAX as f64).round();
                q.clamp(QUANT_MIN as f64, QUANT_MAX as f64) as i16
            })
            .collect();
        Ok(QuantizedPhi {
            rows: r,
            cols: self.n,
            values,
            scale: max / QUANT_MAX as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_rows(n: usize, m: usize, k: usize) -> MeasurementMatrix<f64> {
        let mut rows = vec![0.0; m * n];
        for i in 0..m {
            rows[i * n + i] = 1.0;
        }
        MeasurementMatrix::new(n, m, k, rows).unwrap()
    }

    #[test]
    fn paper_scale_rate_range() {
        let phi = MeasurementMatrix::<f32>::gaussian_init(1089, 272, 44, 0).unwrap();
        assert!((phi.measurement_rate(44) - 0.0404).abs() < 1e-4);
        assert!((phi.measurement_rate(272) - 0.2497).abs() < 1e-4);
    }

    #[test]
    fn gaussian_init_is_seeded() {
        let a = MeasurementMatrix::<f32>::gaussian_init(64, 16, 4, 9).unwrap();
        let b = MeasurementMatrix::<f32>::gaussian_init(64, 16, 4, 9).unwrap();
        assert_eq!(a, b);
        let c = MeasurementMatrix::<f32>::gaussian_init(64, 16, 4, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_init_variance() {
        // 250 x 400 = 10⁵ draws
        let n = 400;
        let phi = MeasurementMatrix::<f64>::gaussian_init(n, 250, 1, 1).unwrap();
        let len = phi.rows().len() as f64;
        let mean = phi.rows().iter().sum::<f64>() / len;
        let var = phi.rows().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1.0);
        let target = 1.0 / n as f64;
        assert!((var - target).abs() / target < 0.05, "variance {var}");
    }

    #[test]
    fn invalid_bounds() {
        assert!(MeasurementMatrix::<f32>::gaussian_init(16, 20, 1, 0).is_err());
        assert!(MeasurementMatrix::<f32>::gaussian_init(16, 8, 9, 0).is_err());
        assert!(MeasurementMatrix::<f32>::gaussian_init(16, 8, 0, 0).is_err());
    }

    #[test]
    fn measure_zero_and_unit_rows() {
        let phi = unit_rows(6, 4, 2);
        let y = phi.measure(&[0.0; 6], 3).unwrap();
        assert_eq!(y.values, vec![0.0; 3]);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(phi.measure(&x, 3).unwrap().values, vec![1.0, 2.0, 3.0]);
        assert!(phi.measure(&x, 1).is_err());
        assert!(phi.measure(&x, 5).is_err());
    }

    #[test]
    fn measure_prefix_of_full() {
        let phi = MeasurementMatrix::<f64>::gaussian_init(32, 12, 3, 4).unwrap();
        let x: Vec<f64> = (0..32).map(|i| (i as f64).cos()).collect();
        let full = phi.measure(&x, 12).unwrap();
        for r in 3..=12 {
            assert_eq!(phi.measure(&x, r).unwrap().values[..], full.values[..r]);
        }
    }

    #[test]
    fn decode_square_invertible_recovers_block() {
        let phi = MeasurementMatrix::<f32>::gaussian_init(16, 16, 1, 5).unwrap();
        let x: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        let y = phi.measure(&x, 16).unwrap();
        let xh = phi.decode_init(&y).unwrap();
        assert_eq!(xh.shape(), &[4, 4]);
        for (a, b) in xh.data().iter().zip(&x) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn decode_orthonormal_is_transpose() {
        let phi = unit_rows(9, 5, 1);
        let y = EncodedBlock {
            r: 4,
            values: vec![0.5, -1.0, 2.0, 3.0],
        };
        let xh = phi.decode_init(&y).unwrap();
        assert_eq!(xh.data(), &[0.5, -1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn decode_reproduces_row_space_signal() {
        let phi = MeasurementMatrix::<f64>::gaussian_init(25, 10, 2, 8).unwrap();
        let r = 6;
        let a = [0.3, -1.0, 0.7, 2.0, -0.4, 1.1];
        let x: Vec<f64> = (0..25)
            .map(|j| (0..r).map(|i| phi.row(i)[j] * a[i]).sum())
            .collect();
        let y = phi.measure(&x, r).unwrap();
        let xh = phi.decode_init(&y).unwrap();
        for (p, q) in xh.data().iter().zip(&x) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn quantize_examples() {
        let phi = MeasurementMatrix::<f64>::new(3, 2, 1, vec![1.0, 0.5, -0.25, 0.0, -1.0, 0.1]).unwrap();
        let q = phi.quantize_export(2).unwrap();
        assert_eq!(q.values[0], 255);
        assert_eq!(q.values[4], -255);
        let neg = MeasurementMatrix::<f64>::new(3, 2, 1, phi.rows().iter().map(|v| -v).collect()).unwrap();
        let qn = neg.quantize_export(2).unwrap();
        assert!(q.values.iter().zip(&qn.values).all(|(a, b)| *a == -*b));
        let zero = MeasurementMatrix::<f64>::new(3, 1, 1, vec![0.0; 3]).unwrap();
        assert!(zero.quantize_export(1).is_err());
    }

    #[test]
    fn quantize_error_bound() {
        let phi = MeasurementMatrix::<f32>::gaussian_init(64, 20, 4, 2).unwrap();
        let q = phi.quantize_export(20).unwrap();
        let deq = q.dequantize();
        for (d, v) in deq.iter().zip(phi.rows()) {
            assert!((d - *v as f64).abs() <= q.scale / 2.0 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn prefix_purity(seed in 0u64..1000, r in 2usize..8, junk in -5.0f64..5.0) {
            let mut phi = MeasurementMatrix::<f64>::gaussian_init(16, 8, 2, seed).unwrap();
            let x: Vec<f64> = (0..16).map(|i| ((i as f64) + junk).sin()).collect();
            let y0 = phi.measure(&x, r).unwrap();
            let d0 = phi.decode_init(&y0).unwrap();
            for i in r..8 {
                phi.row_mut(i).fill(junk);
            }
            let y1 = phi.measure(&x, r).unwrap();
            prop_assert_eq!(&y0, &y1);
            prop_assert_eq!(d0, phi.decode_init(&y1).unwrap());
        }

        #[test]
        fn adjoint_consistency(seed in 0u64..1000, r in 1usize..8) {
            let phi = MeasurementMatrix::<f64>::gaussian_init(16, 8, 1, seed).unwrap();
            let x: Vec<f64> = (0..16).map(|i| ((i * 7 + seed as usize) as f64).sin()).collect();
            let y: Vec<f64> = (0..r).map(|i| ((i * 3) as f64 + 0.5).cos()).collect();
            let lhs: f64 = phi.measure(&x, r).unwrap().values.iter().zip(&y).map(|(a, b)| a * b).sum();
            let at_y: Vec<f64> = (0..16).map(|j| (0..r).map(|i| phi.row(i)[j] * y[i]).sum()).collect();
            let rhs: f64 = x.iter().zip(&at_y).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-6);
        }

        #[test]
        fn decode_is_right_inverse(seed in 0u64..1000, r in 1usize..10) {
            let phi = MeasurementMatrix::<f64>::gaussian_init(20, 10, 1, seed).unwrap();
            let y = EncodedBlock { r, values: (0..r).map(|i| (i as f64 * 1.3).sin()).collect() };
            let xh = phi.decode_init(&y).unwrap();
            let back = phi.measure(xh.data(), r).unwrap();
            for (a, b) in back.values.iter().zip(&y.values) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }
    }
}
