//! Right pseudoinverse `Ψ = Φᵀ(ΦΦᵀ)⁻¹` of a wide full-row-rank matrix.
//!
//! Everything here is 64-bit. The Gram factor is a plain Cholesky; appending a
//! row borders the factor and updates `Ψ` in `O(n·r)` instead of refactoring.

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Relative pivot threshold below which a row is treated as dependent.
pub const DEPENDENCE_TOL: f64 = 1e-12;

/// Ridge added on Cholesky failure, relative to `trace(ΦΦᵀ)/r`.
pub const RIDGE_SCALE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_real<T: Real>(rows: usize, cols: usize, data: &[T]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|v| v.as_f64()).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        f64::gemm(
            self.rows,
            self.cols,
            other.cols,
            1.0,
            &self.data,
            false,
            &other.data,
            false,
            0.0,
            &mut out.data,
        );
        Ok(out)
    }

    /// `self · selfᵀ`
    pub fn gram(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.rows);
        f64::gemm(
            self.rows,
            self.cols,
            self.rows,
            1.0,
            &self.data,
            false,
            &self.data,
            true,
            0.0,
            &mut out.data,
        );
        out
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Stacks `row` below the existing rows.
    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::dim(format!(
                "row of length {} appended to {} columns",
                row.len(),
                self.cols
            )));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }
}

/// Lower Cholesky factor of a symmetric matrix, or `None` when a pivot falls
/// to `DEPENDENCE_TOL` of its diagonal entry or below.
fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let diag = a.get(j, j);
        let mut d = diag;
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > DEPENDENCE_TOL * diag.abs()) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Some(l)
}

/// Solves `L Lᵀ X = B` in place for every column of `b` (`r × cols`).
fn chol_solve(l: &Matrix, b: &mut Matrix) {
    let r = l.rows;
    let cols = b.cols;
    debug_assert_eq!(b.rows, r);
    // forward: L Y = B
    for i in 0..r {
        for k in 0..i {
            let lik = l.get(i, k);
            if lik != 0.0 {
                let (head, tail) = b.data.split_at_mut(i * cols);
                let src = &head[k * cols..(k + 1) * cols];
                for (dst, s) in tail[..cols].iter_mut().zip(src) {
                    *dst -= lik * s;
                }
            }
        }
        let inv = 1.0 / l.get(i, i);
        for v in &mut b.data[i * cols..(i + 1) * cols] {
            *v *= inv;
        }
    }
    // backward: Lᵀ X = Y
    for i in (0..r).rev() {
        for k in i + 1..r {
            let lki = l.get(k, i);
            if lki != 0.0 {
                let (head, tail) = b.data.split_at_mut(k * cols);
                let dst = &mut head[i * cols..(i + 1) * cols];
                for (d, s) in dst.iter_mut().zip(&tail[..cols]) {
                    *d -= lki * s;
                }
            }
        }
        let inv = 1.0 / l.get(i, i);
        for v in &mut b.data[i * cols..(i + 1) * cols] {
            *v *= inv;
        }
    }
}

/// Cached pseudoinverse of the first `r` rows of a measurement matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PinvState {
    rows: Matrix,
    gram_chol: Matrix,
    psi: Matrix,
    ridge: f64,
}

impl PinvState {
    pub fn r(&self) -> usize {
        self.rows.rows
    }

    pub fn n(&self) -> usize {
        self.rows.cols
    }

    /// The `r × n` matrix this state was built from.
    pub fn phi(&self) -> &Matrix {
        &self.rows
    }

    /// Lower Cholesky factor of `ΦΦᵀ + ridge·I`.
    pub fn gram_chol(&self) -> &Matrix {
        &self.gram_chol
    }

    /// `Ψ`, stored `n × r`.
    pub fn psi(&self) -> &Matrix {
        &self.psi
    }

    /// Regularizer actually applied; zero for a clean factorization.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }
}

/// Pseudoinverse of a wide matrix with a one-shot ridge retry.
pub fn pinv_rows(phi: &Matrix) -> Result<PinvState> {
    pinv_rows_impl(phi, false)
}

fn pinv_rows_impl(phi: &Matrix, force_ridge: bool) -> Result<PinvState> {
    let (r, n) = (phi.rows, phi.cols);
    if r == 0 || r > n {
        return Err(Error::dim(format!(
            "pseudoinverse needs 1 <= r <= n, got {r}x{n}"
        )));
    }
    if phi.data.iter().all(|&v| v == 0.0) {
        return Err(Error::Singular("all rows are zero".into()));
    }
    if let Some(i) = phi.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            layer: "pinv".into(),
            detail: format!("entry {i} of Φ is not finite"),
        });
    }
    let mut gram = phi.gram();
    let mut ridge = 0.0;
    let chol = if force_ridge { None } else { cholesky(&gram) };
    let chol = match chol {
        Some(l) => l,
        None => {
            let trace: f64 = (0..r).map(|i| gram.get(i, i)).sum();
            ridge = RIDGE_SCALE * trace / r as f64;
            warn!("Gram matrix of {r}x{n} Φ is rank deficient; retrying with ridge {ridge:e}");
            for i in 0..r {
                gram.set(i, i, gram.get(i, i) + ridge);
            }
            cholesky(&gram).ok_or_else(|| {
                Error::Singular(format!("Cholesky of {r}x{r} Gram matrix failed even with ridge"))
            })?
        }
    };
    let mut z = phi.clone();
    chol_solve(&chol, &mut z);
    Ok(PinvState {
        rows: phi.clone(),
        gram_chol: chol,
        psi: z.transpose(),
        ridge,
    })
}

/// Extends `state` by one row using a bordered Cholesky update.
///
/// Falls back to a ridged full recompute when the new row is numerically
/// dependent on the existing ones, and to a plain recompute when `state`
/// already carries a ridge.
pub fn pinv_append_row(state: &PinvState, new_row: &[f64]) -> Result<PinvState> {
    let (r, n) = (state.r(), state.n());
    if new_row.len() != n {
        return Err(Error::dim(format!(
            "appended row has length {}, expected {n}",
            new_row.len()
        )));
    }
    if r + 1 > n {
        return Err(Error::dim(format!("cannot grow {r}x{n} Φ past n rows")));
    }
    let mut rows = state.rows.clone();
    rows.push_row(new_row)?;
    if state.ridge > 0.0 {
        return pinv_rows_impl(&rows, false);
    }

    // g = Φ a, l = L⁻¹ g
    let g: Vec<f64> = (0..r)
        .map(|i| dot(state.rows.row(i), new_row))
        .collect();
    let mut l = g.clone();
    for i in 0..r {
        let mut s = l[i];
        for k in 0..i {
            s -= state.gram_chol.get(i, k) * l[k];
        }
        l[i] = s / state.gram_chol.get(i, i);
    }
    let c = dot(new_row, new_row);
    let schur = c - dot(&l, &l);
    if !(schur > DEPENDENCE_TOL * c) {
        warn!("appended row {} is numerically dependent; recomputing with ridge", r + 1);
        return pinv_rows_impl(&rows, true);
    }

    let mut chol = Matrix::zeros(r + 1, r + 1);
    for i in 0..r {
        chol.data[i * (r + 1)..i * (r + 1) + r].copy_from_slice(state.gram_chol.row(i));
    }
    chol.data[r * (r + 1)..r * (r + 1) + r].copy_from_slice(&l);
    chol.set(r, r, schur.sqrt());

    // q = a − Ψ g is the component of a orthogonal to the current row space;
    // Ψ' = [Ψ − k bᵀ, k] with k = q/‖q‖² and b = Ψᵀ a.
    let psi = &state.psi;
    let mut q = new_row.to_vec();
    for (i, qi) in q.iter_mut().enumerate() {
        *qi -= dot(psi.row(i), &g);
    }
    let qq = dot(&q, &q);
    let k: Vec<f64> = q.iter().map(|v| v / qq).collect();
    let mut b = vec![0.0; r];
    for (i, &ai) in new_row.iter().enumerate() {
        for (bj, pij) in b.iter_mut().zip(psi.row(i)) {
            *bj += pij * ai;
        }
    }
    let mut new_psi = Matrix::zeros(n, r + 1);
    for i in 0..n {
        let dst = &mut new_psi.data[i * (r + 1)..(i + 1) * (r + 1)];
        for (j, d) in dst[..r].iter_mut().enumerate() {
            *d = psi.get(i, j) - k[i] * b[j];
        }
        dst[r] = k[i];
    }

    Ok(PinvState {
        rows,
        gram_chol: chol,
        psi: new_psi,
        ridge: 0.0,
    })
}

/// Pulls a gradient on `Ψ` (`n × r`) back to `Φ` (`r × n`) through
/// `Φ ↦ Φᵀ(ΦΦᵀ + λI)⁻¹`, with the ridge `λ` held constant.
///
/// With `G = ΦΦᵀ + λI` and `S = G⁻¹ Φ Ḡ G⁻¹`, the pullback is
/// `G⁻¹ Ḡᵀ − (S + Sᵀ) Φ`.
pub fn pinv_grad(state: &PinvState, grad_psi: &Matrix) -> Result<Matrix> {
    let (r, n) = (state.r(), state.n());
    if grad_psi.rows != n || grad_psi.cols != r {
        return Err(Error::dim(format!(
            "Ψ gradient is {}x{}, expected {n}x{r}",
            grad_psi.rows, grad_psi.cols
        )));
    }
    // G⁻¹ Ḡᵀ
    let mut direct = grad_psi.transpose();
    chol_solve(&state.gram_chol, &mut direct);

    // Sᵀ = G⁻¹ (Ḡᵀ Ψ)
    let mut st = Matrix::zeros(r, r);
    f64::gemm(
        r,
        n,
        r,
        1.0,
        &grad_psi.data,
        true,
        &state.psi.data,
        false,
        0.0,
        &mut st.data,
    );
    chol_solve(&state.gram_chol, &mut st);
    let mut sym = st.clone();
    for i in 0..r {
        for j in 0..r {
            sym.data[i * r + j] += st.data[j * r + i];
        }
    }
    f64::gemm(
        r,
        r,
        n,
        -1.0,
        &sym.data,
        false,
        &state.rows.data,
        false,
        1.0,
        &mut direct.data,
    );
    Ok(direct)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
