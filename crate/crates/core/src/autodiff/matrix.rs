//! Dense matrices of recorded scalars and the linear-algebra primitives the
//! shape functionals need, each with its reverse-mode adjoint rule.
//!
//! Symmetric-input primitives (`cholesky`, `sym_eig`) act on the symmetric part
//! `(A + Aᵀ)/2` of their argument, so the adjoint they report is symmetric and
//! consistent with perturbing a single entry.

use nalgebra::{DMatrix, DVector};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Relative eigenvalue gap below which `sym_eig` treats eigenvalues as one cluster.
pub const DEFAULT_DEGENERACY_GAP: f64 = 1e-8;

/// Row-major matrix of [`Var`]s living on one tape.
#[derive(Clone, Debug)]
pub struct VarMatrix<'t> {
    rows: usize,
    cols: usize,
    entries: Vec<Var<'t>>,
}

/// Eigenvalues (recorded, nondecreasing) and eigenvectors (values only).
#[derive(Clone, Debug)]
pub struct SymEig<'t> {
    pub eigenvalues: Vec<Var<'t>>,
    pub eigenvectors: DMatrix<f64>,
}

pub(crate) fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn accumulate(dst: &mut [f64], m: &DMatrix<f64>) {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..cols {
            dst[i * cols + j] += m[(i, j)];
        }
    }
}

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower Cholesky factor of a symmetric matrix, reporting the failing pivot.
pub fn cholesky_values(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let d = s.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut t = a[(i, j)];
            for k in 0..j {
                t -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = t / d;
        }
    }
    Ok(l)
}

/// Symmetric eigendecomposition sorted by nondecreasing eigenvalue.
pub fn sym_eig_values(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = nalgebra::SymmetricEigen::new(symmetric_part(a));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Groups of consecutive (sorted) eigenvalues closer than `gap * spectral_radius`.
pub fn eigen_clusters(values: &[f64], gap: f64) -> Vec<std::ops::Range<usize>> {
    let radius = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = gap * radius;
    let mut clusters = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || values[i] - values[i - 1] >= tol {
            clusters.push(start..i);
            start = i;
        }
    }
    clusters
}

impl<'t> VarMatrix<'t> {
    pub fn new(rows: usize, cols: usize, entries: Vec<Var<'t>>) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        assert_eq!(entries.len(), rows * cols, "entry count");
        Self {
            rows,
            cols,
            entries,
        }
    }

    /// Leaves on `tape` holding the entries of `m`.
    pub fn from_values(tape: &'t Tape, m: &DMatrix<f64>) -> Self {
        Self::new(m.nrows(), m.ncols(), tape.vars(&to_row_major(m)))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[Var<'t>] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> Var<'t> {
        self.entries[i * self.cols + j]
    }

    pub fn tape(&self) -> &'t Tape {
        self.entries[0].tape()
    }

    pub fn values(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).value())
    }

    pub fn transpose(&self) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                entries.push(self.get(i, j));
            }
        }
        Self::new(self.cols, self.rows, entries)
    }

    pub fn trace(&self) -> Var<'t> {
        let n = self.rows.min(self.cols);
        let mut t = self.get(0, 0);
        for i in 1..n {
            t = t + self.get(i, i);
        }
        t
    }

    fn require_square(&self, op: &'static str) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::Shape {
                op,
                detail: format!("expected square, got {}x{}", self.rows, self.cols),
            });
        }
        Ok(())
    }

    pub fn matmul(&self, other: &VarMatrix<'t>) -> Result<VarMatrix<'t>> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let a = self.values();
        let b = other.values();
        let c = &a * &b;
        let mut inputs = self.entries.clone();
        inputs.extend_from_slice(&other.entries);
        let (m, n) = (c.nrows(), c.ncols());
        let split = self.entries.len();
        let out = self.tape().block(
            "matmul",
            &inputs,
            &to_row_major(&c),
            Box::new(move |out_adj, in_adj| {
                let cbar = DMatrix::from_row_slice(m, n, out_adj);
                accumulate(&mut in_adj[..split], &(&cbar * b.transpose()));
                accumulate(&mut in_adj[split..], &(a.transpose() * &cbar));
            }),
        );
        Ok(VarMatrix::new(m, n, out))
    }

    pub fn inverse(&self) -> Result<VarMatrix<'t>> {
        self.require_square("inverse")?;
        let n = self.rows;
        let inv = self
            .values()
            .try_inverse()
            .ok_or(Error::Singular { op: "inverse" })?;
        let out = self.tape().block(
            "inverse",
            &self.entries,
            &to_row_major(&inv),
            Box::new(move |out_adj, in_adj| {
                let ybar = DMatrix::from_row_slice(n, n, out_adj);
                let it = inv.transpose();
                accumulate(in_adj, &(-(&it * ybar * &it)));
            }),
        );
        Ok(VarMatrix::new(n, n, out))
    }

    pub fn determinant(&self) -> Result<Var<'t>> {
        self.require_square("determinant")?;
        let a = self.values();
        let det = a.clone().lu().determinant();
        let cofactor_t = a.try_inverse().map(|inv| inv.transpose() * det);
        let out = self.tape().block(
            "determinant",
            &self.entries,
            &[det],
            Box::new(move |out_adj, in_adj| match &cofactor_t {
                Some(c) => accumulate(in_adj, &(c * out_adj[0])),
                None => in_adj.iter_mut().for_each(|g| *g = f64::NAN),
            }),
        );
        Ok(out[0])
    }

    /// Lower-triangular `L` with `L Lᵀ = sym(A)`.
    pub fn cholesky(&self) -> Result<VarMatrix<'t>> {
        self.require_square("cholesky")?;
        let n = self.rows;
        let l = cholesky_values(&symmetric_part(&self.values()))?;
        let out = self.tape().block(
            "cholesky",
            &self.entries,
            &to_row_major(&l),
            Box::new(move |out_adj, in_adj| {
                let lbar = DMatrix::from_row_slice(n, n, out_adj).lower_triangle();
                // P = Φ(Lᵀ L̄): lower triangle with halved diagonal
                let mut p = (l.transpose() * lbar).lower_triangle();
                for i in 0..n {
                    p[(i, i)] *= 0.5;
                }
                // G = L⁻ᵀ P L⁻¹
                let x = l.tr_solve_lower_triangular(&p).expect("triangular solve");
                let g = l
                    .tr_solve_lower_triangular(&x.transpose())
                    .expect("triangular solve")
                    .transpose();
                accumulate(in_adj, &symmetric_part(&g));
            }),
        );
        Ok(VarMatrix::new(n, n, out))
    }

    pub fn sym_eig(&self) -> Result<SymEig<'t>> {
        self.sym_eig_with_gap(DEFAULT_DEGENERACY_GAP)
    }

    /// Eigenvalues of `sym(A)`. Within a cluster of eigenvalues closer than
    /// `gap` (relative to the spectral radius) the adjoint differentiates the
    /// cluster sum, spreading the mean seed over the cluster's projector.
    pub fn sym_eig_with_gap(&self, gap: f64) -> Result<SymEig<'t>> {
        self.require_square("sym_eig")?;
        let n = self.rows;
        let (values, vectors) = sym_eig_values(&self.values());
        let clusters = eigen_clusters(&values, gap);
        if clusters.iter().any(|c| c.len() > 1) {
            self.tape().flag_degenerate_spectrum();
        }
        let v = vectors.clone();
        let out = self.tape().block(
            "sym_eig",
            &self.entries,
            &values,
            Box::new(move |out_adj, in_adj| {
                let mut abar = DMatrix::<f64>::zeros(n, n);
                for c in &clusters {
                    let seed = out_adj[c.clone()].iter().sum::<f64>() / c.len() as f64;
                    if seed == 0.0 {
                        continue;
                    }
                    for k in c.clone() {
                        let col = v.column(k);
                        abar.ger(seed, &col, &col, 1.0);
                    }
                }
                accumulate(in_adj, &abar);
            }),
        );
        Ok(SymEig {
            eigenvalues: out,
            eigenvectors: vectors,
        })
    }

    /// Singular values in nonincreasing order.
    pub fn singular_values(&self) -> Result<Vec<Var<'t>>> {
        let (m, n) = (self.rows, self.cols);
        let svd = nalgebra::SVD::new(self.values(), true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        let k = svd.singular_values.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let out = self.tape().block(
            "singular_values",
            &self.entries,
            &values,
            Box::new(move |out_adj, in_adj| {
                let mut abar = DMatrix::<f64>::zeros(m, n);
                for (slot, &i) in order.iter().enumerate() {
                    let s = out_adj[slot];
                    if s != 0.0 {
                        abar.ger(s, &u.column(i), &vt.row(i).transpose(), 1.0);
                    }
                }
                accumulate(in_adj, &abar);
            }),
        );
        Ok(out)
    }
}

/// Solution of `min |A x − b|²` for `A` with full column rank.
pub fn lstsq<'t>(a: &VarMatrix<'t>, b: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
    let (m, n) = (a.rows(), a.cols());
    if b.len() != m || m < n {
        return Err(Error::Shape {
            op: "lstsq",
            detail: format!("A is {m}x{n}, b has {} rows", b.len()),
        });
    }
    let av = a.values();
    let bv = DVector::from_iterator(m, b.iter().map(|v| v.value()));
    let qr = av.clone().qr();
    let r = qr.r();
    let dmax = (0..n).fold(0.0f64, |acc, i| acc.max(r[(i, i)].abs()));
    let rank = (0..n)
        .filter(|&i| r[(i, i)].abs() > 1e-13 * dmax)
        .count();
    if rank < n {
        return Err(Error::RankDeficient { rank, cols: n });
    }
    let qtb = qr.q().transpose() * &bv;
    let x = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::Singular { op: "lstsq" })?;
    let residual = &bv - &av * &x;
    let mut inputs = a.entries().to_vec();
    inputs.extend_from_slice(b);
    let xs = x.clone();
    let split = m * n;
    Ok(a.tape().block(
        "lstsq",
        &inputs,
        x.as_slice(),
        Box::new(move |out_adj, in_adj| {
            let xbar = DVector::from_column_slice(out_adj);
            // z = (AᵀA)⁻¹ x̄ via the R factor
            let w = r.tr_solve_upper_triangular(&xbar).expect("triangular solve");
            let z = r.solve_upper_triangular(&w).expect("triangular solve");
            let az = &av * &z;
            let abar = &residual * z.transpose() - &az * xs.transpose();
            accumulate(&mut in_adj[..split], &abar);
            for (g, v) in in_adj[split..].iter_mut().zip(az.iter()) {
                *g += v;
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check<F>(x0: &[f64], f: F, analytic: &[f64], h: f64, tol: f64)
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut x = x0.to_vec();
        let mut num = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + h;
            let fp = f(&x);
            x[i] = orig - h;
            let fm = f(&x);
            x[i] = orig;
            num.push((fp - fm) / (2.0 * h));
        }
        let err: f64 = num
            .iter()
            .zip(analytic)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        assert!(err / scale <= tol, "relative error {} > {tol}", err / scale);
    }

    #[test]
    fn determinant_gradient_at_identity() {
        let tape = Tape::new();
        let a = VarMatrix::from_values(&tape, &DMatrix::identity(2, 2));
        let det = a.determinant().unwrap();
        let g = tape.grad(det, a.entries()).unwrap();
        assert_eq!(g, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn cholesky_of_identity() {
        let tape = Tape::new();
        let a = VarMatrix::from_values(&tape, &DMatrix::identity(3, 3));
        let l = a.cholesky().unwrap();
        assert_eq!(l.values(), DMatrix::identity(3, 3));
    }

    #[test]
    fn cholesky_reports_pivot() {
        let tape = Tape::new();
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let a = VarMatrix::from_values(&tape, &m);
        match a.cholesky() {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sym_eig_of_diagonal() {
        let tape = Tape::new();
        let a = VarMatrix::from_values(&tape, &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])));
        let eig = a.sym_eig().unwrap();
        let vals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.value()).collect();
        assert_eq!(vals, vec![1.0, 2.0]);
        let g = tape.grad(eig.eigenvalues[0], a.entries()).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-14 && g[3].abs() < 1e-14);
        assert!(g[1].abs() < 1e-14 && g[2].abs() < 1e-14);
    }

    #[test]
    fn lstsq_two_by_one() {
        let tape = Tape::new();
        let a = VarMatrix::from_values(&tape, &DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        let b = tape.vars(&[0.0, 2.0]);
        let x = lstsq(&a, &b).unwrap();
        assert!((x[0].value() - 1.0).abs() < 1e-15);
        let mut inputs = a.entries().to_vec();
        inputs.extend_from_slice(&b);
        let g = tape.grad(x[0], &inputs).unwrap();
        let f = |p: &[f64]| {
            let (a0, a1, b0, b1) = (p[0], p[1], p[2], p[3]);
            (a0 * b0 + a1 * b1) / (a0 * a0 + a1 * a1)
        };
        fd_check(&[1.0, 1.0, 0.0, 2.0], f, &g, 1e-5, 1e-6);
    }
}
