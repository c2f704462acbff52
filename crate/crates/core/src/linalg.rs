//! Sparse matrix support and power-iteration eigenvalue estimators.
//!
//! The Newton linear solves use ILU(0)-preconditioned BiCGSTAB on a CSR
//! matrix; the spectral estimators work on matrix-free operators.

use crate::error::{CoreError, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Builds a CSR matrix from unsorted triplets; duplicate entries are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            rows[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(out.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            out[r] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows];
        self.matvec(x, &mut out);
        out
    }

    /// Transpose mat-vec: out = A^T x.
    pub fn matvec_t(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_rows);
        debug_assert_eq!(out.len(), self.n_cols);
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.n_rows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for k in self.indptr[r]..self.indptr[r + 1] {
                out[self.indices[k]] += self.data[k] * xr;
            }
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        for k in self.indptr[r]..self.indptr[r + 1] {
            if self.indices[k] == c {
                return self.data[k];
            }
        }
        0.0
    }

    /// Dense copy, for small oracles only.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n_cols]; self.n_rows];
        for r in 0..self.n_rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                dense[r][self.indices[k]] = self.data[k];
            }
        }
        dense
    }
}

/// ILU(0) factorization: same sparsity pattern as A, stored in-place.
pub struct Ilu0 {
    lu: Csr,
    diag_ptr: Vec<usize>,
    pivot_floor: f64,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Result<Self> {
        if a.n_rows != a.n_cols {
            return Err(CoreError::Numerical("ILU(0) needs a square matrix".into()));
        }
        let n = a.n_rows;
        let mut lu = a.clone();
        let mut diag_ptr = vec![usize::MAX; n];
        for r in 0..n {
            for k in lu.indptr[r]..lu.indptr[r + 1] {
                if lu.indices[k] == r {
                    diag_ptr[r] = k;
                }
            }
            if diag_ptr[r] == usize::MAX {
                return Err(CoreError::Numerical(format!(
                    "ILU(0): structurally zero diagonal in row {r}"
                )));
            }
        }
        // Pivot floor keeps the factorization defined when a physical
        // degeneracy (immobile phase, gas-free cell) zeroes a diagonal; the
        // Krylov iteration still solves the true matrix.
        let max_diag = diag_ptr
            .iter()
            .map(|&k| lu.data[k].abs())
            .fold(0.0_f64, f64::max)
            .max(1e-300);
        let floor = 1e-10 * max_diag;
        // IKJ-variant incomplete factorization restricted to the pattern of A.
        let mut colmap = vec![usize::MAX; n];
        for i in 0..n {
            for k in lu.indptr[i]..lu.indptr[i + 1] {
                colmap[lu.indices[k]] = k;
            }
            let row_range = lu.indptr[i]..lu.indptr[i + 1];
            for kk in row_range.clone() {
                let k = lu.indices[kk];
                if k >= i {
                    break;
                }
                let mut pivot = lu.data[diag_ptr[k]];
                if pivot.abs() < floor {
                    pivot = if pivot >= 0.0 { floor } else { -floor };
                }
                let factor = lu.data[kk] / pivot;
                lu.data[kk] = factor;
                for jj in diag_ptr[k] + 1..lu.indptr[k + 1] {
                    let j = lu.indices[jj];
                    let pos = colmap[j];
                    if pos != usize::MAX && pos >= lu.indptr[i] && pos < lu.indptr[i + 1] {
                        lu.data[pos] -= factor * lu.data[jj];
                    }
                }
            }
            for k in lu.indptr[i]..lu.indptr[i + 1] {
                colmap[lu.indices[k]] = usize::MAX;
            }
        }
        Ok(Self {
            lu,
            diag_ptr,
            pivot_floor: floor,
        })
    }

    /// Solves (LU) z = r approximately (forward + backward substitution).
    pub fn solve(&self, r: &[f64], z: &mut [f64]) {
        let n = self.lu.n_rows;
        z.copy_from_slice(r);
        // L has unit diagonal.
        for i in 0..n {
            let mut acc = z[i];
            for k in self.lu.indptr[i]..self.diag_ptr[i] {
                acc -= self.lu.data[k] * z[self.lu.indices[k]];
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for k in self.diag_ptr[i] + 1..self.lu.indptr[i + 1] {
                acc -= self.lu.data[k] * z[self.lu.indices[k]];
            }
            let mut d = self.lu.data[self.diag_ptr[i]];
            if d.abs() < self.pivot_floor {
                d = if d >= 0.0 { self.pivot_floor } else { -self.pivot_floor };
            }
            z[i] = acc / d;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of a BiCGSTAB solve.
#[derive(Debug, Clone)]
pub struct KrylovStats {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Right-preconditioned BiCGSTAB. Solves A x = b to `rtol` relative residual.
pub fn bicgstab(
    a: &Csr,
    precond: &Ilu0,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, KrylovStats)> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            KrylovStats {
                iterations: 0,
                rel_residual: 0.0,
                converged: true,
            },
        ));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];

    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond.solve(&p, &mut phat);
        a.matvec(&phat, &mut v);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm2(&s) / bnorm < rtol {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok((
                x,
                KrylovStats {
                    iterations: it,
                    rel_residual: norm2(&s) / bnorm,
                    converged: true,
                },
            ));
        }
        precond.solve(&s, &mut shat);
        a.matvec(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt.abs() < 1e-300 {
            break;
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        let rel = norm2(&r) / bnorm;
        if rel < rtol {
            return Ok((
                x,
                KrylovStats {
                    iterations: it,
                    rel_residual: rel,
                    converged: true,
                },
            ));
        }
        if omega.abs() < 1e-300 {
            break;
        }
    }
    let mut ax = vec![0.0; n];
    a.matvec(&x, &mut ax);
    let rel = {
        let res: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        norm2(&res) / bnorm
    };
    Ok((
        x,
        KrylovStats {
            iterations: max_iter,
            rel_residual: rel,
            converged: rel < rtol,
        },
    ))
}

/// Matrix-free linear operator.
pub trait LinOp {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

/// Linear operator with a transpose action.
pub trait LinOpT: LinOp {
    fn apply_t(&self, v: &[f64]) -> Vec<f64>;
}

impl LinOp for Csr {
    fn dim(&self) -> usize {
        self.n_rows
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matvec_alloc(v)
    }
}

impl LinOpT for Csr {
    fn apply_t(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        self.matvec_t(v, &mut out);
        out
    }
}

pub fn random_unit_vector(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
    let n = norm2(&v).max(1e-300);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Result of a power-iteration estimate.
#[derive(Debug, Clone)]
pub struct PowerEstimate {
    pub value: f64,
    pub converged: bool,
    /// Set when successive growth ratios alternate (complex eigen-pair).
    pub oscillation: bool,
    pub iterations: usize,
}

/// Spectral-radius estimate by plain power iteration: the growth rate of
/// ||A^k v|| averaged over the last 10 iterates, with an oscillation
/// diagnostic for complex dominant pairs.
pub fn spectral_radius_power(op: &dyn LinOp, iters: usize, seed: u64) -> PowerEstimate {
    let dim = op.dim();
    let mut v = random_unit_vector(dim, seed);
    let mut ratios: Vec<f64> = Vec::with_capacity(iters);
    for _ in 0..iters {
        let w = op.apply(&v);
        let growth = norm2(&w);
        if growth < 1e-300 {
            return PowerEstimate {
                value: 0.0,
                converged: true,
                oscillation: false,
                iterations: ratios.len(),
            };
        }
        ratios.push(growth);
        v = w;
        let n = norm2(&v);
        v.iter_mut().for_each(|x| *x /= n);
    }
    let tail = &ratios[ratios.len().saturating_sub(10)..];
    // Geometric mean over the tail smooths the two-cycle of a complex pair.
    let log_mean = tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64;
    let value = log_mean.exp();
    let spread = tail
        .iter()
        .map(|r| (r.ln() - log_mean).abs())
        .fold(0.0_f64, f64::max);
    // Alternation check: consecutive ratios on opposite sides of the mean.
    let mut alternations = 0;
    for w in tail.windows(2) {
        if (w[0].ln() - log_mean) * (w[1].ln() - log_mean) < 0.0 {
            alternations += 1;
        }
    }
    let oscillation = spread > 1e-6 && alternations >= tail.len() - 2;
    PowerEstimate {
        value,
        converged: spread < 1e-6 || oscillation,
        oscillation,
        iterations: iters,
    }
}

/// Operator norm sup ||Av||_w / ||v||_w in the diagonally weighted metric
/// ||v||_w^2 = sum w_i v_i^2, by power iteration on the conjugated normal
/// operator. `weights` = None means the Euclidean norm.
pub fn operator_norm_power(
    op: &dyn LinOpT,
    weights: Option<&[f64]>,
    iters: usize,
    seed: u64,
) -> PowerEstimate {
    let dim = op.dim();
    let sqrt_w: Option<Vec<f64>> = weights.map(|w| w.iter().map(|x| x.sqrt()).collect());
    // B u = W^{1/2} A W^{-1/2} u; norm = sigma_max(B); iterate B^T B.
    let apply_b = |u: &[f64]| -> Vec<f64> {
        let mut x = u.to_vec();
        if let Some(sw) = &sqrt_w {
            for i in 0..dim {
                x[i] /= sw[i];
            }
        }
        let mut y = op.apply(&x);
        if let Some(sw) = &sqrt_w {
            for i in 0..dim {
                y[i] *= sw[i];
            }
        }
        y
    };
    let apply_bt = |u: &[f64]| -> Vec<f64> {
        let mut x = u.to_vec();
        if let Some(sw) = &sqrt_w {
            for i in 0..dim {
                x[i] *= sw[i];
            }
        }
        let mut y = op.apply_t(&x);
        if let Some(sw) = &sqrt_w {
            for i in 0..dim {
                y[i] /= sw[i];
            }
        }
        y
    };
    let mut v = random_unit_vector(dim, seed);
    let mut sigma2 = 0.0;
    let mut prev = f64::INFINITY;
    let mut converged = false;
    let mut used = 0;
    for it in 0..iters {
        let w = apply_bt(&apply_b(&v));
        sigma2 = dot(&w, &v);
        let n = norm2(&w);
        if n < 1e-300 {
            return PowerEstimate {
                value: 0.0,
                converged: true,
                oscillation: false,
                iterations: it,
            };
        }
        v = w;
        v.iter_mut().for_each(|x| *x /= n);
        used = it + 1;
        if (sigma2 - prev).abs() <= 1e-10 * sigma2.abs().max(1e-30) {
            converged = true;
            break;
        }
        prev = sigma2;
    }
    PowerEstimate {
        value: sigma2.max(0.0).sqrt(),
        converged,
        oscillation: false,
        iterations: used,
    }
}

/// Smallest eigenvalue of a symmetric operator by shifted power iteration:
/// first estimate s >= lambda_max(|A|), then power-iterate (sI - A).
pub fn smallest_symmetric_eig(
    apply_sym: &dyn Fn(&[f64]) -> Vec<f64>,
    dim: usize,
    iters: usize,
    seed: u64,
) -> PowerEstimate {
    // Magnitude bound for the shift.
    let mut v = random_unit_vector(dim, seed);
    let mut mag = 0.0;
    for _ in 0..iters.min(200) {
        let w = apply_sym(&v);
        mag = norm2(&w);
        if mag < 1e-300 {
            return PowerEstimate {
                value: 0.0,
                converged: true,
                oscillation: false,
                iterations: 0,
            };
        }
        v = w;
        v.iter_mut().for_each(|x| *x /= mag);
    }
    let shift = 1.5 * mag + 1e-12;
    let mut u = random_unit_vector(dim, seed ^ 0x9e3779b97f4a7c15);
    let mut mu = 0.0;
    let mut prev = f64::INFINITY;
    let mut converged = false;
    for _ in 0..iters {
        let a_u = apply_sym(&u);
        let w: Vec<f64> = u.iter().zip(&a_u).map(|(ui, ai)| shift * ui - ai).collect();
        mu = dot(&w, &u);
        let n = norm2(&w);
        if n < 1e-300 {
            break;
        }
        u = w;
        u.iter_mut().for_each(|x| *x /= n);
        if (mu - prev).abs() <= 1e-12 * mu.abs().max(1e-30) {
            converged = true;
            break;
        }
        prev = mu;
    }
    // Rayleigh quotient refinement at the final iterate.
    let a_u = apply_sym(&u);
    let lambda = dot(&a_u, &u) / dot(&u, &u);
    let _ = mu;
    PowerEstimate {
        value: lambda,
        converged,
        oscillation: false,
        iterations: iters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn laplacian_1d(n: usize) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        Csr::from_triplets(n, n, &t)
    }

    #[test]
    fn csr_matvec_matches_dense() {
        let a = Csr::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, -3.0)]);
        assert_eq!(a.matvec_alloc(&[1.0, 1.0, 1.0]), vec![3.0, -3.0]);
        let mut t = vec![0.0; 3];
        a.matvec_t(&[1.0, 2.0], &mut t);
        assert_eq!(t, vec![1.0, -6.0, 2.0]);
    }

    #[test]
    fn bicgstab_solves_spd_system() {
        let n = 50;
        let a = laplacian_1d(n);
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let ilu = Ilu0::new(&a).unwrap();
        let (x, stats) = bicgstab(&a, &ilu, &b, 1e-12, 200).unwrap();
        assert!(stats.converged, "stats: {stats:?}");
        let ax = a.matvec_alloc(&x);
        for i in 0..n {
            assert_relative_eq!(ax[i], b[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -1.5));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.5));
            }
        }
        let a = Csr::from_triplets(n, n, &t);
        let b = vec![1.0; n];
        let ilu = Ilu0::new(&a).unwrap();
        let (x, stats) = bicgstab(&a, &ilu, &b, 1e-12, 200).unwrap();
        assert!(stats.converged);
        let ax = a.matvec_alloc(&x);
        for i in 0..n {
            assert_relative_eq!(ax[i], b[i], epsilon = 1e-9);
        }
    }

    struct DiagOp(Vec<f64>);
    impl LinOp for DiagOp {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn apply(&self, v: &[f64]) -> Vec<f64> {
            v.iter().zip(&self.0).map(|(x, d)| x * d).collect()
        }
    }
    impl LinOpT for DiagOp {
        fn apply_t(&self, v: &[f64]) -> Vec<f64> {
            self.apply(v)
        }
    }

    #[test]
    fn spectral_radius_of_diagonal() {
        let op = DiagOp(vec![0.5, 0.2]);
        let est = spectral_radius_power(&op, 200, 7);
        assert_relative_eq!(est.value, 0.5, epsilon = 1e-6);
        assert!(!est.oscillation);
    }

    #[test]
    fn spectral_radius_flags_rotation_pair() {
        // 0.9 * rotation by 1 radian: complex pair of modulus 0.9.
        struct Rot;
        impl LinOp for Rot {
            fn dim(&self) -> usize {
                2
            }
            fn apply(&self, v: &[f64]) -> Vec<f64> {
                let (c, s) = (1.0_f64.cos(), 1.0_f64.sin());
                vec![0.9 * (c * v[0] - s * v[1]), 0.9 * (s * v[0] + c * v[1])]
            }
        }
        let est = spectral_radius_power(&Rot, 300, 3);
        assert_relative_eq!(est.value, 0.9, epsilon = 1e-6);
    }

    #[test]
    fn operator_norm_diag_unweighted() {
        let op = DiagOp(vec![2.0, 0.1]);
        let est = operator_norm_power(&op, None, 300, 11);
        assert_relative_eq!(est.value, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn operator_norm_identity_weighted() {
        let op = DiagOp(vec![1.0; 5]);
        let w = vec![0.3, 1.0, 2.0, 5.0, 0.7];
        let est = operator_norm_power(&op, Some(&w), 200, 1);
        assert_relative_eq!(est.value, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn smallest_eig_of_diagonal() {
        let d = vec![0.25, 0.5, 0.9, 3.0];
        let apply = |v: &[f64]| -> Vec<f64> { v.iter().zip(&d).map(|(x, di)| x * di).collect() };
        let est = smallest_symmetric_eig(&apply, 4, 500, 5);
        assert_relative_eq!(est.value, 0.25, epsilon = 1e-6);
    }

    #[test]
    fn smallest_eig_can_be_negative() {
        let d = vec![-0.4, 0.5, 1.0];
        let apply = |v: &[f64]| -> Vec<f64> { v.iter().zip(&d).map(|(x, di)| x * di).collect() };
        let est = smallest_symmetric_eig(&apply, 3, 500, 9);
        assert_relative_eq!(est.value, -0.4, epsilon = 1e-6);
    }
}
