//! First and second moments of the mode powers, their long-range spectral
//! structure, and the resulting intensity statistics.

use log::debug;
use serde::Serialize;

use crate::coupling::CouplingModel;
use crate::error::{Error, Result};
use crate::modes::ModeSet;
use crate::numerics::linalg::{conjugate_gradient, expm_action, krylov_expm_symmetric, lanczos_top};
use crate::numerics::ode::{dopri5, OdeOptions, OdeStats};
use crate::numerics::DenseMatrix;
use crate::real::Real;

/// Largest N for which `exp(A x)` is formed densely; above it the action on
/// `Q0` is computed directly.
pub const DENSE_EXPM_MAX_MODES: usize = 150;
/// Largest N for which the second-moment operator may be assembled densely.
pub const DENSE_SECOND_MOMENT_MAX_MODES: usize = 60;
const LANCZOS_MAX_ITER: usize = 400;
const LANCZOS_MAX_STORAGE: usize = 40_000_000;
const KRYLOV_MAX_DIM: usize = 120;
const KRYLOV_MAX_STORAGE: usize = 30_000_000;

/// Mean powers and packed symmetrised second moments at range `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentState<T> {
    pub x: T,
    pub q: Vec<T>,
    /// `S_jl` for `j <= l`, packed row by row: (0,0), (0,1), …, (0,N-1), (1,1), …
    pub s_upper: Vec<T>,
}

pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of `S_jl` in the packed upper triangle; the pair is reordered
/// if `j > l`.
#[inline]
pub fn packed_index(n: usize, j: usize, l: usize) -> usize {
    let (a, b) = if j <= l { (j, l) } else { (l, j) };
    a * n - a * a.saturating_sub(1) / 2 + (b - a)
}

fn check_inputs<T: Real>(c: &CouplingModel<T>, q0: &[T], x: T) -> Result<()> {
    if q0.len() != c.len() {
        return Err(Error::DimensionMismatch { expected: c.len(), got: q0.len() });
    }
    if !(x >= T::zero() && x.is_finite()) {
        return Err(Error::InvalidParameter("range must be finite and nonnegative".into()));
    }
    if q0.iter().any(|v| !(*v >= T::zero())) {
        return Err(Error::InvalidParameter("initial powers must be nonnegative".into()));
    }
    Ok(())
}

fn clamp_nonnegative<T: Real>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// `Q(x) = exp(A x) Q0`, clamped at zero.
pub fn propagate_q<T: Real>(c: &CouplingModel<T>, q0: &[T], x: T) -> Result<Vec<T>> {
    check_inputs(c, q0, x)?;
    if x == T::zero() {
        return Ok(q0.to_vec());
    }
    let n = c.len();
    let mut q = if n <= DENSE_EXPM_MAX_MODES {
        c.a_matrix.scaled(x).expm()?.matvec(q0)
    } else if c.a_matrix.is_symmetric(T::tol(1e-12)) {
        symmetric_expm_apply(&c.a_matrix, q0, x)?
    } else {
        let (shift, bound) = shift_and_bound(&c.a_matrix);
        expm_action(|v, out| out.copy_from_slice(&c.a_matrix.matvec(v)), q0, x, shift, bound)
    };
    clamp_nonnegative(&mut q);
    Ok(q)
}

/// `exp(x M) v` for symmetric `M` through its eigendecomposition.
fn symmetric_expm_apply<T: Real>(m: &DenseMatrix<T>, v: &[T], x: T) -> Result<Vec<T>> {
    let eig = m.symmetric_eigen()?;
    let n = v.len();
    let mut out = vec![T::zero(); n];
    for k in 0..n {
        let mut c = T::zero();
        for i in 0..n {
            c += eig.vectors[(i, k)] * v[i];
        }
        c *= (x * eig.values[k]).exp();
        for i in 0..n {
            out[i] += c * eig.vectors[(i, k)];
        }
    }
    Ok(out)
}

/// Diagonal shift centring the Gershgorin discs of `a`, and the induced
/// infinity-norm of the shifted matrix.
fn shift_and_bound<T: Real>(a: &DenseMatrix<T>) -> (T, T) {
    let n = a.rows();
    let diag = a.diagonal();
    let shift = diag.iter().fold(T::zero(), |s, d| s + *d) / T::of_usize(n.max(1));
    let mut bound = T::zero();
    for i in 0..n {
        let row: T = a.row(i).iter().enumerate().map(|(j, v)| if i == j { (*v - shift).abs() } else { v.abs() }).sum();
        bound = bound.max(row);
    }
    (shift, bound)
}

/// `S_jl(0) = (1 + 1_{j≠l}) Q0_j Q0_l`.
pub fn initial_second_moments<T: Real>(q0: &[T]) -> Vec<T> {
    let n = q0.len();
    let mut s = Vec::with_capacity(packed_len(n));
    for j in 0..n {
        for l in j..n {
            let f = if j == l { T::one() } else { T::of(2.0) };
            s.push(f * q0[j] * q0[l]);
        }
    }
    s
}

/// Matrix-free application of the second-moment operator `Θ - Ψ`.
///
/// With `R_jj = S_jj` and `R_jl = S_jl / 2` the system reads
/// `R' = ΓR + RΓ - ΛR - RΛ - 2(Γ∘R)_{offdiag} + 2 diag(Σ_{n≠j} Γ_jn R_jn)`,
/// which costs one N×N matrix product.
pub struct SecondMomentOperator<'a, T> {
    gamma: &'a DenseMatrix<T>,
    lambda: &'a [T],
    r: Vec<T>,
    gr: Vec<T>,
}

impl<'a, T: Real> SecondMomentOperator<'a, T> {
    pub fn new(gamma: &'a DenseMatrix<T>, lambda: &'a [T]) -> Self {
        let n = lambda.len();
        Self { gamma, lambda, r: vec![T::zero(); n * n], gr: vec![T::zero(); n * n] }
    }

    pub fn dim(&self) -> usize {
        packed_len(self.lambda.len())
    }

    pub fn apply(&mut self, s: &[T], out: &mut [T]) {
        let n = self.lambda.len();
        let half = T::of(0.5);
        let two = T::of(2.0);
        let mut k = 0;
        for j in 0..n {
            self.r[j * n + j] = s[k];
            k += 1;
            for l in (j + 1)..n {
                let v = s[k] * half;
                self.r[j * n + l] = v;
                self.r[l * n + j] = v;
                k += 1;
            }
        }
        // GR = Γ R (i-k-j order); R Γ = (Γ R)ᵀ since both are symmetric.
        let g = self.gamma.as_slice();
        self.gr.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..n {
            let out_row = &mut self.gr[i * n..(i + 1) * n];
            for m in 0..n {
                let gim = g[i * n + m];
                if gim == T::zero() {
                    continue;
                }
                let r_row = &self.r[m * n..(m + 1) * n];
                for (o, rv) in out_row.iter_mut().zip(r_row) {
                    *o += gim * *rv;
                }
            }
        }
        let mut k = 0;
        for j in 0..n {
            let mut cross = T::zero();
            for m in 0..n {
                if m != j {
                    cross += g[j * n + m] * self.r[j * n + m];
                }
            }
            let rjj = self.r[j * n + j];
            out[k] = two * self.gr[j * n + j] - two * self.lambda[j] * rjj + two * cross;
            k += 1;
            for l in (j + 1)..n {
                let rjl = self.r[j * n + l];
                let d = self.gr[j * n + l] + self.gr[l * n + j]
                    - (self.lambda[j] + self.lambda[l]) * rjl
                    - two * g[j * n + l] * rjl;
                out[k] = two * d;
                k += 1;
            }
        }
    }
}

/// Dense `Θ - Ψ` in the packed basis, assembled term by term from the
/// `S_jl` equations. Only for N up to [`DENSE_SECOND_MOMENT_MAX_MODES`].
pub fn second_moment_matrix<T: Real>(gamma: &DenseMatrix<T>, lambda: &[T]) -> Result<DenseMatrix<T>> {
    let n = lambda.len();
    if gamma.rows() != n || gamma.cols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: gamma.rows() });
    }
    if n > DENSE_SECOND_MOMENT_MAX_MODES {
        return Err(Error::InvalidParameter(format!(
            "dense second-moment operator limited to {DENSE_SECOND_MOMENT_MAX_MODES} modes, got {n}"
        )));
    }
    let m = packed_len(n);
    let two = T::of(2.0);
    let mut op = DenseMatrix::zeros(m, m);
    for j in 0..n {
        for l in j..n {
            let row = packed_index(n, j, l);
            op[(row, row)] -= lambda[j] + lambda[l];
            if j == l {
                for q in 0..n {
                    if q != j {
                        op[(row, row)] -= two * gamma[(j, q)];
                        op[(row, packed_index(n, j, q))] += two * gamma[(j, q)];
                    }
                }
            } else {
                for q in 0..n {
                    if q == j || q == l {
                        continue;
                    }
                    op[(row, packed_index(n, j, q))] += gamma[(l, q)];
                    op[(row, packed_index(n, q, l))] += gamma[(j, q)];
                    op[(row, row)] -= gamma[(l, q)] + gamma[(j, q)];
                }
                let g = gamma[(j, l)];
                op[(row, packed_index(n, j, j))] += two * g;
                op[(row, packed_index(n, l, l))] += two * g;
                op[(row, row)] -= T::of(4.0) * g;
            }
        }
    }
    Ok(op)
}

/// Integrator settings for the second-moment system, with the absolute
/// tolerance scaled to the initial data.
pub fn second_moment_ode_options<T: Real>(s0: &[T]) -> OdeOptions<T> {
    let scale = s0.iter().fold(T::zero(), |m, v| m.max(v.abs())).max(T::min_positive_value());
    let rtol = T::tol(1e-10);
    OdeOptions { rtol, atol: rtol * T::of(1e-4) * scale, ..OdeOptions::default() }
}

/// Symmetrised second moments at range `x`. The operator is symmetric in
/// the packed basis, so its exponential is applied matrix-free by Lanczos.
pub fn propagate_s<T: Real>(c: &CouplingModel<T>, q0: &[T], x: T) -> Result<Vec<T>> {
    check_inputs(c, q0, x)?;
    let s0 = initial_second_moments(q0);
    if x == T::zero() {
        return Ok(s0);
    }
    let mut op = SecondMomentOperator::new(&c.gamma, &c.lambda);
    let max_dim = (KRYLOV_MAX_STORAGE / s0.len().max(1)).clamp(10, KRYLOV_MAX_DIM);
    let (mut s, stats) = krylov_expm_symmetric(|v, out| op.apply(v, out), &s0, x, T::tol(1e-10), max_dim)?;
    debug!("second moments: {} operator applications in {} sub-steps", stats.applications, stats.substeps);
    clamp_diagonal(&mut s, c.len());
    Ok(s)
}

/// Same as [`propagate_s`] with an explicit Runge–Kutta integrator.
pub fn propagate_s_with<T: Real>(
    c: &CouplingModel<T>,
    q0: &[T],
    x: T,
    opts: &OdeOptions<T>,
) -> Result<(Vec<T>, OdeStats)> {
    check_inputs(c, q0, x)?;
    let s0 = initial_second_moments(q0);
    let mut op = SecondMomentOperator::new(&c.gamma, &c.lambda);
    let (mut s, stats) = dopri5(|y, dy| op.apply(y, dy), &s0, x, opts)?;
    clamp_diagonal(&mut s, c.len());
    Ok((s, stats))
}

/// Same as [`propagate_s`] through the dense matrix exponential of `Θ - Ψ`.
pub fn propagate_s_dense<T: Real>(c: &CouplingModel<T>, q0: &[T], x: T) -> Result<Vec<T>> {
    check_inputs(c, q0, x)?;
    let s0 = initial_second_moments(q0);
    if x == T::zero() {
        return Ok(s0);
    }
    let op = second_moment_matrix(&c.gamma, &c.lambda)?;
    let mut s = op.scaled(x).expm()?.matvec(&s0);
    clamp_diagonal(&mut s, c.len());
    Ok(s)
}

fn clamp_diagonal<T: Real>(s: &mut [T], n: usize) {
    for j in 0..n {
        let k = packed_index(n, j, j);
        if s[k] < T::zero() {
            s[k] = T::zero();
        }
    }
}

/// First and second moments at range `x`.
pub fn propagate<T: Real>(c: &CouplingModel<T>, q0: &[T], x: T) -> Result<MomentState<T>> {
    let q = propagate_q(c, q0, x)?;
    let s_upper = if c.len() <= DENSE_SECOND_MOMENT_MAX_MODES.min(20) {
        propagate_s_dense(c, q0, x)?
    } else {
        propagate_s(c, q0, x)?
    };
    Ok(MomentState { x, q, s_upper })
}

/// Long-range decay structure of the first and second moments.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralSummary<T> {
    /// Decay rate of the mean powers; `-lambda` is the top eigenvalue of A.
    pub lambda: T,
    pub v: Vec<T>,
    /// Decay rate of the second moments; `-mu` is the top eigenvalue of Θ - Ψ.
    pub mu: T,
    /// Packed like [`MomentState::s_upper`].
    pub w: Vec<T>,
    pub c_v: T,
    pub c_w: T,
    /// Set when the top eigenvalue of A is not separated from the next one.
    pub degenerate_first: bool,
    pub degenerate_second: bool,
    /// False if the iterative second-moment eigensolver hit its budget.
    pub second_converged: bool,
}

fn normalise_sign<T: Real>(v: &mut [T]) {
    let s: T = v.iter().copied().sum();
    if s < T::zero() {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let n = v.iter().fold(T::zero(), |a, x| a + *x * *x).sqrt();
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn degenerate<T: Real>(top: T, next: T, scale: T) -> bool {
    next.is_finite() && (top - next) <= T::tol(1e-10) * scale.max(T::min_positive_value())
}

pub fn spectral_summary<T: Real>(c: &CouplingModel<T>, q0: &[T]) -> Result<SpectralSummary<T>> {
    check_inputs(c, q0, T::zero())?;
    let n = c.len();
    if n == 0 {
        return Err(Error::InvalidParameter("spectral summary needs at least one mode".into()));
    }
    let eig = c.a_matrix.symmetric_eigen()?;
    let top = eig.values[n - 1];
    let scale_a = c.a_matrix.max_abs();
    let degenerate_first = n > 1 && degenerate(top, eig.values[n - 2], scale_a);
    let mut v = eig.vector(n - 1);
    normalise_sign(&mut v);
    let c_v = v.iter().zip(q0).fold(T::zero(), |s, (a, b)| s + *a * *b);

    let m = packed_len(n);
    let (mu_top, mu_next, mut w, second_converged) = if n <= DENSE_SECOND_MOMENT_MAX_MODES.min(40) {
        let op = second_moment_matrix(&c.gamma, &c.lambda)?;
        let e = op.symmetric_eigen()?;
        let next = if m > 1 { e.values[m - 2] } else { T::neg_infinity() };
        (e.values[m - 1], next, e.vector(m - 1), true)
    } else {
        let mut op = SecondMomentOperator::new(&c.gamma, &c.lambda);
        let iters = LANCZOS_MAX_ITER.min(LANCZOS_MAX_STORAGE / m).max(2);
        let top = lanczos_top(|x, out| op.apply(x, out), &vec![T::one(); m], iters, T::tol(1e-12))?;
        (top.value, top.next_value, top.vector, top.converged)
    };
    let degenerate_second = m > 1 && degenerate(mu_top, mu_next, T::of(4.0) * scale_a);
    normalise_sign(&mut w);
    let s0 = initial_second_moments(q0);
    let c_w = w.iter().zip(&s0).fold(T::zero(), |s, (a, b)| s + *a * *b);
    Ok(SpectralSummary {
        lambda: -top,
        v,
        mu: -mu_top,
        w,
        c_v,
        c_w,
        degenerate_first,
        degenerate_second,
        second_converged,
    })
}

/// Coefficients of the small-dissipation expansions
/// `λ(δ) = δλ⁽¹⁾ + δ²λ⁽²⁾ + O(δ³)` and `μ(δ) = δμ⁽¹⁾ + δ²μ⁽²⁾ + O(δ³)`
/// for `Λ = δΛ⁽¹⁾`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakDissipation<T> {
    pub lambda1: T,
    pub lambda2: T,
    pub mu1: T,
    pub mu2: T,
}

impl<T: Real> WeakDissipation<T> {
    pub fn lambda_at(&self, delta: T) -> T {
        delta * self.lambda1 + delta * delta * self.lambda2
    }

    pub fn mu_at(&self, delta: T) -> T {
        delta * self.mu1 + delta * delta * self.mu2
    }
}

fn coupling_graph_connected<T: Real>(gamma: &DenseMatrix<T>) -> bool {
    let n = gamma.rows();
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(j) = stack.pop() {
        for l in 0..n {
            if !seen[l] && l != j && gamma[(j, l)] > T::zero() {
                seen[l] = true;
                stack.push(l);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Second-order weak-dissipation coefficients.
///
/// `V⁽¹⁾` solves `Γ V⁽¹⁾ = (Φ⁽¹⁾ - λ⁽¹⁾) V⁽⁰⁾` with `V⁽¹⁾ ⟂ V⁽⁰⁾`, and the
/// second-order rate is `λ⁽²⁾ = V⁽¹⁾ᵀ Γ V⁽¹⁾ = V⁽⁰⁾ᵀ Φ⁽¹⁾ V⁽¹⁾`; likewise
/// for `μ⁽²⁾` with Θ.
pub fn weak_dissipation_expansion<T: Real>(gamma: &DenseMatrix<T>, lambda1: &[T]) -> Result<WeakDissipation<T>> {
    let n = lambda1.len();
    if gamma.rows() != n || gamma.cols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: gamma.rows() });
    }
    if n == 1 {
        return Ok(WeakDissipation { lambda1: lambda1[0], lambda2: T::zero(), mu1: T::of(2.0) * lambda1[0], mu2: T::zero() });
    }
    if !coupling_graph_connected(gamma) {
        return Err(Error::SingularSystem);
    }
    let nf = T::of_usize(n);
    let l1 = lambda1.iter().copied().sum::<T>() / nf;

    // (Γ - V0 V0ᵀ) x = r has the orthogonal solution of Γ x = r for r ⟂ V0.
    let v0 = T::one() / nf.sqrt();
    let shifted = DenseMatrix::from_fn(n, n, |i, j| gamma[(i, j)] - v0 * v0);
    let rhs: Vec<T> = lambda1.iter().map(|l| (*l - l1) * v0).collect();
    let v1 = shifted.solve(&rhs)?;
    let gv1 = gamma.matvec(&v1);
    let lambda2 = v1.iter().zip(&gv1).fold(T::zero(), |s, (a, b)| s + *a * *b);

    let m = packed_len(n);
    let w0 = T::one() / T::of_usize(m).sqrt();
    let zeros = vec![T::zero(); n];
    let mut theta = SecondMomentOperator::new(gamma, &zeros);
    let psi: Vec<T> = {
        let mut d = Vec::with_capacity(m);
        for j in 0..n {
            for l in j..n {
                d.push(lambda1[j] + lambda1[l]);
            }
        }
        d
    };
    let mu1 = T::of(2.0) * l1;
    let rhs: Vec<T> = psi.iter().map(|p| (*p - mu1) * w0).collect();
    // -(Θ - W0 W0ᵀ) is positive definite on an irreducible coupling graph.
    let mut buf = vec![T::zero(); m];
    let (w1, relres) = conjugate_gradient(
        |x, out| {
            theta.apply(x, &mut buf);
            let proj = x.iter().fold(T::zero(), |s, v| s + *v) * w0;
            for i in 0..m {
                out[i] = -(buf[i] - proj * w0);
            }
        },
        &rhs.iter().map(|v| -*v).collect::<Vec<_>>(),
        T::tol(1e-14),
        20 * m + 100,
    );
    if !(relres <= T::tol(1e-10)) {
        return Err(Error::SingularSystem);
    }
    theta.apply(&w1, &mut buf);
    let mu2 = w1.iter().zip(&buf).fold(T::zero(), |s, (a, b)| s + *a * *b);
    Ok(WeakDissipation { lambda1: l1, lambda2, mu1, mu2 })
}

/// `(E|p|², E|p|⁴)` at depth `z`.
pub fn intensity_moments<T: Real>(modes: &ModeSet<T>, state: &MomentState<T>, z: T) -> Result<(T, T)> {
    let n = modes.len();
    if state.q.len() != n || state.s_upper.len() != packed_len(n) {
        return Err(Error::DimensionMismatch { expected: n, got: state.q.len() });
    }
    let w: Vec<T> = (0..n)
        .map(|j| {
            let p = modes.phi_unchecked(j, z);
            p * p / modes.beta()[j]
        })
        .collect();
    Ok(weighted_intensity_moments(&w, state))
}

/// `(m2, m4)` for per-mode intensity weights `w_j` (at a depth,
/// `w_j = φ_j(z)²/β_j`) under random relative phases.
pub fn weighted_intensity_moments<T: Real>(w: &[T], state: &MomentState<T>) -> (T, T) {
    let n = w.len();
    let m2 = w.iter().zip(&state.q).fold(T::zero(), |s, (a, b)| s + *a * *b);
    let mut m4 = T::zero();
    let two = T::of(2.0);
    let mut k = 0;
    for j in 0..n {
        m4 += w[j] * w[j] * state.s_upper[k];
        k += 1;
        for l in (j + 1)..n {
            m4 += two * w[j] * w[l] * state.s_upper[k];
            k += 1;
        }
    }
    (m2, m4)
}

/// Mean over `depths` of `(E|p|⁴ - (E|p|²)²) / (E|p|²)²`.
pub fn scintillation_index<T: Real>(modes: &ModeSet<T>, state: &MomentState<T>, depths: &[T]) -> Result<T> {
    if depths.is_empty() {
        return Err(Error::InvalidParameter("no depths given".into()));
    }
    let z_b = modes.env().z_b;
    let mut acc = T::zero();
    for &z in depths {
        if !(z > T::zero() && z < z_b) {
            return Err(Error::InvalidParameter("depths must lie in (0, z_b)".into()));
        }
        let (m2, m4) = intensity_moments(modes, state, z)?;
        if !(m2 > T::zero()) {
            return Err(Error::InvalidParameter(format!("mean intensity vanishes at depth {z}")));
        }
        acc += (m4 - m2 * m2) / (m2 * m2);
    }
    Ok(acc / T::of_usize(depths.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_model(n: usize, g: f64, lambda: &[f64]) -> CouplingModel<f64> {
        let gamma = DenseMatrix::from_fn(n, n, |i, j| if i == j { -(n as f64 - 1.0) * g } else { g });
        CouplingModel::from_parts(gamma, lambda.to_vec(), vec![0.0; n])
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, dissipative: bool) -> CouplingModel<f64> {
        let mut gamma = DenseMatrix::zeros(n, n);
        for j in 0..n {
            for l in (j + 1)..n {
                let v = rng.random_range(0.01..1.0);
                gamma[(j, l)] = v;
                gamma[(l, j)] = v;
            }
        }
        for j in 0..n {
            let s: f64 = (0..n).filter(|l| *l != j).map(|l| gamma[(j, l)]).sum();
            gamma[(j, j)] = -s;
        }
        let lambda = (0..n).map(|_| if dissipative { rng.random_range(0.0..0.5) } else { 0.0 }).collect();
        CouplingModel::from_parts(gamma, lambda, vec![0.0; n])
    }

    #[test]
    fn packed_index_enumerates_upper_triangle() {
        let n = 7;
        let mut k = 0;
        for j in 0..n {
            for l in j..n {
                assert_eq!(packed_index(n, j, l), k);
                assert_eq!(packed_index(n, l, j), k);
                k += 1;
            }
        }
        assert_eq!(k, packed_len(n));
    }

    #[test]
    fn matrix_free_operator_matches_dense_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = random_model(&mut rng, 6, true);
        let dense = second_moment_matrix(&c.gamma, &c.lambda).unwrap();
        let m = packed_len(6);
        for i in 0..m {
            for j in 0..m {
                assert!((dense[(i, j)] - dense[(j, i)]).abs() < 1e-14);
            }
        }
        let mut op = SecondMomentOperator::new(&c.gamma, &c.lambda);
        let s: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; m];
        op.apply(&s, &mut out);
        let expect = dense.matvec(&s);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_range_and_scalar_case() {
        let c = uniform_model(1, 0.0, &[0.3]);
        assert_eq!(propagate_q(&c, &[2.0], 0.0).unwrap(), vec![2.0]);
        let q = propagate_q(&c, &[2.0], 4.0).unwrap();
        assert!((q[0] - 2.0 * (-1.2f64).exp()).abs() < 1e-14);
        let s = propagate_s(&c, &[2.0], 4.0).unwrap();
        assert!((s[0] - 4.0 * (-2.4f64).exp()).abs() < 1e-9);
        assert!(matches!(propagate_q(&c, &[1.0, 2.0], 1.0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn equipartition_and_conservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_model(&mut rng, 5, false);
        let q0 = [1.0, 0.0, 0.5, 0.0, 0.25];
        let total: f64 = q0.iter().sum();
        let q = propagate_q(&c, &q0, 200.0).unwrap();
        for v in &q {
            assert!((v - total / 5.0).abs() < 1e-9);
        }
        let s = propagate_s(&c, &q0, 50.0).unwrap();
        let sum: f64 = s.iter().sum();
        assert!((sum - total * total).abs() < 1e-9 * total * total);
        let limit = total * total * 2.0 / 30.0;
        let s = propagate_s(&c, &q0, 400.0).unwrap();
        for v in &s {
            assert!((v - limit).abs() < 1e-8 * limit);
        }
    }

    #[test]
    fn dense_and_matrix_free_second_moments_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = random_model(&mut rng, 8, true);
        let q0: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let a = propagate_s(&c, &q0, 3.0).unwrap();
        let b = propagate_s_dense(&c, &q0, 3.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-8 * y.abs().max(1e-12), "{x} vs {y}");
        }
    }

    #[test]
    fn krylov_dense_and_runge_kutta_second_moments_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = random_model(&mut rng, 25, true);
        let q0: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();
        let a = propagate_s(&c, &q0, 40.0).unwrap();
        let b = propagate_s_dense(&c, &q0, 40.0).unwrap();
        let s0 = initial_second_moments(&q0);
        let (r, _) = propagate_s_with(&c, &q0, 5.0, &second_moment_ode_options(&s0)).unwrap();
        let k = propagate_s(&c, &q0, 5.0).unwrap();
        let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in k.iter().zip(&r) {
            assert!((x - y).abs() <= 1e-8 * scale, "{x} vs {y}");
        }
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-7 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn large_symmetric_mean_propagation_matches_pade() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = DENSE_EXPM_MAX_MODES + 10;
        let c = random_model(&mut rng, n, true);
        let q0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let a = propagate_q(&c, &q0, 0.7).unwrap();
        let b = c.a_matrix.scaled(0.7).expm().unwrap().matvec(&q0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-10 * y.abs().max(1e-12), "{x} vs {y}");
        }
    }

    #[test]
    fn spectral_summary_without_dissipation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4;
        let c = random_model(&mut rng, n, false);
        let q0 = [1.0, 2.0, 0.0, 1.0];
        let sum = spectral_summary(&c, &q0).unwrap();
        assert!(sum.lambda.abs() < 1e-12);
        assert!(sum.mu.abs() < 1e-12);
        for v in &sum.v {
            assert!((v - 0.5).abs() < 1e-10);
        }
        let cn = (2.0 / (n * (n + 1)) as f64).sqrt();
        for w in &sum.w {
            assert!((w - cn).abs() < 1e-10);
        }
        assert!((sum.c_v - 2.0).abs() < 1e-10);
        assert!((sum.c_w - 16.0 * cn).abs() < 1e-9);
    }

    #[test]
    fn decay_rate_is_weighted_dissipation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let c = random_model(&mut rng, 5, true);
            let sum = spectral_summary(&c, &[1.0; 5]).unwrap();
            let num: f64 = c.lambda.iter().zip(&sum.v).map(|(l, v)| l * v).sum();
            let den: f64 = sum.v.iter().sum();
            assert!((sum.lambda - num / den).abs() < 1e-10);
            assert!(sum.lambda >= 0.0);
            assert!(sum.v.iter().all(|v| *v >= 0.0));
            assert!(sum.mu - 2.0 * sum.lambda <= 1e-10 * c.a_matrix.max_abs());
        }
    }

    #[test]
    fn lanczos_route_matches_dense_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let c = random_model(&mut rng, 12, true);
        let op = second_moment_matrix(&c.gamma, &c.lambda).unwrap();
        let e = op.symmetric_eigen().unwrap();
        let m = packed_len(12);
        let mut mf = SecondMomentOperator::new(&c.gamma, &c.lambda);
        let top = lanczos_top(|x, out| mf.apply(x, out), &vec![1.0; m], 200, 1e-12).unwrap();
        assert!((top.value - e.values[m - 1]).abs() < 1e-9);
    }

    #[test]
    fn weak_dissipation_closed_forms() {
        let n = 4;
        let g = 0.01;
        let l1 = [1e-3, 2e-3, 3e-3, 4e-3];
        let c = uniform_model(n, g, &[0.0; 4]);
        let wd = weak_dissipation_expansion(&c.gamma, &l1).unwrap();
        let mean = 2.5e-3;
        let var: f64 = l1.iter().map(|l| (l - mean) * (l - mean)).sum();
        let nf = n as f64;
        let lambda2 = -var / (g * nf * nf);
        let mu2 = -2.0 * (nf + 2.0) / (nf * nf * (nf + 1.0) * g) * var;
        assert!((wd.lambda1 - mean).abs() < 1e-15);
        assert!((wd.mu1 - 2.0 * mean).abs() < 1e-15);
        assert!((wd.lambda2 - lambda2).abs() < 1e-10 * lambda2.abs());
        assert!((wd.mu2 - mu2).abs() < 1e-10 * mu2.abs());

        let flat = weak_dissipation_expansion(&c.gamma, &[2e-3; 4]).unwrap();
        assert!(flat.lambda2.abs() < 1e-18 && flat.mu2.abs() < 1e-18);
    }

    #[test]
    fn reducible_coupling_is_singular() {
        let mut gamma = DenseMatrix::zeros(4, 4);
        gamma[(0, 1)] = 1.0;
        gamma[(1, 0)] = 1.0;
        gamma[(0, 0)] = -1.0;
        gamma[(1, 1)] = -1.0;
        gamma[(2, 3)] = 1.0;
        gamma[(3, 2)] = 1.0;
        gamma[(2, 2)] = -1.0;
        gamma[(3, 3)] = -1.0;
        assert!(matches!(weak_dissipation_expansion(&gamma, &[1.0, 2.0, 3.0, 4.0]), Err(Error::SingularSystem)));
    }
}
