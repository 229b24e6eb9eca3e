//! Dense small-dimension linear algebra, weighted norms, and projections
//! onto a safe set `{x | h(x) >= 0}` and its boundary.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// State vector in scenario coordinates.
pub type State = DVector<f64>;

/// Shared numerical tolerance for boundary membership: `|h(x)| <= BOUNDARY_TOL`
/// classifies `x` as a boundary point everywhere in the library. Cone
/// classification, projections and field evaluation all use this constant so
/// the discontinuity is handled consistently.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// How far outside the safe set an evaluation point may be before it is
/// rejected. Integrators overshoot the boundary by rounding-level amounts;
/// `h(x) in [-OUTSIDE_TOL, 0)` is treated as boundary.
pub const OUTSIDE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not symmetric (relative asymmetry {asym:.3e})")]
    NotSymmetric { asym: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("gradient vanished at candidate point (norm {norm:.3e})")]
    VanishingGradient { norm: f64 },
    #[error("projection root finder failed to converge: {detail}")]
    RootFindFailed { detail: String },
}

/// Symmetric positive-definite matrix with cached Cholesky and eigen data.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    m: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m
    }
}

impl SpdMatrix {
    /// Validates symmetry (to 1e-12 relative) and positive definiteness
    /// (Cholesky must succeed), then caches the factorization and a full
    /// symmetric eigendecomposition.
    pub fn new(m: DMatrix<f64>) -> Result<Self, GeometryError> {
        if m.nrows() != m.ncols() {
            return Err(GeometryError::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax() / scale;
        if asym > 1e-12 {
            return Err(GeometryError::NotSymmetric { asym });
        }
        // Symmetrize so the cached factorizations see an exactly symmetric matrix.
        let sym = (&m + m.transpose()) * 0.5;
        let chol = sym
            .clone()
            .cholesky()
            .ok_or(GeometryError::NotPositiveDefinite)?;
        let eig = sym.clone().symmetric_eigen();
        if eig.eigenvalues.min() <= 0.0 {
            return Err(GeometryError::NotPositiveDefinite);
        }
        Ok(Self {
            m: sym,
            chol_l: chol.l(),
            eigvals: eig.eigenvalues,
            eigvecs: eig.eigenvectors,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is SPD")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GeometryError> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(GeometryError::DimensionMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn min_eig(&self) -> f64 {
        self.eigvals.min()
    }

    pub fn max_eig(&self) -> f64 {
        self.eigvals.max()
    }

    /// Eigenpairs `(lambda_i, v_i)` of the matrix, unordered.
    pub fn eigenpairs(&self) -> impl Iterator<Item = (f64, DVector<f64>)> + '_ {
        (0..self.dim()).map(|i| (self.eigvals[i], self.eigvecs.column(i).into_owned()))
    }

    /// Eigenvector of the largest eigenvalue.
    pub fn max_eigvec(&self) -> DVector<f64> {
        let i = self.eigvals.imax();
        self.eigvecs.column(i).into_owned()
    }

    pub fn apply(&self, v: &State) -> State {
        &self.m * v
    }

    /// Solves `M v = b` via the cached Cholesky factor.
    pub fn solve(&self, b: &State) -> Result<State, GeometryError> {
        if b.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                got: b.len(),
            });
        }
        let y = self
            .chol_l
            .solve_lower_triangular(b)
            .ok_or(GeometryError::NotPositiveDefinite)?;
        self.chol_l
            .transpose()
            .solve_upper_triangular(&y)
            .ok_or(GeometryError::NotPositiveDefinite)
    }

    /// Weighted inner product `x^T M y`.
    pub fn inner(&self, x: &State, y: &State) -> Result<f64, GeometryError> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                got: x.len().max(y.len()),
            });
        }
        Ok((x.transpose() * &self.m * y)[(0, 0)])
    }

    /// Weighted norm `sqrt(x^T M x)`.
    pub fn norm(&self, x: &State) -> Result<f64, GeometryError> {
        Ok(self.inner(x, x)?.max(0.0).sqrt())
    }

    /// Inverse-weighted quadratic form `v^T M^{-1} v`.
    pub fn inv_quad(&self, v: &State) -> Result<f64, GeometryError> {
        let w = self.solve(v)?;
        Ok(v.dot(&w))
    }

    /// Lower Cholesky factor `L` with `M = L L^T`.
    pub fn chol_l(&self) -> &DMatrix<f64> {
        &self.chol_l
    }
}

/// Convenience wrapper matching the operation vocabulary used elsewhere.
pub fn weighted_inner(x: &State, y: &State, p: &SpdMatrix) -> Result<f64, GeometryError> {
    p.inner(x, y)
}

/// Solves `P v = b` for SPD `P`.
pub fn solve_spd(p: &SpdMatrix, b: &State) -> Result<State, GeometryError> {
    p.solve(b)
}

/// Normal or tangent-generating cone description at a point of the safe set.
#[derive(Debug, Clone, PartialEq)]
pub enum ConeRep {
    /// Interior point: the cone is `{0}`.
    Zero,
    /// Boundary point: the cone is the ray `{lambda * g | lambda <= 0}` where
    /// `g` is the barrier gradient at the point.
    Ray(State),
}

/// A scalar level-set function `h` with gradient access, defining the safe
/// set `{x | h(x) >= 0}`. Implemented by scenario barriers; projections only
/// need this surface.
pub trait LevelSet {
    fn value(&self, x: &State) -> Result<f64, GeometryError>;
    fn gradient(&self, x: &State) -> Result<State, GeometryError>;
    /// Tolerance below which the gradient is considered vanishing.
    fn gradient_tol(&self) -> f64;
    /// For quadratic barriers `h(x) = c - x^T Q x`, exposes `(c, Q)` so
    /// projections can use the exact secular-equation path.
    fn quadratic(&self) -> Option<(f64, &SpdMatrix)>;
}

/// Euclidean projection of `x` onto the boundary `{h = 0}`.
///
/// Quadratic barriers go through the 1-D secular equation in the eigenbasis
/// of `Q` (bracketing bisection plus Newton polish). Other barriers use a
/// damped Newton iteration on the joint KKT system, seeded from a radial
/// line search; the residual is checked before returning.
pub fn proj_boundary_euclidean<B: LevelSet + ?Sized>(
    x: &State,
    barrier: &B,
) -> Result<State, GeometryError> {
    if let Some((c, q)) = barrier.quadratic() {
        return secular_boundary_projection(x, c, q, None);
    }
    newton_kkt_projection(x, None, barrier)
}

/// Projection of `x` onto the safe set `{h >= 0}` in the `P`-metric.
/// Returns `x` unchanged when it is already feasible.
pub fn proj_set_weighted<B: LevelSet + ?Sized>(
    x: &State,
    p: &SpdMatrix,
    barrier: &B,
) -> Result<State, GeometryError> {
    if barrier.value(x)? >= 0.0 {
        return Ok(x.clone());
    }
    if let Some((c, q)) = barrier.quadratic() {
        // Transform to u = L^T y so the P-metric becomes Euclidean, project
        // onto the transformed ellipsoid, and map back.
        let l = p.chol_l();
        let lt = l.transpose();
        let x_t = &lt * x;
        let l_inv_q = l
            .solve_lower_triangular(q.matrix())
            .ok_or(GeometryError::NotPositiveDefinite)?;
        // Q~ = L^{-1} Q L^{-T}, computed as (L^{-1} (L^{-1} Q)^T)^T.
        let q_t = l
            .solve_lower_triangular(&l_inv_q.transpose())
            .ok_or(GeometryError::NotPositiveDefinite)?
            .transpose();
        let q_t = SpdMatrix::new((&q_t + q_t.transpose()) * 0.5)?;
        let u = secular_boundary_projection(&x_t, c, &q_t, Some(Side::Outside))?;
        return lt
            .solve_upper_triangular(&u)
            .ok_or(GeometryError::NotPositiveDefinite);
    }
    newton_kkt_projection(x, Some(p), barrier)
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Outside,
}

/// Closest point on the ellipsoid boundary `{y^T Q y = c}` to `x`, in the
/// Euclidean metric. Stationarity gives `y = (I + mu Q)^{-1} x`; the scalar
/// `mu` solves the secular equation `y(mu)^T Q y(mu) = c`, which is strictly
/// decreasing in `mu` on `(-1/lambda_max(Q), inf)`.
fn secular_boundary_projection(
    x: &State,
    c: f64,
    q: &SpdMatrix,
    expect: Option<Side>,
) -> Result<State, GeometryError> {
    let n = x.len();
    if q.dim() != n {
        return Err(GeometryError::DimensionMismatch {
            expected: q.dim(),
            got: n,
        });
    }
    let lam_max = q.max_eig();
    // Coordinates in the eigenbasis of Q.
    let evecs: Vec<DVector<f64>> = q.eigenpairs().map(|(_, v)| v).collect();
    let evals: Vec<f64> = q.eigenpairs().map(|(l, _)| l).collect();
    let z: Vec<f64> = evecs.iter().map(|v| v.dot(x)).collect();

    let g = |mu: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let w = z[i] / (1.0 + mu * evals[i]);
            s += evals[i] * w * w;
        }
        s - c
    };
    let g_prime = |mu: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let d = 1.0 + mu * evals[i];
            s += evals[i] * evals[i] * z[i] * z[i] / (d * d * d);
        }
        -2.0 * s
    };
    let reconstruct = |mu: f64| -> State {
        let mut y = DVector::zeros(n);
        for i in 0..n {
            y += &evecs[i] * (z[i] / (1.0 + mu * evals[i]));
        }
        y
    };

    let g0 = g(0.0);
    if g0.abs() <= 1e-12 * c.max(1.0) {
        return Ok(x.clone()); // already on the boundary
    }
    if expect == Some(Side::Outside) && g0 < 0.0 {
        return Err(GeometryError::RootFindFailed {
            detail: "point expected outside the set is inside".into(),
        });
    }

    let (mut lo, mut hi) = if g0 > 0.0 {
        // x outside: shrink toward the origin, mu* > 0.
        let mut hi = 1.0 / q.min_eig();
        let mut iters = 0;
        while g(hi) > 0.0 {
            hi *= 2.0;
            iters += 1;
            if iters > 200 {
                return Err(GeometryError::RootFindFailed {
                    detail: "no upper bracket for outside projection".into(),
                });
            }
        }
        (0.0, hi)
    } else {
        // x strictly inside: grow outward, mu* in (-1/lambda_max, 0).
        let lo = -(1.0 - 1e-9) / lam_max;
        if g(lo) <= 0.0 {
            // Degenerate secular case: x has (numerically) no component along
            // the top eigenspace. Fix mu = -1/lambda_max and put the residual
            // mass on a top eigendirection.
            return degenerate_projection(&evals, &evecs, &z, c, lam_max);
        }
        (lo, 0.0)
    };

    for _ in 0..120 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut mu = 0.5 * (lo + hi);
    // Newton polish inside the bracket.
    for _ in 0..8 {
        let gm = g(mu);
        let gp = g_prime(mu);
        if gp == 0.0 {
            break;
        }
        let next = mu - gm / gp;
        if next > lo && next < hi {
            mu = next;
        } else {
            break;
        }
    }
    let y = reconstruct(mu);
    let resid = g(mu).abs();
    if resid > 1e-7 * c.max(1.0) {
        return Err(GeometryError::RootFindFailed {
            detail: format!("secular residual {resid:.3e}"),
        });
    }
    Ok(y)
}

fn degenerate_projection(
    evals: &[f64],
    evecs: &[DVector<f64>],
    z: &[f64],
    c: f64,
    lam_max: f64,
) -> Result<State, GeometryError> {
    let n = evals.len();
    let mut y = DVector::zeros(n);
    let mut used = c;
    let mut top_idx = None;
    for i in 0..n {
        if evals[i] >= lam_max * (1.0 - 1e-9) {
            if top_idx.is_none() {
                top_idx = Some(i);
            }
            continue;
        }
        let w = z[i] / (1.0 - evals[i] / lam_max);
        y += &evecs[i] * w;
        used -= evals[i] * w * w;
    }
    let i = top_idx.ok_or_else(|| GeometryError::RootFindFailed {
        detail: "no top eigendirection in degenerate projection".into(),
    })?;
    if used < 0.0 {
        return Err(GeometryError::RootFindFailed {
            detail: "degenerate projection has no boundary solution".into(),
        });
    }
    let t = (used / lam_max).sqrt();
    let sign = if z[i] < 0.0 { -1.0 } else { 1.0 };
    y += &evecs[i] * (sign * t);
    Ok(y)
}

/// Damped Newton on the joint KKT system for level-set projections, with
/// finite-difference gradient Jacobians. Best effort for non-quadratic
/// barriers; the residual is verified before the point is accepted.
fn newton_kkt_projection<B: LevelSet + ?Sized>(
    x: &State,
    metric: Option<&SpdMatrix>,
    barrier: &B,
) -> Result<State, GeometryError> {
    let n = x.len();
    let h_x = barrier.value(x)?;
    if h_x.abs() <= BOUNDARY_TOL {
        return Ok(x.clone());
    }
    let grad_x = barrier.gradient(x)?;
    let gnorm = grad_x.norm();
    if gnorm <= barrier.gradient_tol() {
        return Err(GeometryError::VanishingGradient { norm: gnorm });
    }

    // Newton converges to *a* KKT point, and distance-to-boundary problems
    // have several (near-side, far-side, saddle). Run it from a boundary
    // crossing along each of several directions and keep the closest valid
    // solution instead of trusting one basin.
    let mut seed_dirs: Vec<State> = vec![&grad_x * (-(h_x.signum()) / gnorm)];
    for k in 0..n {
        let mut e = State::zeros(n);
        e[k] = 1.0;
        seed_dirs.push(e.clone());
        seed_dirs.push(-e);
    }
    if x.norm() > 1e-9 {
        seed_dirs.push(-x / x.norm());
    }
    let dist = |y: &State| -> f64 {
        match metric {
            None => (y - x).norm(),
            Some(p) => p.norm(&(y - x)).unwrap_or(f64::INFINITY),
        }
    };
    let mut best: Option<State> = None;
    for dir in &seed_dirs {
        let Some(seed) = boundary_crossing(x, dir, h_x, barrier)? else {
            continue;
        };
        if let Some(y) = newton_kkt_solve(x, seed, metric, barrier)? {
            let better = best
                .as_ref()
                .map(|b| dist(&y) < dist(b))
                .unwrap_or(true);
            if better {
                best = Some(y);
            }
        }
    }
    best.ok_or_else(|| GeometryError::RootFindFailed {
        detail: "no seed direction produced a valid KKT point".into(),
    })
}

/// First sign change of the barrier along `x + t dir`, bisected to the
/// boundary; `None` when the ray never crosses.
fn boundary_crossing<B: LevelSet + ?Sized>(
    x: &State,
    dir: &State,
    h_x: f64,
    barrier: &B,
) -> Result<Option<State>, GeometryError> {
    let mut t_lo = 0.0_f64;
    let mut t_hi = (h_x.abs() / barrier.gradient(x)?.norm()).max(1e-6);
    let mut iters = 0;
    while barrier.value(&(x + dir * t_hi))?.signum() == h_x.signum() {
        t_lo = t_hi;
        t_hi *= 2.0;
        iters += 1;
        if iters > 60 {
            return Ok(None);
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (t_lo + t_hi);
        if barrier.value(&(x + dir * mid))?.signum() == h_x.signum() {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    Ok(Some(x + dir * (0.5 * (t_lo + t_hi))))
}

/// Damped Newton on the joint KKT system from one seed; `None` when it
/// stalls above the acceptance residual.
fn newton_kkt_solve<B: LevelSet + ?Sized>(
    x: &State,
    seed: State,
    metric: Option<&SpdMatrix>,
    barrier: &B,
) -> Result<Option<State>, GeometryError> {
    let n = x.len();
    let mut y = seed;
    let mut lambda = {
        let g_y = barrier.gradient(&y)?;
        let res = match metric {
            None => &y - x,
            Some(p) => p.apply(&(&y - x)),
        };
        res.dot(&g_y) / g_y.dot(&g_y)
    };

    let residual = |y: &State, lambda: f64| -> Result<DVector<f64>, GeometryError> {
        let g_y = barrier.gradient(y)?;
        let stat = match metric {
            None => y - x - &g_y * lambda,
            Some(p) => p.apply(&(y - x)) - &g_y * lambda,
        };
        let mut r = DVector::zeros(n + 1);
        r.rows_mut(0, n).copy_from(&stat);
        r[n] = barrier.value(y)?;
        Ok(r)
    };

    let mut r = residual(&y, lambda)?;
    for _ in 0..100 {
        if r.norm() <= 1e-11 * (1.0 + x.norm()) {
            break;
        }
        // Assemble the (n+1)x(n+1) KKT Jacobian with a finite-difference
        // Jacobian of the gradient map.
        let g_y = barrier.gradient(&y)?;
        let step = 1e-6 * (1.0 + y.norm());
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        for j in 0..n {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += step;
            ym[j] -= step;
            let col = (barrier.gradient(&yp)? - barrier.gradient(&ym)?) / (2.0 * step);
            for i in 0..n {
                let base = match metric {
                    None => {
                        if i == j {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Some(p) => p.matrix()[(i, j)],
                };
                jac[(i, j)] = base - lambda * col[i];
            }
            jac[(n, j)] = g_y[j];
        }
        for i in 0..n {
            jac[(i, n)] = -g_y[i];
        }
        let delta = jac
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| GeometryError::RootFindFailed {
                detail: "singular KKT Jacobian".into(),
            })?;
        // Backtracking on the residual norm.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let y_new = &y + delta.rows(0, n) * alpha;
            let l_new = lambda + alpha * delta[n];
            if let Ok(r_new) = residual(&y_new, l_new) {
                if r_new.norm() < r.norm() {
                    y = y_new;
                    lambda = l_new;
                    r = r_new;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if r.norm() > 1e-9 * (1.0 + x.norm()) {
        return Ok(None);
    }
    Ok(Some(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    pub(crate) fn g_matrix() -> SpdMatrix {
        SpdMatrix::from_rows(&[vec![0.625, 0.125], vec![0.125, 2.625]]).unwrap()
    }

    struct QuadBarrier {
        c: f64,
        q: SpdMatrix,
    }

    impl LevelSet for QuadBarrier {
        fn value(&self, x: &State) -> Result<f64, GeometryError> {
            Ok(self.c - self.q.inner(x, x)?)
        }
        fn gradient(&self, x: &State) -> Result<State, GeometryError> {
            Ok(self.q.apply(x) * -2.0)
        }
        fn gradient_tol(&self) -> f64 {
            1e-8
        }
        fn quadratic(&self) -> Option<(f64, &SpdMatrix)> {
            Some((self.c, &self.q))
        }
    }

    /// Same barrier but hiding the quadratic structure, to exercise the
    /// Newton-KKT path against the secular path.
    struct OpaqueBarrier(QuadBarrier);

    impl LevelSet for OpaqueBarrier {
        fn value(&self, x: &State) -> Result<f64, GeometryError> {
            self.0.value(x)
        }
        fn gradient(&self, x: &State) -> Result<State, GeometryError> {
            self.0.gradient(x)
        }
        fn gradient_tol(&self) -> f64 {
            self.0.gradient_tol()
        }
        fn quadratic(&self) -> Option<(f64, &SpdMatrix)> {
            None
        }
    }

    fn ellipse_barrier() -> QuadBarrier {
        QuadBarrier {
            c: 9.0,
            q: SpdMatrix::from_rows(&[vec![3.0, 2.0], vec![2.0, 2.0]]).unwrap(),
        }
    }

    fn unit_disc() -> QuadBarrier {
        QuadBarrier {
            c: 1.0,
            q: SpdMatrix::identity(2),
        }
    }

    #[test]
    fn weighted_inner_identity_orthogonal() {
        let p = SpdMatrix::identity(2);
        let v = weighted_inner(&dvector![1.0, 0.0], &dvector![0.0, 1.0], &p).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn weighted_inner_g_matrix() {
        let g = g_matrix();
        let e1 = dvector![1.0, 0.0];
        assert!((weighted_inner(&e1, &e1, &g).unwrap() - 0.625).abs() < 1e-15);
        let ones = dvector![1.0, 1.0];
        // direct matrix arithmetic: 0.625 + 0.125 + 0.125 + 2.625
        assert!((weighted_inner(&ones, &ones, &g).unwrap() - 3.5).abs() < 1e-14);
    }

    #[test]
    fn weighted_inner_symmetry_and_dim_error() {
        let g = g_matrix();
        let x = dvector![0.3, -1.2];
        let y = dvector![2.0, 0.7];
        let a = weighted_inner(&x, &y, &g).unwrap();
        let b = weighted_inner(&y, &x, &g).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!(weighted_inner(&dvector![1.0], &y, &g).is_err());
    }

    #[test]
    fn solve_spd_examples() {
        let id = SpdMatrix::identity(2);
        let v = solve_spd(&id, &dvector![3.0, 4.0]).unwrap();
        assert_eq!(v, dvector![3.0, 4.0]);

        let d = SpdMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = solve_spd(&d, &dvector![3.0, 1.0]).unwrap();
        assert!((v - dvector![1.0, 1.0]).norm() < 1e-14);

        // 2x2 inverse oracle: det(G) = 1.625.
        let g = g_matrix();
        let v = solve_spd(&g, &dvector![1.0, 0.0]).unwrap();
        assert!((v[0] - 2.625 / 1.625).abs() < 1e-12);
        assert!((v[1] - (-0.125 / 1.625)).abs() < 1e-12);
        let back = g.apply(&v);
        assert!((back - dvector![1.0, 0.0]).norm() <= 1e-10);
    }

    #[test]
    fn spd_rejects_bad_matrices() {
        assert!(matches!(
            SpdMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]),
            Err(GeometryError::NotSymmetric { .. })
        ));
        assert!(matches!(
            SpdMatrix::from_rows(&[vec![1.0, 3.0], vec![3.0, 1.0]]),
            Err(GeometryError::NotPositiveDefinite)
        ));
    }

    #[test]
    fn spd_eigs_match_direct_solve() {
        let q = ellipse_barrier().q;
        // lambda = (5 +- sqrt(17)) / 2
        let s17 = 17.0_f64.sqrt();
        assert!((q.min_eig() - (5.0 - s17) / 2.0).abs() < 1e-10);
        assert!((q.max_eig() - (5.0 + s17) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn boundary_projection_fixed_point() {
        let b = unit_disc();
        let x = dvector![1.0, 0.0];
        let y = proj_boundary_euclidean(&x, &b).unwrap();
        assert!((y - x).norm() < 1e-12);
    }

    #[test]
    fn boundary_projection_radial_disc() {
        let b = unit_disc();
        let y = proj_boundary_euclidean(&dvector![0.5, 0.0], &b).unwrap();
        assert!((y - dvector![1.0, 0.0]).norm() < 1e-9);
    }

    #[test]
    fn boundary_projection_center_degenerate() {
        // From the ellipse center the closest boundary point lies along the
        // max-eigenvalue direction of Q; verify against a dense sampling oracle.
        let b = ellipse_barrier();
        let y = proj_boundary_euclidean(&dvector![0.0, 0.0], &b).unwrap();
        assert!((b.value(&y).unwrap()).abs() <= 1e-9);
        let best = brute_force_boundary_distance(&b, &dvector![0.0, 0.0], 100_000);
        assert!(y.norm() <= best + 1e-6);
        // direction check: y parallel to the top eigenvector
        let vmax = b.q.max_eigvec();
        let cosang = y.dot(&vmax).abs() / y.norm();
        assert!((cosang - 1.0).abs() < 1e-8);
    }

    fn brute_force_boundary_distance(b: &QuadBarrier, x: &State, samples: usize) -> f64 {
        let mut best = f64::INFINITY;
        for k in 0..samples {
            let th = 2.0 * std::f64::consts::PI * (k as f64) / (samples as f64);
            let u = dvector![th.cos(), th.sin()];
            let r = (b.c / b.q.inner(&u, &u).unwrap()).sqrt();
            let p = u * r;
            best = best.min((&p - x).norm());
        }
        best
    }

    #[test]
    fn boundary_projection_matches_sampling_oracle() {
        let b = ellipse_barrier();
        let pts = [
            dvector![1.0, -0.5],
            dvector![-1.0, 2.0],
            dvector![4.0, 0.0],
            dvector![0.3, 0.1],
        ];
        for x in pts {
            let y = proj_boundary_euclidean(&x, &b).unwrap();
            assert!(b.value(&y).unwrap().abs() <= 1e-9, "boundary membership");
            // stationarity: x - y parallel to grad h(y)
            let d = &x - &y;
            if d.norm() > 1e-12 {
                let g = b.gradient(&y).unwrap();
                let sinang = (d[0] * g[1] - d[1] * g[0]).abs() / (d.norm() * g.norm());
                assert!(sinang < 1e-7, "stationarity violated: {sinang}");
            }
            let best = brute_force_boundary_distance(&b, &x, 100_000);
            assert!((&x - &y).norm() <= best + 1e-6);
        }
    }

    #[test]
    fn boundary_projection_idempotent() {
        let b = ellipse_barrier();
        let x = dvector![1.3, -0.4];
        let y = proj_boundary_euclidean(&x, &b).unwrap();
        let y2 = proj_boundary_euclidean(&y, &b).unwrap();
        assert!((y - y2).norm() <= 1e-9);
    }

    #[test]
    fn set_projection_interior_fixed_point() {
        let b = unit_disc();
        let p = SpdMatrix::identity(2);
        let x = dvector![0.2, 0.3];
        assert_eq!(proj_set_weighted(&x, &p, &b).unwrap(), x);
    }

    #[test]
    fn set_projection_radial_disc() {
        let b = unit_disc();
        let p = SpdMatrix::identity(2);
        let y = proj_set_weighted(&dvector![2.0, 0.0], &p, &b).unwrap();
        assert!((y - dvector![1.0, 0.0]).norm() < 1e-9);
    }

    #[test]
    fn set_projection_weighted_matches_sampling_oracle() {
        let b = ellipse_barrier();
        let g = g_matrix();
        let x = dvector![4.0, 0.0];
        let y = proj_set_weighted(&x, &g, &b).unwrap();
        assert!(b.value(&y).unwrap().abs() <= 1e-8);
        // dense boundary sampling in the G-metric
        let mut best = f64::INFINITY;
        let mut best_p = y.clone();
        for k in 0..200_000 {
            let th = 2.0 * std::f64::consts::PI * (k as f64) / 200_000.0;
            let u = dvector![th.cos(), th.sin()];
            let r = (b.c / b.q.inner(&u, &u).unwrap()).sqrt();
            let p = u * r;
            let d = g.norm(&(&p - &x)).unwrap();
            if d < best {
                best = d;
                best_p = p;
            }
        }
        assert!(g.norm(&(&y - &x)).unwrap() <= best + 1e-6);
        assert!((y - best_p).norm() < 1e-3);
    }

    #[test]
    fn newton_kkt_matches_secular_path() {
        let b = ellipse_barrier();
        let opaque = OpaqueBarrier(ellipse_barrier());
        for x in [dvector![0.7, -0.9], dvector![3.5, 1.0], dvector![-1.0, 2.0]] {
            let secular = proj_boundary_euclidean(&x, &b).unwrap();
            let newton = proj_boundary_euclidean(&x, &opaque).unwrap();
            assert!(
                (secular - newton).norm() < 1e-7,
                "paths disagree at {x:?}"
            );
        }
        let g = g_matrix();
        let x = dvector![4.0, 0.0];
        let secular = proj_set_weighted(&x, &g, &b).unwrap();
        let newton = proj_set_weighted(&x, &g, &opaque).unwrap();
        assert!((secular - newton).norm() < 1e-7);
    }

    #[test]
    fn eigen_sandwich_property() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let g = g_matrix();
        for _ in 0..500 {
            let x = dvector![rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0];
            let q = weighted_inner(&x, &x, &g).unwrap();
            let n2 = x.norm_squared();
            assert!(q >= g.min_eig() * n2 - 1e-10);
            assert!(q <= g.max_eig() * n2 + 1e-10);
        }
    }
}
