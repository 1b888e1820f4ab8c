//! Stochastic saddle-point oracles and the synthetic problem suite.
//!
//! Every problem exposes the operator `F(z) = (grad_x f, -grad_y f)`, a
//! stochastic version of it with additive clipped Gaussian noise, and the
//! diagonal Hessian blocks of `F` through Hessian-vector products.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::{FieldValue, OracleCounters, PointPair};

/// Relative slack allowed when certifying `mu` and `L` at construction.
const CERT_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Quadratic,
    Bilinear,
    Minty,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Bilinear => "bilinear",
            ProblemKind::Minty => "minty",
        }
    }
}

/// Monotonicity class of a problem, used to pick step-size bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemClass {
    StronglyMonotone,
    Monotone,
    Minty,
}

/// One stochastic oracle query: the noise seed and the batch size `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleSample {
    pub seed: u64,
    pub batch: u32,
}

impl OracleSample {
    pub fn new(seed: u64, batch: u32) -> Self {
        OracleSample { seed, batch }
    }
}

/// `f(x,y) = 1/2 x'Ax + x'By - 1/2 y'Cy + a'x - c'y`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub a_vec: DVector<f64>,
    pub c_vec: DVector<f64>,
}

impl QuadraticModel {
    fn field(&self, z: &PointPair) -> (DVector<f64>, DVector<f64>) {
        let gx = &self.a * &z.x + &self.b * &z.y + &self.a_vec;
        let gy_neg = &self.c * &z.y - self.b.tr_mul(&z.x) + &self.c_vec;
        (gx, gy_neg)
    }

    /// Jacobian of `F`, `[[A, B], [-B', C]]`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let (dx, dy) = (self.a.nrows(), self.c.nrows());
        let mut j = DMatrix::zeros(dx + dy, dx + dy);
        j.view_mut((0, 0), (dx, dx)).copy_from(&self.a);
        j.view_mut((0, dx), (dx, dy)).copy_from(&self.b);
        j.view_mut((dx, 0), (dy, dx))
            .copy_from(&(-self.b.transpose()));
        j.view_mut((dx, dx), (dy, dy)).copy_from(&self.c);
        j
    }

    pub fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.a * x)) + x.dot(&(&self.b * y)) - 0.5 * y.dot(&(&self.c * y))
            + self.a_vec.dot(x)
            - self.c_vec.dot(y)
    }
}

/// One-dimensional non-monotone problem satisfying the minty condition at the origin:
///
/// `f(x,y) = h(x) - h(y) + coupling * x * y`, with
/// `h'(s) = u(s) (1 + kappa cos(omega s))` and `u(s) = s^3 / (1 + s^2)^{3/2}`.
///
/// `s h'(s) >= 0` everywhere, so `<F(z), z> = x h'(x) + y h'(y) >= 0`, while
/// `h''` turns negative once `|s|` is moderately large.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MintyModel {
    pub kappa: f64,
    pub omega: f64,
    pub coupling: f64,
}

/// `sup_s u'(s)`, attained at `s^2 = 2/3`.
fn u_prime_max() -> f64 {
    2.0 / (5.0f64 / 3.0).powf(2.5)
}

impl MintyModel {
    fn u(s: f64) -> f64 {
        s * s * s / (1.0 + s * s).powf(1.5)
    }

    fn u_prime(s: f64) -> f64 {
        3.0 * s * s / (1.0 + s * s).powf(2.5)
    }

    pub fn h_prime(&self, s: f64) -> f64 {
        Self::u(s) * (1.0 + self.kappa * (self.omega * s).cos())
    }

    pub fn h_second(&self, s: f64) -> f64 {
        let w = self.omega * s;
        Self::u_prime(s) * (1.0 + self.kappa * w.cos())
            - Self::u(s) * self.kappa * self.omega * w.sin()
    }

    /// Upper bound on the operator norm of the Jacobian of `F` over the plane.
    pub fn lipschitz_bound(&self) -> f64 {
        u_prime_max() * (1.0 + self.kappa) + self.kappa * self.omega + self.coupling.abs()
    }

    fn field(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.h_prime(x) + self.coupling * y,
            self.h_prime(y) - self.coupling * x,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Quadratic(QuadraticModel),
    Minty(MintyModel),
}

/// A saddle-point problem with its stochastic oracle and certified constants.
///
/// Immutable after construction; oracle calls carry their own seed and
/// counters live with the caller, so a problem can be shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleProblem {
    kind: ProblemKind,
    dx: usize,
    dy: usize,
    mu: f64,
    lipschitz: f64,
    sigma: f64,
    noise_bound: f64,
    seed: u64,
    z_star: Option<PointPair>,
    model: Model,
}

/// Explicit quadratic data for building a problem by hand.
#[derive(Debug, Clone)]
pub struct QuadraticParts {
    pub model: QuadraticModel,
    pub mu: f64,
    pub lipschitz: f64,
}

impl QuadraticParts {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        a_vec: DVector<f64>,
        c_vec: DVector<f64>,
    ) -> Self {
        let model = QuadraticModel {
            a,
            b,
            c,
            a_vec,
            c_vec,
        };
        let lipschitz = model.jacobian().singular_values().max();
        QuadraticParts {
            model,
            mu: 0.0,
            lipschitz,
        }
    }

    pub fn mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn lipschitz(mut self, lipschitz: f64) -> Self {
        self.lipschitz = lipschitz;
        self
    }

    /// Validates shapes, symmetry and the declared `mu`/`L`, then solves for `z*`.
    pub fn build(self) -> Result<SaddleProblem> {
        let p = self.assemble()?;
        p.certify_quadratic()?;
        p.with_solution()
    }

    /// Skips the monotonicity certificate. Only for constructing counterexamples
    /// such as anti-convex quadratics; `z*` is still the stationary point.
    pub fn build_unchecked(self) -> Result<SaddleProblem> {
        self.assemble()?.with_solution()
    }

    fn assemble(self) -> Result<SaddleProblem> {
        let m = &self.model;
        let (dx, dy) = (m.a.nrows(), m.c.nrows());
        if dx == 0 || dy == 0 {
            return Err(Error::invalid("dimensions must be positive"));
        }
        if m.a.ncols() != dx
            || m.c.ncols() != dy
            || m.b.shape() != (dx, dy)
            || m.a_vec.len() != dx
            || m.c_vec.len() != dy
        {
            return Err(Error::invalid("inconsistent quadratic block shapes"));
        }
        let all =
            m.a.iter()
                .chain(m.b.iter())
                .chain(m.c.iter())
                .chain(m.a_vec.iter())
                .chain(m.c_vec.iter());
        if !all.clone().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("quadratic data"));
        }
        if !(self.lipschitz > 0.0) || !(self.mu >= 0.0) || self.mu > self.lipschitz {
            return Err(Error::invalid(format!(
                "need 0 <= mu <= L and L > 0 (mu = {}, L = {})",
                self.mu, self.lipschitz
            )));
        }
        Ok(SaddleProblem {
            kind: ProblemKind::Quadratic,
            dx,
            dy,
            mu: self.mu,
            lipschitz: self.lipschitz,
            sigma: 0.0,
            noise_bound: 0.0,
            seed: 0,
            z_star: None,
            model: Model::Quadratic(self.model),
        })
    }
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `n` values log-uniform in `[lo, hi]`; the first and last are pinned to the endpoints.
fn log_uniform_spectrum(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut s: Vec<f64> = (0..n)
        .map(|_| (llo + (lhi - llo) * rng.random::<f64>()).exp())
        .collect();
    s[0] = lo;
    if n > 1 {
        s[n - 1] = hi;
    }
    s
}

fn conjugated(spectrum: &[f64], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = spectrum.len();
    let q = random_orthogonal(n, rng);
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(spectrum));
    let m = &q * d * q.transpose();
    // exact symmetry
    (&m + m.transpose()) * 0.5
}

fn with_singular_values(dx: usize, dy: usize, s: &[f64], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let u = random_orthogonal(dx, rng);
    let v = random_orthogonal(dy, rng);
    let mut sigma = DMatrix::zeros(dx, dy);
    for (i, &si) in s.iter().enumerate() {
        sigma[(i, i)] = si;
    }
    u * sigma * v.transpose()
}

/// Random strongly-convex/strongly-concave quadratic.
///
/// Spectra of `A` and `C` are log-uniform in `[mu, L_A]`; the singular values of
/// `B` are uniform in `[0, min(L/2, L - mu)]`, and `L_A = L - |B|` so that the
/// Jacobian norm stays below `L`.
pub fn make_quadratic(
    dx: usize,
    dy: usize,
    mu: f64,
    lipschitz: f64,
    seed: u64,
) -> Result<SaddleProblem> {
    if dx == 0 || dy == 0 {
        return Err(Error::invalid("dimensions must be positive"));
    }
    if !(mu > 0.0) || !(lipschitz.is_finite()) || mu > lipschitz {
        return Err(Error::invalid(format!(
            "need 0 < mu <= L (mu = {mu}, L = {lipschitz})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = dx.min(dy);
    let s_cap = (0.5 * lipschitz).min(lipschitz - mu);
    let svals: Vec<f64> = (0..k).map(|_| s_cap * rng.random::<f64>()).collect();
    let b = with_singular_values(dx, dy, &svals, &mut rng);
    let b_norm = svals.iter().copied().fold(0.0, f64::max);
    let l_a = (lipschitz - b_norm).max(mu);
    let a = conjugated(&log_uniform_spectrum(dx, mu, l_a, &mut rng), &mut rng);
    let c = conjugated(&log_uniform_spectrum(dy, mu, l_a, &mut rng), &mut rng);
    let a_vec = DVector::from_fn(dx, |_, _| rng.sample::<f64, _>(StandardNormal));
    let c_vec = DVector::from_fn(dy, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut p = QuadraticParts::new(a, b, c, a_vec, c_vec)
        .mu(mu)
        .lipschitz(lipschitz)
        .build()?;
    p.seed = seed;
    Ok(p)
}

/// `f(x,y) = x'By` with square `B`, largest singular value exactly `L` and
/// the remaining ones uniform in `[L/2, L]`.
pub fn make_bilinear(d: usize, lipschitz: f64, seed: u64) -> Result<SaddleProblem> {
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return Err(Error::invalid(format!("need L > 0, got {lipschitz}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut svals: Vec<f64> = (0..d)
        .map(|_| lipschitz * (0.5 + 0.5 * rng.random::<f64>()))
        .collect();
    svals[0] = lipschitz;
    let b = with_singular_values(d, d, &svals, &mut rng);
    bilinear_from_matrix(b, seed)
}

/// Bilinear problem `f = x'By` from an explicit matrix.
pub fn bilinear_from_matrix(b: DMatrix<f64>, seed: u64) -> Result<SaddleProblem> {
    let (dx, dy) = b.shape();
    let parts = QuadraticParts::new(
        DMatrix::zeros(dx, dx),
        b,
        DMatrix::zeros(dy, dy),
        DVector::zeros(dx),
        DVector::zeros(dy),
    );
    let lipschitz = parts.lipschitz;
    let mut p = parts.mu(0.0).lipschitz(lipschitz).assemble()?;
    p.kind = ProblemKind::Bilinear;
    p.seed = seed;
    p.certify_quadratic()?;
    if dx == dy {
        if let Ok(z) = p.solve_exact() {
            p.z_star = Some(z);
        }
    }
    Ok(p)
}

/// Certified non-monotone problem on `R x R` satisfying the minty condition at the origin.
pub fn make_minty(seed: u64) -> Result<SaddleProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = MintyModel {
        kappa: 0.25 + 0.5 * rng.random::<f64>(),
        omega: 0.5 + rng.random::<f64>(),
        coupling: 0.01,
    };
    minty_from_model(model, seed)
}

pub fn minty_from_model(model: MintyModel, seed: u64) -> Result<SaddleProblem> {
    if !(model.kappa >= 0.0 && model.kappa < 1.0)
        || !(model.omega > 0.0)
        || !model.coupling.is_finite()
    {
        return Err(Error::invalid(
            "minty model needs 0 <= kappa < 1, omega > 0",
        ));
    }
    let p = SaddleProblem {
        kind: ProblemKind::Minty,
        dx: 1,
        dy: 1,
        mu: 0.0,
        lipschitz: model.lipschitz_bound(),
        sigma: 0.0,
        noise_bound: 0.0,
        seed,
        z_star: Some(PointPair::zeros(1, 1)),
        model: Model::Minty(model),
    };
    if !p.verify_minty(10.0, 1000)? {
        return Err(Error::Internal(format!(
            "minty certificate failed for {model:?}"
        )));
    }
    Ok(p)
}

impl SaddleProblem {
    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.dx, self.dy)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn noise_bound(&self) -> f64 {
        self.noise_bound
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn z_star(&self) -> Option<&PointPair> {
        self.z_star.as_ref()
    }

    pub fn quadratic(&self) -> Option<&QuadraticModel> {
        match &self.model {
            Model::Quadratic(q) => Some(q),
            Model::Minty(_) => None,
        }
    }

    pub fn minty_model(&self) -> Option<&MintyModel> {
        match &self.model {
            Model::Minty(m) => Some(m),
            Model::Quadratic(_) => None,
        }
    }

    pub fn class(&self) -> ProblemClass {
        match self.kind {
            ProblemKind::Minty => ProblemClass::Minty,
            _ if self.mu > 0.0 => ProblemClass::StronglyMonotone,
            _ => ProblemClass::Monotone,
        }
    }

    /// Sets the noise scale; the clipping radius defaults to `10 sigma`.
    pub fn with_noise(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!(
                "sigma must be finite and >= 0, got {sigma}"
            )));
        }
        self.sigma = sigma;
        self.noise_bound = 10.0 * sigma;
        Ok(self)
    }

    pub fn with_noise_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound >= 0.0) || !bound.is_finite() {
            return Err(Error::invalid(format!(
                "noise bound must be finite and >= 0, got {bound}"
            )));
        }
        self.noise_bound = bound;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check_point(&self, z: &PointPair) -> Result<()> {
        z.check_dims(self.dx, self.dy)?;
        if !z.is_finite() {
            return Err(Error::NonFinite("iterate"));
        }
        Ok(())
    }

    /// Exact operator value. Does not touch any counter.
    pub fn field(&self, z: &PointPair) -> Result<FieldValue> {
        self.check_point(z)?;
        let (gx, gy_neg) = match &self.model {
            Model::Quadratic(q) => q.field(z),
            Model::Minty(m) => {
                let (fx, fy) = m.field(z.x[0], z.y[0]);
                (DVector::from_element(1, fx), DVector::from_element(1, fy))
            }
        };
        Ok(FieldValue {
            gx,
            gy_neg,
            calls: 0,
        })
    }

    /// Stochastic operator value `F(z) + zeta / sqrt(b)`.
    ///
    /// `zeta` is an isotropic Gaussian with total variance `sigma^2`, radially
    /// clipped to `|zeta| <= noise_bound`; radial clipping keeps it symmetric, so
    /// the estimate stays unbiased. Pure in `(z, sample)`.
    pub fn gradient(
        &self,
        z: &PointPair,
        sample: OracleSample,
        counters: &mut OracleCounters,
    ) -> Result<FieldValue> {
        if sample.batch == 0 {
            return Err(Error::invalid("batch must be positive"));
        }
        let mut g = self.field(z)?;
        if self.sigma > 0.0 {
            let d = (self.dx + self.dy) as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(sample.seed);
            let mut zeta: Vec<f64> = (0..self.dx + self.dy)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * self.sigma / d.sqrt())
                .collect();
            let norm = zeta.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > self.noise_bound {
                let s = if norm > 0.0 {
                    self.noise_bound / norm
                } else {
                    0.0
                };
                zeta.iter_mut().for_each(|v| *v *= s);
            }
            let scale = 1.0 / (sample.batch as f64).sqrt();
            for (i, v) in g.gx.iter_mut().enumerate() {
                *v += zeta[i] * scale;
            }
            for (i, v) in g.gy_neg.iter_mut().enumerate() {
                *v += zeta[self.dx + i] * scale;
            }
        }
        counters.grad += 1;
        g.calls = counters.grad;
        Ok(g)
    }

    /// Products with the diagonal Jacobian blocks of `F`:
    /// `(grad_xx f * v_x, -grad_yy f * v_y)`, i.e. `(A v_x, C v_y)` for quadratics.
    ///
    /// The per-sample Hessian equals the exact one under the additive noise
    /// model, so `sample` does not influence the result.
    pub fn hvp(
        &self,
        z: &PointPair,
        v_x: &DVector<f64>,
        v_y: &DVector<f64>,
        _sample: OracleSample,
        counters: &mut OracleCounters,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_point(z)?;
        if v_x.len() != self.dx || v_y.len() != self.dy {
            return Err(Error::DimensionMismatch {
                expected_x: self.dx,
                expected_y: self.dy,
                got_x: v_x.len(),
                got_y: v_y.len(),
            });
        }
        counters.hvp += 1;
        Ok(match &self.model {
            Model::Quadratic(q) => (&q.a * v_x, &q.c * v_y),
            Model::Minty(m) => (
                DVector::from_element(1, m.h_second(z.x[0]) * v_x[0]),
                DVector::from_element(1, m.h_second(z.y[0]) * v_y[0]),
            ),
        })
    }

    /// Solves the stationarity system `F(z) = 0` of a quadratic problem.
    pub fn solve_exact(&self) -> Result<PointPair> {
        let q = match &self.model {
            Model::Quadratic(q) => q,
            Model::Minty(_) => return Err(Error::Unsupported("minty")),
        };
        let j = q.jacobian();
        let n = self.dx + self.dy;
        let rhs = -DVector::from_iterator(n, q.a_vec.iter().chain(q.c_vec.iter()).copied());
        let svals = j.clone().singular_values();
        let (smax, smin) = (svals.max(), svals.min());
        if !(smin > smax * 1e-13) {
            return Err(Error::NoUniqueSolution);
        }
        let lu = j.clone().lu();
        let mut sol = lu.solve(&rhs).ok_or(Error::NoUniqueSolution)?;
        // one round of iterative refinement
        let resid = &rhs - &j * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }
        let z = PointPair {
            x: sol.rows(0, self.dx).into_owned(),
            y: sol.rows(self.dx, self.dy).into_owned(),
        };
        let res = self.field(&z)?.norm_sq().sqrt();
        let scale = 1.0 + rhs.norm();
        if res > 1e-10 * scale {
            return Err(Error::Internal(format!(
                "stationarity residual {res:e} too large"
            )));
        }
        Ok(z)
    }

    fn with_solution(mut self) -> Result<Self> {
        self.z_star = Some(self.solve_exact()?);
        Ok(self)
    }

    fn certify_quadratic(&self) -> Result<()> {
        let q = self.quadratic().expect("quadratic model");
        let sym_err = (&q.a - q.a.transpose())
            .amax()
            .max((&q.c - q.c.transpose()).amax());
        let scale = 1.0 + q.a.amax().max(q.c.amax());
        if sym_err > 1e-12 * scale {
            return Err(Error::invalid("A and C must be symmetric"));
        }
        let tol = CERT_RTOL * self.lipschitz.max(1.0);
        let min_eig =
            q.a.clone()
                .symmetric_eigenvalues()
                .min()
                .min(q.c.clone().symmetric_eigenvalues().min());
        if min_eig < self.mu - tol {
            return Err(Error::invalid(format!(
                "A, C must dominate mu I: smallest eigenvalue {min_eig} < mu = {}",
                self.mu
            )));
        }
        let op_norm = q.jacobian().singular_values().max();
        if op_norm > self.lipschitz * (1.0 + CERT_RTOL) {
            return Err(Error::invalid(format!(
                "Jacobian norm {op_norm} exceeds declared L = {}",
                self.lipschitz
            )));
        }
        Ok(())
    }

    /// `<F(z), z - z*>`.
    pub fn minty_inner(&self, z: &PointPair) -> Result<f64> {
        let zs = self
            .z_star
            .as_ref()
            .ok_or_else(|| Error::Precondition("minty check needs a known solution".into()))?;
        let f = self.field(z)?;
        Ok(f.gx.dot(&(&z.x - &zs.x)) + f.gy_neg.dot(&(&z.y - &zs.y)))
    }

    /// Checks the minty inequality `<F(z), z - z*> >= -1e-12` on a uniform
    /// `grid_n x grid_n` grid over `[-radius, radius]^2` around `z*`.
    ///
    /// For `d_x = d_y = 1` this is the full plane; otherwise the grid lies in
    /// the plane through `z*` spanned by the normalized all-ones directions of
    /// the `x` and `y` blocks.
    pub fn verify_minty(&self, radius: f64, grid_n: usize) -> Result<bool> {
        let zs = self
            .z_star
            .as_ref()
            .ok_or_else(|| Error::Precondition("minty check needs a known solution".into()))?;
        if grid_n < 2 {
            return Err(Error::Precondition("grid_n must be >= 2".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::invalid("radius must be positive"));
        }
        let ux = DVector::from_element(self.dx, 1.0 / (self.dx as f64).sqrt());
        let uy = DVector::from_element(self.dy, 1.0 / (self.dy as f64).sqrt());
        let step = 2.0 * radius / (grid_n - 1) as f64;
        for i in 0..grid_n {
            let s = -radius + step * i as f64;
            for j in 0..grid_n {
                let t = -radius + step * j as f64;
                let z = PointPair {
                    x: &zs.x + &ux * s,
                    y: &zs.y + &uy * t,
                };
                if self.minty_inner(&z)? < -1e-12 {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// JSON document for a problem: kind, dimensions, dense row-major matrices,
/// constants and seed. Loading it revalidates every certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDoc {
    pub kind: ProblemKind,
    pub dx: usize,
    pub dy: usize,
    pub seed: u64,
    pub mu: f64,
    pub lipschitz: f64,
    pub sigma: f64,
    pub noise_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadratic: Option<QuadraticDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minty: Option<MintyModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_star: Option<PointDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticDoc {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub a_vec: Vec<f64>,
    pub c_vec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDoc {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    name: &str,
) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid(format!(
            "matrix {name} must be {nrows}x{ncols}"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl From<&PointPair> for PointDoc {
    fn from(z: &PointPair) -> Self {
        PointDoc {
            x: z.x.iter().copied().collect(),
            y: z.y.iter().copied().collect(),
        }
    }
}

impl PointDoc {
    pub fn to_point(&self) -> Result<PointPair> {
        PointPair::from_slices(&self.x, &self.y)
    }
}

impl SaddleProblem {
    pub fn to_doc(&self) -> ProblemDoc {
        ProblemDoc {
            kind: self.kind,
            dx: self.dx,
            dy: self.dy,
            seed: self.seed,
            mu: self.mu,
            lipschitz: self.lipschitz,
            sigma: self.sigma,
            noise_bound: self.noise_bound,
            quadratic: self.quadratic().map(|q| QuadraticDoc {
                a: rows_of(&q.a),
                b: rows_of(&q.b),
                c: rows_of(&q.c),
                a_vec: q.a_vec.iter().copied().collect(),
                c_vec: q.c_vec.iter().copied().collect(),
            }),
            minty: self.minty_model().copied(),
            z_star: self.z_star.as_ref().map(PointDoc::from),
        }
    }

    pub fn from_doc(doc: &ProblemDoc) -> Result<Self> {
        let p = match doc.kind {
            ProblemKind::Minty => {
                let m = doc
                    .minty
                    .ok_or_else(|| Error::invalid("minty problem needs `minty` parameters"))?;
                minty_from_model(m, doc.seed)?
            }
            ProblemKind::Quadratic | ProblemKind::Bilinear => {
                let q = doc
                    .quadratic
                    .as_ref()
                    .ok_or_else(|| Error::invalid("quadratic data missing"))?;
                let (dx, dy) = (doc.dx, doc.dy);
                let a = matrix_from_rows(&q.a, dx, dx, "a")?;
                let b = matrix_from_rows(&q.b, dx, dy, "b")?;
                let c = matrix_from_rows(&q.c, dy, dy, "c")?;
                if q.a_vec.len() != dx || q.c_vec.len() != dy {
                    return Err(Error::invalid("linear terms have wrong length"));
                }
                if doc.kind == ProblemKind::Bilinear {
                    bilinear_from_matrix(b, doc.seed)?
                } else {
                    QuadraticParts::new(
                        a,
                        b,
                        c,
                        DVector::from_column_slice(&q.a_vec),
                        DVector::from_column_slice(&q.c_vec),
                    )
                    .mu(doc.mu)
                    .lipschitz(doc.lipschitz)
                    .build()?
                    .with_seed(doc.seed)
                }
            }
        };
        p.with_noise(doc.sigma)?.with_noise_bound(doc.noise_bound)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn scalar_quadratic() -> SaddleProblem {
        QuadraticParts::new(
            dmatrix![1.0],
            dmatrix![0.0],
            dmatrix![1.0],
            DVector::from_element(1, -1.0),
            DVector::zeros(1),
        )
        .mu(1.0)
        .lipschitz(1.0)
        .build()
        .unwrap()
    }

    #[test]
    fn scalar_quadratic_optimum() {
        let p = scalar_quadratic();
        let z = p.z_star().unwrap();
        assert_abs_diff_eq!(z.x[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(z.y[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn quadratic_spectra_in_range() {
        let p = make_quadratic(2, 2, 0.1, 10.0, 7).unwrap();
        let q = p.quadratic().unwrap();
        for m in [&q.a, &q.c] {
            for ev in m.clone().symmetric_eigenvalues().iter() {
                assert!(
                    *ev >= 0.1 * (1.0 - 1e-12) && *ev <= 10.0 * (1.0 + 1e-12),
                    "{ev}"
                );
            }
        }
    }

    /// Dense solve of the stationarity system, independent of `solve_exact`'s LU path.
    fn stationarity_by_inverse(p: &SaddleProblem) -> DVector<f64> {
        let q = p.quadratic().unwrap();
        let j = q.jacobian();
        let rhs = -DVector::from_iterator(
            q.a_vec.len() + q.c_vec.len(),
            q.a_vec.iter().chain(q.c_vec.iter()).copied(),
        );
        j.try_inverse().unwrap() * rhs
    }

    #[test]
    fn solve_exact_residuals() {
        for (dx, dy, mu, l, seed) in [(3, 2, 1.0, 5.0, 1), (4, 4, 0.5, 3.0, 11)] {
            let p = make_quadratic(dx, dy, mu, l, seed).unwrap();
            let z = p.z_star().unwrap();
            assert!(p.field(z).unwrap().norm_sq().sqrt() <= 1e-10);
            let reference = stationarity_by_inverse(&p);
            assert!((z.stacked() - reference).amax() < 1e-10);
        }
    }

    #[test]
    fn make_quadratic_rejects_bad_parameters() {
        assert!(matches!(
            make_quadratic(2, 2, 5.0, 1.0, 0),
            Err(Error::InvalidParameters(_))
        ));
        assert!(matches!(
            make_quadratic(0, 2, 0.5, 1.0, 0),
            Err(Error::InvalidParameters(_))
        ));
        assert!(matches!(
            make_quadratic(2, 2, 0.0, 1.0, 0),
            Err(Error::InvalidParameters(_))
        ));
    }

    #[test]
    fn quadratic_with_equal_mu_and_l() {
        let p = make_quadratic(3, 3, 1.0, 1.0, 5).unwrap();
        let q = p.quadratic().unwrap();
        assert!(q.b.amax() < 1e-12);
        assert!((q.jacobian().singular_values().max() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_bilinear_field() {
        let p = bilinear_from_matrix(dmatrix![1.0], 0).unwrap();
        let z = PointPair::from_slices(&[2.0], &[3.0]).unwrap();
        let f = p.field(&z).unwrap();
        assert_eq!(f.gx[0], 3.0);
        assert_eq!(f.gy_neg[0], -2.0);
        let zs = p.z_star().unwrap();
        assert_eq!(zs.norm_sq(), 0.0);
    }

    #[test]
    fn bilinear_top_singular_value() {
        let p = make_bilinear(2, 3.0, 9).unwrap();
        let s = p.quadratic().unwrap().b.clone().singular_values();
        assert!((s.max() - 3.0).abs() < 1e-12);
        assert!(s.min() >= 1.5 - 1e-12);
        assert_eq!(p.kind(), ProblemKind::Bilinear);
        assert_eq!(p.z_star().unwrap().norm_sq(), 0.0);
    }

    #[test]
    fn sgda_step_on_scalar_bilinear_expands_norm() {
        let p = bilinear_from_matrix(dmatrix![1.0], 0).unwrap();
        let z0 = PointPair::from_slices(&[1.0], &[1.0]).unwrap();
        let g = p.field(&z0).unwrap();
        let gamma = 0.1;
        let z1 = z0.offset(-gamma, &g.gx, &g.gy_neg);
        assert_abs_diff_eq!(
            z1.norm_sq(),
            (1.0 + gamma * gamma) * z0.norm_sq(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn deterministic_gradient_at_solution_is_zero() {
        let p = make_quadratic(3, 2, 1.0, 5.0, 1).unwrap();
        let mut c = OracleCounters::default();
        let g = p
            .gradient(p.z_star().unwrap(), OracleSample::new(3, 1), &mut c)
            .unwrap();
        assert!(g.norm_sq() <= 1e-20);
        assert_eq!(c.grad, 1);
        assert_eq!(g.calls, 1);
    }

    #[test]
    fn gradient_is_reproducible() {
        let p = make_quadratic(3, 3, 0.5, 2.0, 4)
            .unwrap()
            .with_noise(1.0)
            .unwrap();
        let z = PointPair::from_slices(&[1.0, 2.0, 3.0], &[0.0, -1.0, 0.5]).unwrap();
        let mut c = OracleCounters::default();
        let a = p.gradient(&z, OracleSample::new(99, 4), &mut c).unwrap();
        let b = p.gradient(&z, OracleSample::new(99, 4), &mut c).unwrap();
        assert_eq!(a.gx, b.gx);
        assert_eq!(a.gy_neg, b.gy_neg);
        let other = p.gradient(&z, OracleSample::new(100, 4), &mut c).unwrap();
        assert_ne!(a.gx, other.gx);
        assert_eq!(c.grad, 3);
    }

    #[test]
    fn noise_is_clipped() {
        let p = make_quadratic(2, 2, 0.5, 2.0, 4)
            .unwrap()
            .with_noise(1.0)
            .unwrap()
            .with_noise_bound(0.05)
            .unwrap();
        let z = p.z_star().unwrap().clone();
        let mut c = OracleCounters::default();
        for s in 0..200 {
            let g = p.gradient(&z, OracleSample::new(s, 1), &mut c).unwrap();
            assert!(g.norm_sq().sqrt() <= 0.05 + 1e-9);
        }
    }

    #[test]
    fn gradient_errors() {
        let p = make_quadratic(2, 2, 0.5, 2.0, 4).unwrap();
        let mut c = OracleCounters::default();
        let bad = PointPair::zeros(3, 2);
        assert!(matches!(
            p.gradient(&bad, OracleSample::new(0, 1), &mut c),
            Err(Error::DimensionMismatch { .. })
        ));
        let nan = PointPair {
            x: DVector::from_element(2, f64::NAN),
            y: DVector::zeros(2),
        };
        assert!(matches!(
            p.gradient(&nan, OracleSample::new(0, 1), &mut c),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(c.grad, 0);
    }

    #[test]
    fn hvp_quadratic_blocks() {
        let p = QuadraticParts::new(
            dmatrix![2.0, 1.0; 1.0, 3.0],
            DMatrix::zeros(2, 1),
            dmatrix![1.0],
            DVector::zeros(2),
            DVector::zeros(1),
        )
        .mu(1.0)
        .build()
        .unwrap();
        let mut c = OracleCounters::default();
        let z = PointPair::zeros(2, 1);
        let (hx, hy) = p
            .hvp(
                &z,
                &DVector::from_column_slice(&[1.0, -1.0]),
                &DVector::from_element(1, 2.0),
                OracleSample::new(0, 1),
                &mut c,
            )
            .unwrap();
        assert_eq!(hx.as_slice(), &[1.0, -2.0]);
        assert_eq!(hy.as_slice(), &[2.0]);
        assert_eq!((c.grad, c.hvp), (0, 1));
    }

    #[test]
    fn hvp_identity_and_bilinear() {
        let p = QuadraticParts::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::zeros(2),
        )
        .mu(1.0)
        .build()
        .unwrap();
        let mut c = OracleCounters::default();
        let v = DVector::from_column_slice(&[1.0, 2.0]);
        let (hx, _) = p
            .hvp(
                &PointPair::zeros(2, 2),
                &v,
                &v,
                OracleSample::new(0, 1),
                &mut c,
            )
            .unwrap();
        assert_eq!(hx, v);

        let bl = make_bilinear(3, 1.0, 2).unwrap();
        let v3 = DVector::from_element(3, 1.0);
        let (hx, hy) = bl
            .hvp(
                &PointPair::zeros(3, 3),
                &v3,
                &v3,
                OracleSample::new(0, 1),
                &mut c,
            )
            .unwrap();
        assert_eq!(hx.norm(), 0.0);
        assert_eq!(hy.norm(), 0.0);
    }

    #[test]
    fn singular_system_reported() {
        let p = bilinear_from_matrix(dmatrix![1.0, 0.0; 0.0, 0.0], 0).unwrap();
        assert!(p.z_star().is_none());
        assert!(matches!(p.solve_exact(), Err(Error::NoUniqueSolution)));
    }

    #[test]
    fn minty_checks() {
        let bl = bilinear_from_matrix(dmatrix![1.0], 0).unwrap();
        assert!(bl.verify_minty(10.0, 100).unwrap());

        let sc = make_quadratic(3, 2, 1.0, 5.0, 1).unwrap();
        assert!(sc.verify_minty(5.0, 50).unwrap());

        let anti = QuadraticParts::new(
            dmatrix![-1.0],
            dmatrix![0.0],
            dmatrix![-1.0],
            DVector::zeros(1),
            DVector::zeros(1),
        )
        .build_unchecked()
        .unwrap();
        // <F(z), z> = -x^2 - y^2 at (1, 0)
        let at = PointPair::from_slices(&[1.0], &[0.0]).unwrap();
        assert_eq!(anti.minty_inner(&at).unwrap(), -1.0);
        assert!(!anti.verify_minty(1.0, 11).unwrap());
    }

    #[test]
    fn minty_problem_is_certified_and_non_monotone() {
        for seed in 0..4 {
            let p = make_minty(seed).unwrap();
            assert_eq!(p.dims(), (1, 1));
            assert!(p.verify_minty(10.0, 1000).unwrap());
            let m = *p.minty_model().unwrap();
            // some point where the Jacobian's symmetric part is indefinite
            let witness = (0..2000)
                .map(|i| i as f64 * 0.005)
                .any(|s| m.h_second(s) < 0.0);
            assert!(witness, "seed {seed} produced a monotone operator");
        }
    }

    #[test]
    fn minty_lipschitz_bound_holds_on_grid() {
        let p = make_minty(3).unwrap();
        let m = *p.minty_model().unwrap();
        let sup = (0..200_001)
            .map(|i| -20.0 + i as f64 * 2e-4)
            .map(|s| m.h_second(s).abs())
            .fold(0.0, f64::max);
        assert!(sup + m.coupling <= p.lipschitz());
    }

    #[test]
    fn minty_missing_solution() {
        let p = bilinear_from_matrix(dmatrix![1.0, 0.0; 0.0, 0.0], 0).unwrap();
        assert!(matches!(
            p.verify_minty(1.0, 10),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn rejects_false_mu_certificate() {
        let res = QuadraticParts::new(
            dmatrix![0.5],
            dmatrix![0.0],
            dmatrix![1.0],
            DVector::zeros(1),
            DVector::zeros(1),
        )
        .mu(1.0)
        .lipschitz(2.0)
        .build();
        assert!(matches!(res, Err(Error::InvalidParameters(_))));
    }

    #[test]
    fn doc_round_trip() {
        for p in [
            make_quadratic(3, 2, 0.5, 4.0, 21)
                .unwrap()
                .with_noise(0.3)
                .unwrap(),
            make_bilinear(3, 2.0, 5).unwrap(),
            make_minty(8).unwrap(),
        ] {
            let json = serde_json::to_string(&p.to_doc()).unwrap();
            let back = SaddleProblem::from_doc(&serde_json::from_str(&json).unwrap()).unwrap();
            assert_eq!(back.to_doc(), p.to_doc());
        }
    }
}
