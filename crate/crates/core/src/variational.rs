//! Energy functional `J(u) = ½ [u]² - ∫ F(x, u)`, its gradient, truncations
//! and the critical-point solvers behind the three-solution construction.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::assembly::{element_quadrature, GramMatrix, QuadPoint};
use crate::diagnostics::{c0delta_norm, hopf_quotient_min, PropertyVerdict, VerdictContext};
use crate::error::{Error, Result};
use crate::geometry::FeSpace;
use crate::spectral::eigenpairs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

/// Reaction term `f(t)`; every kind is independent of `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reaction {
    Zero,
    Linear { lambda: f64 },
    /// `b|t|^{r-2}t + a₁|t|^{q-2}t` for `|t| ≤ 1`, `β₁ t` beyond.
    Model { r: f64, q: f64, b: f64, a1: f64, beta1: f64 },
    /// Piecewise linear through `(t[k], f[k])`, extended linearly past the ends.
    Tabulated { t: Vec<f64>, f: Vec<f64> },
    Truncated { sign: Sign, inner: Box<Reaction> },
}

impl Reaction {
    pub fn f(&self, t: f64) -> f64 {
        match self {
            Reaction::Zero => 0.0,
            Reaction::Linear { lambda } => lambda * t,
            Reaction::Model { r, q, b, a1, beta1 } => {
                let a = t.abs();
                if a <= 1.0 {
                    if a == 0.0 {
                        return 0.0;
                    }
                    b * a.powf(r - 2.0) * t + a1 * a.powf(q - 2.0) * t
                } else {
                    beta1 * t
                }
            }
            Reaction::Tabulated { t: ts, f } => {
                let k = segment(ts, t);
                let w = (t - ts[k]) / (ts[k + 1] - ts[k]);
                (1.0 - w) * f[k] + w * f[k + 1]
            }
            Reaction::Truncated { sign, inner } => inner.f(clip(*sign, t)),
        }
    }

    /// `F(t) = ∫₀ᵗ f`.
    pub fn big_f(&self, t: f64) -> f64 {
        match self {
            Reaction::Zero => 0.0,
            Reaction::Linear { lambda } => 0.5 * lambda * t * t,
            Reaction::Model { r, q, b, a1, beta1 } => {
                let a = t.abs();
                if a <= 1.0 {
                    b * a.powf(*r) / r + a1 * a.powf(*q) / q
                } else {
                    b / r + a1 / q + 0.5 * beta1 * (t * t - 1.0)
                }
            }
            Reaction::Tabulated { .. } => self.tab_primitive(t) - self.tab_primitive(0.0),
            Reaction::Truncated { sign, inner } => {
                let c = clip(*sign, t);
                inner.big_f(c) + inner.f(0.0) * (t - c)
            }
        }
    }

    /// `f'(t)`; infinite slopes at `t = 0` are capped at a large finite value.
    pub fn df(&self, t: f64) -> f64 {
        match self {
            Reaction::Zero => 0.0,
            Reaction::Linear { lambda } => *lambda,
            Reaction::Model { r, q, b, a1, beta1 } => {
                let a = t.abs().max(1e-300);
                if a <= 1.0 {
                    (b * (r - 1.0) * a.powf(r - 2.0) + a1 * (q - 1.0) * a.powf(q - 2.0)).min(1e300)
                } else {
                    *beta1
                }
            }
            Reaction::Tabulated { t: ts, f } => {
                let k = segment(ts, t);
                (f[k + 1] - f[k]) / (ts[k + 1] - ts[k])
            }
            Reaction::Truncated { sign, inner } => {
                let inside = match sign {
                    Sign::Plus => t > 0.0,
                    Sign::Minus => t < 0.0,
                };
                if inside {
                    inner.df(t)
                } else {
                    0.0
                }
            }
        }
    }

    fn tab_primitive(&self, t: f64) -> f64 {
        let Reaction::Tabulated { t: ts, f } = self else { unreachable!() };
        let k = segment(ts, t);
        let mut acc = 0.0;
        if t >= ts[0] {
            for j in 0..k {
                acc += 0.5 * (f[j] + f[j + 1]) * (ts[j + 1] - ts[j]);
            }
        }
        let start = if t >= ts[0] { ts[k] } else { ts[0] };
        let fs = self.f(start);
        let ft = self.f(t);
        acc + 0.5 * (fs + ft) * (t - start)
    }

    /// `f±(t) = f(±t±)`. Truncating twice with the same sign changes nothing.
    pub fn truncate(&self, sign: Sign) -> Reaction {
        if let Reaction::Truncated { sign: s0, .. } = self {
            if *s0 == sign {
                return self.clone();
            }
        }
        Reaction::Truncated {
            sign,
            inner: Box::new(self.clone()),
        }
    }

    /// `sup |f(t)| / (1 + |t|^{q-1})` on a grid of `[-t_max, t_max]`.
    pub fn growth_constant(&self, q: f64, t_max: f64) -> f64 {
        (0..=4000)
            .map(|k| -t_max + 2.0 * t_max * k as f64 / 4000.0)
            .map(|t| self.f(t).abs() / (1.0 + t.abs().powf(q - 1.0)))
            .fold(0.0, f64::max)
    }

    /// Smallest `c ≥ 0` with `f(t) ≥ -c t` on a grid of `(0, t_max]`.
    pub fn lower_constant(&self, t_max: f64) -> f64 {
        (1..=4000)
            .map(|k| t_max * k as f64 / 4000.0)
            .map(|t| (-self.f(t) / t).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Checks the structural hypotheses of the model reaction.
    pub fn validate(&self, n: usize, s: f64, lambda1: Option<f64>) -> Result<()> {
        match self {
            Reaction::Model { r, q, b, a1, beta1 } => {
                let crit = 2.0 * n as f64 / (n as f64 - 2.0 * s);
                if !(*q > 1.0 && *q < crit) {
                    return Err(Error::InvalidParameter(format!(
                        "subcritical growth 1 < q < 2*_s violated: q = {q}, 2*_s = {crit}"
                    )));
                }
                if !(1.0 < *r && *r < 2.0 && 2.0 < *q) {
                    return Err(Error::InvalidParameter(format!(
                        "model exponents need 1 < r < 2 < q < 2*_s, got r = {r}, q = {q}"
                    )));
                }
                if !(*a1 > 0.0 && *b > 0.0 && *beta1 > 0.0) {
                    return Err(Error::InvalidParameter("model needs a1 > 0, b > 0, beta1 > 0".into()));
                }
                if (a1 + b - beta1).abs() > 1e-12 * beta1 {
                    return Err(Error::InvalidParameter(format!(
                        "continuity at |t| = 1 needs a1 + b = beta1, got {a1} + {b} vs {beta1}"
                    )));
                }
                if let Some(l1) = lambda1 {
                    if *beta1 >= l1 {
                        return Err(Error::InvalidParameter(format!(
                            "asymptotic slope beta1 < lambda1 violated: {beta1} >= {l1}"
                        )));
                    }
                }
                Ok(())
            }
            Reaction::Tabulated { t, f } => {
                if t.len() < 2 || t.len() != f.len() || t.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidParameter(
                        "tabulated reaction needs at least two increasing abscissae matching the values".into(),
                    ));
                }
                Ok(())
            }
            Reaction::Truncated { inner, .. } => inner.validate(n, s, lambda1),
            _ => Ok(()),
        }
    }

    /// Model reaction with `β₁ = ratio λ₁` and `b = share β₁`.
    pub fn model_from_ratio(r: f64, q: f64, ratio: f64, b_share: f64, lambda1: f64) -> Reaction {
        let beta1 = ratio * lambda1;
        let b = b_share * beta1;
        Reaction::Model {
            r,
            q,
            b,
            a1: beta1 - b,
            beta1,
        }
    }

    pub fn is_odd(&self) -> bool {
        matches!(self, Reaction::Zero | Reaction::Linear { .. } | Reaction::Model { .. })
    }
}

fn clip(sign: Sign, t: f64) -> f64 {
    match sign {
        Sign::Plus => t.max(0.0),
        Sign::Minus => t.min(0.0),
    }
}

fn segment(ts: &[f64], t: f64) -> usize {
    let n = ts.len();
    ts.partition_point(|&v| v <= t).clamp(1, n - 1) - 1
}

/// Reaction with the constants of the growth and sign conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    #[serde(flatten)]
    pub reaction: Reaction,
    /// `(C, q)` in `|f(t)| ≤ C(1 + |t|^{q-1})`, when declared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<(f64, f64)>,
    /// `c` in `f(t) ≥ -c t` for `t ≥ 0`, when declared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_c: Option<f64>,
}

impl From<Reaction> for NonlinearitySpec {
    fn from(reaction: Reaction) -> Self {
        NonlinearitySpec {
            reaction,
            growth: None,
            lower_c: None,
        }
    }
}

impl NonlinearitySpec {
    pub fn truncate(&self, sign: Sign) -> Self {
        NonlinearitySpec {
            reaction: self.reaction.truncate(sign),
            ..self.clone()
        }
    }

    /// Sampled check of the declared growth bound.
    pub fn growth_holds(&self) -> bool {
        match self.growth {
            Some((c, q)) => self.reaction.growth_constant(q, 100.0) <= c * (1.0 + 1e-12),
            None => true,
        }
    }
}

/// Tag of a computed critical point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalTag {
    MinimizerPositive,
    MinimizerNegative,
    /// A minimizer with nodes of both signs.
    MinimizerSignChanging,
    MountainPass,
    Trivial,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalPoint {
    pub coeffs: Vec<f64>,
    pub energy: f64,
    /// Dual norm `sqrt(gᵀ G⁻¹ g)` of the gradient.
    pub grad_norm: f64,
    pub tag: CriticalTag,
    pub iterations: usize,
    #[serde(skip)]
    pub energy_trace: Vec<f64>,
}

/// Classifies a minimizer by its nodal sign pattern.
pub fn classify_minimizer(u: &[f64]) -> CriticalTag {
    let amax = u.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if amax <= 1e-12 {
        return CriticalTag::Trivial;
    }
    let tol = 1e-8 * amax;
    if u.iter().all(|&x| x >= -tol) {
        CriticalTag::MinimizerPositive
    } else if u.iter().all(|&x| x <= tol) {
        CriticalTag::MinimizerNegative
    } else {
        CriticalTag::MinimizerSignChanging
    }
}

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Dual gradient norm at which a critical point is accepted.
    pub tol: f64,
    pub iter_cap: usize,
    pub path_nodes: usize,
    pub string_iters: usize,
    /// Minimum Gram distance between the pass point and `0`, `u⁺`, `u⁻`.
    pub separation_tol: f64,
    /// Element Gauss order for `∫ F(u_h)`.
    pub quad_order: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            iter_cap: 20_000,
            path_nodes: 21,
            string_iters: 4000,
            separation_tol: 1e-3,
            quad_order: 4,
        }
    }
}

/// `J` on a fixed space with a factored Gram matrix.
pub struct Energy<'a> {
    gram: &'a GramMatrix,
    reaction: Reaction,
    points: Vec<QuadPoint>,
    chol: Cholesky<f64, Dyn>,
}

impl<'a> Energy<'a> {
    pub fn new(gram: &'a GramMatrix, space: &FeSpace, reaction: &Reaction, quad_order: usize) -> Result<Self> {
        if gram.dim() != space.num_dofs() {
            return Err(Error::DimensionMismatch {
                expected: space.num_dofs(),
                found: gram.dim(),
            });
        }
        let chol = gram
            .matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Gram matrix".into()))?;
        Ok(Energy {
            gram,
            reaction: reaction.clone(),
            points: element_quadrature(space, quad_order),
            chol,
        })
    }

    pub fn reaction(&self) -> &Reaction {
        &self.reaction
    }

    pub fn with_reaction(&self, reaction: &Reaction) -> Energy<'a> {
        Energy {
            gram: self.gram,
            reaction: reaction.clone(),
            points: self.points.clone(),
            chol: self.chol.clone(),
        }
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        let quad: f64 = self
            .points
            .iter()
            .map(|q| q.weight * self.reaction.big_f(q.eval(u)))
            .sum();
        0.5 * self.gram.inner(u, u) - quad
    }

    /// `G u - load(f(u_h))` with the quadrature used by [`Energy::value`].
    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut g = self.gram.apply(u);
        for q in &self.points {
            let fv = q.weight * self.reaction.f(q.eval(u));
            for k in 0..3 {
                if let Some(i) = q.dofs[k] {
                    g[i] -= fv * q.shape[k];
                }
            }
        }
        g
    }

    pub fn hessian(&self, u: &[f64]) -> DMatrix<f64> {
        let mut h = self.gram.matrix.clone();
        for q in &self.points {
            let d = q.weight * self.reaction.df(q.eval(u));
            for a in 0..3 {
                let Some(i) = q.dofs[a] else { continue };
                for b in 0..3 {
                    let Some(j) = q.dofs[b] else { continue };
                    h[(i, j)] -= d * q.shape[a] * q.shape[b];
                }
            }
        }
        h
    }

    /// `G⁻¹ g`, the gradient in the Gram metric.
    pub fn riesz(&self, g: &[f64]) -> Vec<f64> {
        self.chol.solve(&DVector::from_column_slice(g)).as_slice().to_vec()
    }

    pub fn dual_norm(&self, g: &[f64]) -> f64 {
        let r = self.riesz(g);
        dot(g, &r).max(0.0).sqrt()
    }

    pub fn gram_norm(&self, u: &[f64]) -> f64 {
        self.gram.inner(u, u).max(0.0).sqrt()
    }

    fn gram_dist(&self, u: &[f64], v: &[f64]) -> f64 {
        let d: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
        self.gram_norm(&d)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| yi + a * xi).collect()
}

/// `J(u)` for a one-off evaluation.
pub fn functional_value(gram: &GramMatrix, space: &FeSpace, nl: &NonlinearitySpec, u: &[f64]) -> Result<f64> {
    Ok(Energy::new(gram, space, &nl.reaction, SolverOptions::default().quad_order)?.value(u))
}

/// `∇J(u) = G u - load(f(u_h))` for a one-off evaluation.
pub fn functional_gradient(gram: &GramMatrix, space: &FeSpace, nl: &NonlinearitySpec, u: &[f64]) -> Result<Vec<f64>> {
    Ok(Energy::new(gram, space, &nl.reaction, SolverOptions::default().quad_order)?.gradient(u))
}

/// Newton step `H δ = -g`, Cholesky when `H` is definite, LU otherwise.
fn newton_direction(h: DMatrix<f64>, g: &[f64], definite: bool) -> Option<Vec<f64>> {
    let rhs = -DVector::from_column_slice(g);
    let sol = if definite {
        h.cholesky()?.solve(&rhs)
    } else {
        h.lu().solve(&rhs)?
    };
    sol.iter().all(|v| v.is_finite()).then(|| sol.as_slice().to_vec())
}

/// Descent in the Gram metric with Armijo backtracking, finished by Newton
/// steps once the gradient is small.
pub fn minimize(energy: &Energy, u0: &[f64], tol: f64, iter_cap: usize) -> Result<CriticalPoint> {
    let mut u = u0.to_vec();
    let mut j = energy.value(&u);
    let mut trace = vec![j];
    let mut dn = f64::INFINITY;
    for it in 0..iter_cap {
        let g = energy.gradient(&u);
        let r = energy.riesz(&g);
        dn = dot(&g, &r).max(0.0).sqrt();
        if dn <= tol {
            return Ok(CriticalPoint {
                tag: classify_minimizer(&u),
                coeffs: u,
                energy: j,
                grad_norm: dn,
                iterations: it,
                energy_trace: trace,
            });
        }
        if !j.is_finite() || j < -1e15 || energy.gram_norm(&u) > 1e10 {
            return Err(Error::NonCoercive(
                "energy unbounded below along the iterates; hypothesis limsup 2F(x,t)/t² < λ₁ fails".into(),
            ));
        }
        if dn < 1e-3 {
            if let Some(d) = newton_direction(energy.hessian(&u), &g, true) {
                let cand = axpy(1.0, &d, &u);
                let jc = energy.value(&cand);
                let dc = energy.dual_norm(&energy.gradient(&cand));
                if dc < 0.5 * dn && jc <= j + 1e-14 * j.abs().max(1.0) {
                    u = cand;
                    j = jc;
                    trace.push(j);
                    continue;
                }
            }
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = axpy(-alpha, &r, &u);
            let jc = energy.value(&cand);
            if jc <= j - 1e-4 * alpha * dn * dn {
                u = cand;
                j = jc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // the decrease is below rounding of J; take the step if it does not increase J
            let cand = axpy(-1.0, &r, &u);
            let jc = energy.value(&cand);
            if jc <= j {
                u = cand;
                j = jc;
            } else {
                break;
            }
        }
        trace.push(j);
    }
    Err(Error::Convergence {
        what: "minimization".into(),
        iterations: iter_cap,
        residual: dn,
        last: Some(u),
    })
}

/// Redistributes interior nodes at equal Gram arclength along the polygon.
fn reparametrize(energy: &Energy, path: &mut [Vec<f64>]) {
    let m = path.len();
    let mut arc = vec![0.0; m];
    for i in 1..m {
        arc[i] = arc[i - 1] + energy.gram_dist(&path[i], &path[i - 1]);
    }
    let total = arc[m - 1];
    if total <= 0.0 {
        return;
    }
    let old = path.to_vec();
    let mut seg = 0;
    for (i, node) in path.iter_mut().enumerate().take(m - 1).skip(1) {
        let target = total * i as f64 / (m - 1) as f64;
        while seg + 1 < m - 1 && arc[seg + 1] < target {
            seg += 1;
        }
        let len = arc[seg + 1] - arc[seg];
        let w = if len > 0.0 { (target - arc[seg]) / len } else { 0.0 };
        *node = old[seg]
            .iter()
            .zip(&old[seg + 1])
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect();
    }
}

/// Mountain-pass search between two low points.
///
/// A string of `path_nodes` fields from `u_minus` through `bow` to `u_plus` is
/// relaxed by steepest descent in the Gram metric with equal-arclength
/// reparametrization. The highest node is then driven uphill along the path
/// tangent and downhill across it, and finished with Newton steps on the
/// gradient.
pub fn mountain_pass(
    energy: &Energy,
    u_minus: &[f64],
    u_plus: &[f64],
    bow: &[f64],
    opts: &SolverOptions,
) -> Result<CriticalPoint> {
    let m = opts.path_nodes.max(5);
    let half = m / 2;
    let mut path: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            if i <= half {
                let w = i as f64 / half as f64;
                u_minus.iter().zip(bow).map(|(a, b)| (1.0 - w) * a + w * b).collect()
            } else {
                let w = (i - half) as f64 / (m - 1 - half) as f64;
                bow.iter().zip(u_plus).map(|(a, b)| (1.0 - w) * a + w * b).collect()
            }
        })
        .collect();
    reparametrize(energy, &mut path);
    let scale = energy.gram_dist(u_plus, u_minus).max(1e-300);
    let collapse = |path: &[Vec<f64>], energies: &[f64]| -> Option<usize> {
        let imax = (0..m).max_by(|&a, &b| energies[a].partial_cmp(&energies[b]).unwrap()).unwrap();
        let near_end = energy.gram_dist(&path[imax], u_minus).min(energy.gram_dist(&path[imax], u_plus));
        if imax == 0 || imax == m - 1 || near_end <= opts.separation_tol * scale {
            None
        } else {
            Some(imax)
        }
    };
    let dt = 0.5;
    let mut energies: Vec<f64> = path.iter().map(|p| energy.value(p)).collect();
    for _ in 0..opts.string_iters {
        let mut moved = 0.0f64;
        for node in path.iter_mut().take(m - 1).skip(1) {
            let r = energy.riesz(&energy.gradient(node));
            moved = moved.max(dt * dot(&r, &energy.gram.apply(&r)).max(0.0).sqrt());
            *node = axpy(-dt, &r, node);
        }
        reparametrize(energy, &mut path);
        energies = path.iter().map(|p| energy.value(p)).collect();
        if moved < 1e-6 * scale {
            break;
        }
    }
    let Some(imax) = collapse(&path, &energies) else {
        return Err(Error::PathCollapse(
            "path maximum sits at an endpoint; the endpoints are not separated by a ridge (try more path nodes)".into(),
        ));
    };
    // climbing stage with the tangent of the relaxed string
    let mut u = path[imax].clone();
    let tangent: Vec<f64> = path[imax + 1].iter().zip(&path[imax - 1]).map(|(a, b)| a - b).collect();
    let tn = energy.gram_norm(&tangent);
    let tau: Vec<f64> = tangent.iter().map(|v| v / tn).collect();
    let g_tau = energy.gram.apply(&tau);
    let mut dn = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..opts.iter_cap {
        iterations = it;
        let g = energy.gradient(&u);
        let r = energy.riesz(&g);
        dn = dot(&g, &r).max(0.0).sqrt();
        if dn <= 1e-4 * scale.max(1.0) {
            break;
        }
        let along = dot(&r, &g_tau);
        let step: Vec<f64> = r.iter().zip(&tau).map(|(ri, ti)| ri - 2.0 * along * ti).collect();
        u = axpy(-dt, &step, &u);
    }
    for it in 0..200 {
        let g = energy.gradient(&u);
        dn = energy.dual_norm(&g);
        iterations += 1;
        if dn <= opts.tol {
            break;
        }
        let Some(d) = newton_direction(energy.hessian(&u), &g, false) else { break };
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = axpy(alpha, &d, &u);
            let dc = energy.dual_norm(&energy.gradient(&cand));
            if dc < dn {
                u = cand;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            let _ = it;
            break;
        }
    }
    if dn > opts.tol {
        return Err(Error::Convergence {
            what: "mountain pass".into(),
            iterations,
            residual: dn,
            last: Some(u),
        });
    }
    let zero = vec![0.0; u.len()];
    let sep = energy
        .gram_dist(&u, u_minus)
        .min(energy.gram_dist(&u, u_plus))
        .min(energy.gram_dist(&u, &zero));
    if sep <= opts.separation_tol {
        return Err(Error::PathCollapse(format!(
            "pass point lies within Gram distance {sep:.3e} of 0 or an endpoint (try more path nodes)"
        )));
    }
    Ok(CriticalPoint {
        energy: energy.value(&u),
        coeffs: u,
        grad_norm: dn,
        tag: CriticalTag::MountainPass,
        iterations,
        energy_trace: energies,
    })
}

/// Norms of a field.
#[derive(Debug, Clone, Serialize)]
pub struct FieldNorms {
    pub x: f64,
    pub l2: f64,
    pub linf: f64,
    pub c0delta: f64,
}

pub fn field_norms(gram: &GramMatrix, mass: &DMatrix<f64>, space: &FeSpace, u: &[f64], s: f64) -> FieldNorms {
    let uv = DVector::from_column_slice(u);
    FieldNorms {
        x: gram.inner(u, u).max(0.0).sqrt(),
        l2: uv.dot(&(mass * &uv)).max(0.0).sqrt(),
        linf: u.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        c0delta: c0delta_norm(space, u, s),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub lambda1: f64,
    pub reaction: Reaction,
    pub solutions: Vec<CriticalPoint>,
    pub norms: Vec<FieldNorms>,
    pub verdicts: Vec<PropertyVerdict>,
    /// Nodal sign pattern of the pass point: (positive, negative) node counts.
    pub pass_sign_pattern: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ThreeSolutions {
    pub plus: CriticalPoint,
    pub minus: CriticalPoint,
    pub pass: CriticalPoint,
    pub report: SolveReport,
}

/// Positive and negative minimizers of the truncated functionals, then a
/// mountain pass between them.
pub fn solve_three(
    gram: &GramMatrix,
    mass: &DMatrix<f64>,
    space: &FeSpace,
    nl: &NonlinearitySpec,
    s: f64,
    opts: &SolverOptions,
    context: &VerdictContext,
) -> Result<ThreeSolutions> {
    let eig = eigenpairs(&gram.matrix, mass, 2.min(gram.dim()), 1e-8)?;
    let lambda1 = eig.values[0];
    nl.reaction.validate(space.dim(), s, Some(lambda1))?;
    if !matches!(nl.reaction, Reaction::Model { .. }) {
        return Err(Error::InvalidParameter("three-solution search needs the model reaction".into()));
    }
    let energy = Energy::new(gram, space, &nl.reaction, opts.quad_order)?;
    let e1 = &eig.vectors[0];
    let start: Vec<f64> = e1.iter().map(|v| 0.1 * v).collect();
    let plus = minimize(&energy.with_reaction(&nl.reaction.truncate(Sign::Plus)), &start, opts.tol, opts.iter_cap)?;
    let neg_start: Vec<f64> = start.iter().map(|v| -v).collect();
    let minus = minimize(&energy.with_reaction(&nl.reaction.truncate(Sign::Minus)), &neg_start, opts.tol, opts.iter_cap)?;

    // truncated critical points are critical for J as well once signs are right
    let recheck = |cp: &CriticalPoint| -> CriticalPoint {
        let mut c = cp.clone();
        c.energy = energy.value(&c.coeffs);
        c.grad_norm = energy.dual_norm(&energy.gradient(&c.coeffs));
        c.tag = classify_minimizer(&c.coeffs);
        c
    };
    let plus = recheck(&plus);
    let minus = recheck(&minus);

    let bow: Vec<f64> = if eig.vectors.len() > 1 {
        eig.vectors[1].iter().map(|v| 0.05 * v).collect()
    } else {
        vec![0.0; e1.len()]
    };
    let pass = mountain_pass(&energy, &minus.coeffs, &plus.coeffs, &bow, opts)?;

    let linf = |u: &[f64]| u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut verdicts = Vec::new();
    let (pmin, pinf) = (plus.coeffs.iter().cloned().fold(f64::INFINITY, f64::min), linf(&plus.coeffs));
    verdicts.push(PropertyVerdict::at_least("u+ is nonnegative (min / max|u+|)", pmin / pinf, -1e-8, context));
    verdicts.push(PropertyVerdict::above("u+ is nonzero (max|u+|)", pinf, 0.0, context));
    let (mmax, minf) = (minus.coeffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max), linf(&minus.coeffs));
    verdicts.push(PropertyVerdict::at_most("u- is nonpositive (max / max|u-|)", mmax / minf, 1e-8, context));
    verdicts.push(PropertyVerdict::above("u- is nonzero (max|u-|)", minf, 0.0, context));
    let zero = vec![0.0; e1.len()];
    for (name, other) in [("0", &zero), ("u+", &plus.coeffs), ("u-", &minus.coeffs)] {
        verdicts.push(PropertyVerdict::above(
            &format!("pass point is separated from {name} (Gram distance)"),
            energy.gram_dist(&pass.coeffs, other),
            opts.separation_tol,
            context,
        ));
    }
    for (name, cp) in [("u+", &plus), ("u-", &minus), ("pass point", &pass)] {
        verdicts.push(PropertyVerdict::at_most(
            &format!("{name} gradient dual norm"),
            cp.grad_norm,
            opts.tol,
            context,
        ));
    }
    verdicts.push(PropertyVerdict::at_least(
        "pass level is above both valleys (J(ũ) - max J(u±))",
        pass.energy - plus.energy.max(minus.energy),
        0.0,
        context,
    ));
    verdicts.push(PropertyVerdict::above(
        "u+ Hopf quotient min u/δ^s",
        hopf_quotient_min(space, &plus.coeffs, s),
        0.0,
        context,
    ));
    let neg: Vec<f64> = minus.coeffs.iter().map(|v| -v).collect();
    verdicts.push(PropertyVerdict::above(
        "-u- Hopf quotient min u/δ^s",
        hopf_quotient_min(space, &neg, s),
        0.0,
        context,
    ));
    if nl.reaction.is_odd() {
        let asym = plus.coeffs.iter().zip(&minus.coeffs).fold(0.0f64, |a, (p, m)| a.max((p + m).abs())) / pinf;
        verdicts.push(PropertyVerdict::at_most("odd symmetry u+ = -u- (relative)", asym, 1e-8, context));
    }
    let pos = pass.coeffs.iter().filter(|v| **v > 0.0).count();
    let negc = pass.coeffs.iter().filter(|v| **v < 0.0).count();
    let norms = [&plus, &minus, &pass]
        .iter()
        .map(|cp| field_norms(gram, mass, space, &cp.coeffs, s))
        .collect();
    let report = SolveReport {
        lambda1,
        reaction: nl.reaction.clone(),
        solutions: vec![plus.clone(), minus.clone(), pass.clone()],
        norms,
        verdicts,
        pass_sign_pattern: (pos, negc),
    };
    Ok(ThreeSolutions {
        plus,
        minus,
        pass,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_gram, assemble_mass, AssemblyQuadrature};
    use crate::geometry::{build_mesh, Domain};
    use crate::kernel::KernelSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn setup(h: f64) -> (FeSpace, GramMatrix, DMatrix<f64>) {
        let space = build_mesh(&Domain::interval(-1.0, 1.0).unwrap(), h).unwrap();
        let spec = KernelSpec::isotropic(1, 0.25).unwrap();
        let g = assemble_gram(&space, &spec, &AssemblyQuadrature::default()).unwrap();
        let m = assemble_mass(&space);
        (space, g, m)
    }

    fn model() -> Reaction {
        Reaction::Model {
            r: 1.5,
            q: 3.0,
            b: 1.0,
            a1: 2.0,
            beta1: 3.0,
        }
    }

    #[test]
    fn model_primitive_matches_quadrature() {
        let f = model();
        for t in [-2.5, -1.0, -0.3, 0.0, 0.2, 0.999, 1.7] {
            let g = crate::quadrature::tanh_sinh(
                |x| f.f(x),
                0.0,
                t,
                crate::quadrature::TanhSinh::default(),
            );
            let brk = if t.abs() > 1.0 {
                let c = t.signum();
                crate::quadrature::tanh_sinh(|x| f.f(x), 0.0, c, Default::default()).value
                    + crate::quadrature::tanh_sinh(|x| f.f(x), c, t, Default::default()).value
            } else {
                g.value
            };
            assert_relative_eq!(f.big_f(t), brk, max_relative = 1e-10, epsilon = 1e-14);
        }
    }

    #[test]
    fn truncation() {
        let f = model();
        let fp = f.truncate(Sign::Plus);
        for t in [-1.5, -0.2, 0.0, 0.3, 2.0] {
            assert_eq!(fp.f(t), if t >= 0.0 { f.f(t) } else { f.f(0.0) });
            if t <= 0.0 {
                assert_eq!(fp.big_f(t), 0.0);
            }
            assert_eq!(fp.truncate(Sign::Plus).f(t), fp.f(t));
            assert_eq!(fp.truncate(Sign::Plus).big_f(t), fp.big_f(t));
        }
        let fm = f.truncate(Sign::Minus);
        assert_eq!(fm.f(-0.4), f.f(-0.4));
        assert_eq!(fm.f(0.4), 0.0);
    }

    #[test]
    fn tabulated_primitive() {
        let f = Reaction::Tabulated {
            t: vec![-1.0, 0.0, 2.0],
            f: vec![-2.0, 0.0, 2.0],
        };
        assert_relative_eq!(f.big_f(1.0), 0.5, max_relative = 1e-14);
        assert_relative_eq!(f.big_f(-1.0), 1.0, max_relative = 1e-14);
        assert_relative_eq!(f.big_f(3.0), 4.5, max_relative = 1e-14);
    }

    #[test]
    fn validation_names_the_constraint() {
        let crit = 4.0; // n = 1, s = 0.25
        let bad = Reaction::Model {
            r: 1.5,
            q: crit,
            b: 1.0,
            a1: 1.0,
            beta1: 2.0,
        };
        let msg = bad.validate(1, 0.25, None).unwrap_err().to_string();
        assert!(msg.contains("1 < q < 2*_s"), "{msg}");
        let discont = Reaction::Model {
            r: 1.5,
            q: 3.0,
            b: 1.0,
            a1: 1.0,
            beta1: 2.5,
        };
        assert!(discont.validate(1, 0.25, None).is_err());
        assert!(model().validate(1, 0.25, Some(2.0)).is_err());
        assert!(model().validate(1, 0.25, Some(4.0)).is_ok());
        assert!(model().growth_constant(3.0, 100.0).is_finite());
    }

    #[test]
    fn zero_and_linear_energies() {
        let (space, g, m) = setup(1.0 / 16.0);
        let zero: NonlinearitySpec = Reaction::Zero.into();
        let u = space.interpolate(|x| (1.0 - x[0] * x[0]).powi(2));
        assert_eq!(functional_value(&g, &space, &zero, &vec![0.0; u.len()]).unwrap(), 0.0);
        assert!(functional_value(&g, &space, &zero, &u).unwrap() > 0.0);
        let eig = eigenpairs(&g.matrix, &m, 1, 1e-10).unwrap();
        let lam = 0.3 * eig.values[0];
        let lin: NonlinearitySpec = Reaction::Linear { lambda: lam }.into();
        let e = Energy::new(&g, &space, &lin.reaction, 4).unwrap();
        // P1 products are integrated exactly by the order-4 rule
        assert_relative_eq!(e.value(&eig.vectors[0]), 0.5 * (eig.values[0] - lam), max_relative = 1e-10);
        let lin1: NonlinearitySpec = Reaction::Linear { lambda: eig.values[0] }.into();
        let gr = functional_gradient(&g, &space, &lin1, &eig.vectors[0]).unwrap();
        let gn = gr.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(gn <= 1e-10 * eig.values[0] * 10.0, "{gn}");
    }

    #[test]
    fn minimize_quadratics_to_zero() {
        let (space, g, m) = setup(1.0 / 16.0);
        let eig = eigenpairs(&g.matrix, &m, 1, 1e-10).unwrap();
        let u0 = space.interpolate(|x| 1.0 - x[0].abs());
        for r in [Reaction::Zero, Reaction::Linear { lambda: 0.5 * eig.values[0] }] {
            let e = Energy::new(&g, &space, &r, 4).unwrap();
            let cp = minimize(&e, &u0, 1e-10, 1000).unwrap();
            assert!(cp.coeffs.iter().all(|v| v.abs() < 1e-9));
            assert!(cp.energy.abs() < 1e-15);
            assert_eq!(cp.tag, CriticalTag::Trivial);
        }
    }

    #[test]
    fn noncoercive_reaction_is_detected() {
        let (space, g, m) = setup(1.0 / 16.0);
        let eig = eigenpairs(&g.matrix, &m, 1, 1e-10).unwrap();
        let e = Energy::new(&g, &space, &Reaction::Linear { lambda: 1.5 * eig.values[0] }, 4).unwrap();
        assert!(matches!(
            minimize(&e, &eig.vectors[0], 1e-10, 100_000),
            Err(Error::NonCoercive(_))
        ));
    }

    #[test]
    fn single_well_collapses_the_path() {
        let (space, g, m) = setup(1.0 / 16.0);
        let eig = eigenpairs(&g.matrix, &m, 2, 1e-10).unwrap();
        let e = Energy::new(&g, &space, &Reaction::Linear { lambda: 0.5 * eig.values[0] }, 4).unwrap();
        let a: Vec<f64> = eig.vectors[0].iter().map(|v| 0.5 * v).collect();
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        let bow: Vec<f64> = eig.vectors[1].iter().map(|v| 0.05 * v).collect();
        assert!(matches!(
            mountain_pass(&e, &b, &a, &bow, &SolverOptions::default()),
            Err(Error::PathCollapse(_))
        ));
    }

    #[test]
    fn model_energy_is_coercive_and_negative_near_zero() {
        let (space, g, m) = setup(1.0 / 16.0);
        let eig = eigenpairs(&g.matrix, &m, 1, 1e-10).unwrap();
        let r = Reaction::model_from_ratio(1.5, 3.0, 0.9, 0.5, eig.values[0]);
        let e = Energy::new(&g, &space, &r, 4).unwrap();
        let e1 = &eig.vectors[0];
        let at = |t: f64| e.value(&e1.iter().map(|v| t * v).collect::<Vec<_>>());
        assert!(at(10.0) < at(100.0) && at(100.0) < at(1000.0) && at(1000.0) > 0.0);
        assert!(at(-1000.0) > 0.0);
        assert!((1..=50).any(|k| at(0.01 * k as f64) < 0.0));
        let u: Vec<f64> = e1.iter().map(|v| 0.3 * v.abs()).collect();
        let ep = e.with_reaction(&r.truncate(Sign::Plus));
        assert_eq!(ep.value(&u), e.value(&u));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn truncation_is_idempotent(t in -5.0f64..5.0) {
            let f = model();
            for s in [Sign::Plus, Sign::Minus] {
                let once = f.truncate(s);
                let twice = once.truncate(s);
                prop_assert_eq!(once.f(t), twice.f(t));
                prop_assert_eq!(once.big_f(t), twice.big_f(t));
            }
        }

        #[test]
        fn model_is_odd(t in -5.0f64..5.0) {
            let f = model();
            prop_assert_eq!(f.f(-t), -f.f(t));
            prop_assert_eq!(f.big_f(-t), f.big_f(t));
        }
    }
}
