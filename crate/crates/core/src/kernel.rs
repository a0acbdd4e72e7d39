//! Anisotropic singular kernels `K(y) = a(y/|y|) |y|^{-n-2s}` and their Fourier multiplier.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{tanh_sinh, tanh_sinh_panels, Estimate, GaussRule, TanhSinh};

/// Machine forms of the angular density.
///
/// Angles are measured counterclockwise from the positive first axis. Sectors
/// split `[0, 2π)` into equal arcs; samples sit at `2πj/k` and are joined by
/// periodic linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum DensityKind {
    Constant(f64),
    Sectors(Vec<f64>),
    Samples(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DensityRepr {
    #[serde(flatten)]
    kind: DensityKind,
    #[serde(default = "default_true")]
    even: bool,
}

fn default_true() -> bool {
    true
}

/// Strictly positive angular density on the unit circle (or on `{-1, +1}` in 1D).
///
/// When `even` is set, construction rejects data with `a(θ) ≠ a(θ + π)`.
/// Clearing the flag admits non-even densities, which are only useful as
/// negative controls: the structural check then reports the evenness failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityRepr", into = "DensityRepr")]
pub struct AngularDensity {
    kind: DensityKind,
    even: bool,
}

impl TryFrom<DensityRepr> for AngularDensity {
    type Error = Error;
    fn try_from(r: DensityRepr) -> Result<Self> {
        AngularDensity::new(r.kind, r.even)
    }
}

impl From<AngularDensity> for DensityRepr {
    fn from(a: AngularDensity) -> Self {
        DensityRepr {
            kind: a.kind,
            even: a.even,
        }
    }
}

impl AngularDensity {
    pub fn new(kind: DensityKind, even: bool) -> Result<Self> {
        let values: Vec<f64> = match &kind {
            DensityKind::Constant(c) => vec![*c],
            DensityKind::Sectors(v) | DensityKind::Samples(v) => v.clone(),
        };
        if values.is_empty() {
            return Err(Error::InvalidParameter(
                "angular density needs at least one value".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidParameter(
                "angular density must satisfy inf a > 0".into(),
            ));
        }
        let density = AngularDensity { kind, even };
        if even && !density.data_is_even() {
            return Err(Error::InvalidParameter(
                "angular density flagged even but a(θ) ≠ a(θ+π)".into(),
            ));
        }
        Ok(density)
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(DensityKind::Constant(value), true)
    }

    /// Tabulates `f` at `count` uniform angles.
    pub fn sampled<F: Fn(f64) -> f64>(count: usize, even: bool, f: F) -> Result<Self> {
        let values = (0..count)
            .map(|j| f(TAU * j as f64 / count as f64))
            .collect();
        Self::new(DensityKind::Samples(values), even)
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    pub fn is_flagged_even(&self) -> bool {
        self.even
    }

    fn data_is_even(&self) -> bool {
        match &self.kind {
            DensityKind::Constant(_) => true,
            DensityKind::Sectors(v) | DensityKind::Samples(v) => {
                let k = v.len();
                if k == 1 {
                    return true;
                }
                k % 2 == 0
                    && (0..k / 2).all(|j| (v[j] - v[j + k / 2]).abs() <= 1e-14 * v[j].abs())
            }
        }
    }

    /// Density at angle `theta` (any real; reduced mod 2π).
    pub fn eval_angle(&self, theta: f64) -> f64 {
        match &self.kind {
            DensityKind::Constant(c) => *c,
            DensityKind::Sectors(v) => {
                let k = v.len();
                let t = theta.rem_euclid(TAU);
                let j = ((t / TAU) * k as f64).floor() as usize;
                v[j.min(k - 1)]
            }
            DensityKind::Samples(v) => {
                let k = v.len();
                let t = theta.rem_euclid(TAU) / TAU * k as f64;
                let j = t.floor();
                let frac = t - j;
                let j = (j as usize) % k;
                let jn = (j + 1) % k;
                (1.0 - frac) * v[j] + frac * v[jn]
            }
        }
    }

    /// Density in the direction of a nonzero vector of dimension 1 or 2.
    pub fn eval_direction(&self, dir: &[f64]) -> f64 {
        match dir.len() {
            1 => match &self.kind {
                DensityKind::Constant(c) => *c,
                _ => self.eval_angle(if dir[0] >= 0.0 { 0.0 } else { PI }),
            },
            _ => self.eval_angle(dir[1].atan2(dir[0])),
        }
    }

    pub fn infimum(&self) -> f64 {
        match &self.kind {
            DensityKind::Constant(c) => *c,
            DensityKind::Sectors(v) | DensityKind::Samples(v) => {
                v.iter().cloned().fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn supremum(&self) -> f64 {
        match &self.kind {
            DensityKind::Constant(c) => *c,
            DensityKind::Sectors(v) | DensityKind::Samples(v) => {
                v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// Angles in `[0, 2π]` where the density has a jump or a kink, including both ends.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            DensityKind::Constant(_) => vec![0.0, TAU],
            DensityKind::Sectors(v) | DensityKind::Samples(v) => {
                let k = v.len();
                (0..=k).map(|j| TAU * j as f64 / k as f64).collect()
            }
        }
    }

    /// `∫_{S^{n-1}} a`, with the counting measure on `S^0`.
    pub fn sphere_integral(&self, n: usize) -> f64 {
        if n == 1 {
            return self.eval_angle(0.0) + self.eval_angle(PI);
        }
        // piecewise linear between breakpoints: two-point Gauss is exact
        let g = GaussRule::new(2);
        let brk = self.breakpoints();
        g.integrate_panels(&brk, |t| self.eval_angle(t))
    }
}

/// Kernel specification: dimension, order and angular density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct KernelSpec {
    n: usize,
    s: f64,
    a: AngularDensity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KernelRepr {
    n: usize,
    s: f64,
    a: AngularDensity,
}

impl TryFrom<KernelRepr> for KernelSpec {
    type Error = Error;
    fn try_from(r: KernelRepr) -> Result<Self> {
        KernelSpec::new(r.n, r.s, r.a)
    }
}

impl From<KernelSpec> for KernelRepr {
    fn from(k: KernelSpec) -> Self {
        KernelRepr {
            n: k.n,
            s: k.s,
            a: k.a,
        }
    }
}

impl KernelSpec {
    pub fn new(n: usize, s: f64, a: AngularDensity) -> Result<Self> {
        if n != 1 && n != 2 {
            return Err(Error::InvalidParameter(format!(
                "dimension n must be 1 or 2, got {n}"
            )));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "order s must lie in (0,1), got {s}"
            )));
        }
        if (n as f64) <= 2.0 * s {
            return Err(Error::InvalidParameter(format!(
                "n > 2s required, got n={n}, s={s}"
            )));
        }
        if n == 1 && !matches!(a.kind, DensityKind::Constant(_)) {
            return Err(Error::InvalidParameter(
                "in one dimension an even density is constant; use kind \"constant\"".into(),
            ));
        }
        Ok(KernelSpec { n, s, a })
    }

    /// `K(y) = |y|^{-n-2s}`, the unnormalized fractional Laplacian kernel.
    pub fn isotropic(n: usize, s: f64) -> Result<Self> {
        Self::new(n, s, AngularDensity::constant(1.0)?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn density(&self) -> &AngularDensity {
        &self.a
    }

    /// Lower kernel constant `β = inf a`.
    pub fn beta(&self) -> f64 {
        self.a.infimum()
    }

    /// Fractional critical exponent `2n/(n-2s)`.
    pub fn critical_exponent(&self) -> f64 {
        let n = self.n as f64;
        2.0 * n / (n - 2.0 * self.s)
    }

    /// The same kernel with the density multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let kind = match &self.a.kind {
            DensityKind::Constant(c) => DensityKind::Constant(c * factor),
            DensityKind::Sectors(v) => DensityKind::Sectors(v.iter().map(|x| x * factor).collect()),
            DensityKind::Samples(v) => DensityKind::Samples(v.iter().map(|x| x * factor).collect()),
        };
        Self::new(self.n, self.s, AngularDensity::new(kind, self.a.even)?)
    }

    /// Evaluates `K(y)`.
    pub fn eval(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: y.len(),
            });
        }
        let r = norm(y);
        if r == 0.0 {
            return Err(Error::Domain("kernel is singular at y = 0".into()));
        }
        Ok(self.eval_unchecked(y, r))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, y: &[f64], r: f64) -> f64 {
        self.a.eval_direction(y) * r.powf(-(self.n as f64) - 2.0 * self.s)
    }

    /// Symmetrized density `(a(θ) + a(θ+π)) / 2`.
    #[inline]
    pub(crate) fn symmetric_density(&self, theta: f64) -> f64 {
        if self.a.even {
            self.a.eval_angle(theta)
        } else {
            0.5 * (self.a.eval_angle(theta) + self.a.eval_angle(theta + PI))
        }
    }

    /// Angular breakpoints of the symmetrized density.
    pub(crate) fn symmetric_breakpoints(&self) -> Vec<f64> {
        let mut b = self.a.breakpoints();
        if !self.a.even {
            let shifted: Vec<f64> = b.iter().map(|t| (t + PI).rem_euclid(TAU)).collect();
            b.extend(shifted);
            b.push(TAU);
        }
        sort_dedup(b)
    }
}

pub(crate) fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn sort_dedup(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    v
}

/// Quadrature controls for [`multiplier_eval`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MultiplierQuadrature {
    /// Relative tolerance; exceeding it is reported as a quadrature failure.
    pub rel_tol: f64,
    /// Oscillation periods integrated numerically before the asymptotic tail.
    pub periods: usize,
    /// Gauss points per half period.
    pub panel_order: usize,
    /// Terms of the asymptotic tail expansion.
    pub tail_terms: usize,
}

impl Default for MultiplierQuadrature {
    fn default() -> Self {
        MultiplierQuadrature {
            rel_tol: 1e-8,
            periods: 32,
            panel_order: 16,
            tail_terms: 8,
        }
    }
}

/// `∫_0^∞ (1 - cos(c r)) r^{-1-2s} dr` for `c ≥ 0`, with an error estimate.
///
/// Split at `r = 1/c`. The inner piece goes to tanh-sinh (the integrand behaves
/// like `r^{1-2s}` at the origin). On the outer piece the monotone part
/// `r^{-1-2s}` is integrated exactly, the oscillatory part by Gauss panels over
/// half periods, and the remaining tail by its asymptotic expansion.
fn radial_multiplier(c: f64, s: f64, q: &MultiplierQuadrature, rule: &GaussRule) -> Estimate {
    if c == 0.0 {
        return Estimate::new(0.0, 0.0);
    }
    let alpha = 1.0 + 2.0 * s;
    let r1 = 1.0 / c;
    let near = tanh_sinh(
        |r| {
            let h = (0.5 * c * r).sin();
            2.0 * h * h * r.powf(-alpha)
        },
        0.0,
        r1,
        TanhSinh {
            rel_tol: 1e-13,
            abs_tol: 0.0,
            max_level: 9,
        },
    );
    let monotone = r1.powf(-2.0 * s) / (2.0 * s);

    let half = PI / c;
    let panels = 2 * q.periods;
    let coarse = GaussRule::new((q.panel_order * 3 / 4).max(4));
    let mut osc = 0.0;
    let mut osc_coarse = 0.0;
    for k in 0..panels {
        let a = r1 + k as f64 * half;
        let b = a + half;
        let f = |r: f64| (c * r).cos() * r.powf(-alpha);
        osc += rule.integrate(a, b, f);
        osc_coarse += coarse.integrate(a, b, f);
    }
    let big_r = r1 + panels as f64 * half;
    // ∫_R^∞ e^{icr} r^{-α} dr = -e^{icR} Σ_k (α)_k R^{-α-k} / (ic)^{k+1}
    let mut tail_re = 0.0;
    let mut rising = 1.0;
    let mut last_term = 0.0;
    for k in 0..=q.tail_terms {
        let mag = rising * big_r.powf(-alpha - k as f64) / c.powi(k as i32 + 1);
        // 1/(i)^{k+1} = (-i)^{k+1}; real part of -e^{icR}(-i)^{k+1}
        let phase = c * big_r - 0.5 * PI * (k + 1) as f64;
        let term = -mag * phase.cos();
        if k < q.tail_terms {
            tail_re += term;
        } else {
            last_term = mag;
        }
        rising *= alpha + k as f64;
    }
    let value = near.value + monotone - (osc + tail_re);
    let error = near.error + (osc - osc_coarse).abs() + last_term + 1e-15 * value.abs();
    Estimate::new(value, error)
}

/// Fourier multiplier `S(ξ) = ∫ (1 - cos(ξ·z)) K(z) dz`.
///
/// For `a ≡ 1` the ratio `S(ξ)/|ξ|^{2s}` is a constant depending only on
/// `(n, s)`; it is not normalized to one.
pub fn multiplier_eval(
    spec: &KernelSpec,
    xi: &[f64],
    quad: &MultiplierQuadrature,
) -> Result<Estimate> {
    if xi.len() != spec.n {
        return Err(Error::DimensionMismatch {
            expected: spec.n,
            found: xi.len(),
        });
    }
    let xi_norm = norm(xi);
    if xi_norm == 0.0 {
        return Ok(Estimate::new(0.0, 0.0));
    }
    let s = spec.s;
    let rule = GaussRule::new(quad.panel_order);
    let est = if spec.n == 1 {
        let i = radial_multiplier(xi_norm, s, quad, &rule);
        let a_sum = spec.a.eval_angle(0.0) + spec.a.eval_angle(PI);
        Estimate::new(a_sum * i.value, a_sum * i.error)
    } else {
        let phi = xi[1].atan2(xi[0]);
        let mut brk = spec.a.breakpoints();
        for off in [0.5 * PI, 1.5 * PI] {
            brk.push((phi + off).rem_euclid(TAU));
        }
        let brk = sort_dedup(brk);
        let opts = TanhSinh {
            rel_tol: 1e-11,
            abs_tol: 0.0,
            max_level: 7,
        };
        // worst relative radial error over all sampled directions
        let mut radial_rel: f64 = 0.0;
        let outer = tanh_sinh_panels(
            |t| {
                let c = (xi[0] * t.cos() + xi[1] * t.sin()).abs();
                let i = radial_multiplier(c, s, quad, &rule);
                if i.value > 0.0 {
                    radial_rel = radial_rel.max(i.error / i.value);
                }
                spec.a.eval_angle(t) * i.value
            },
            &brk,
            opts,
        );
        Estimate::new(outer.value, outer.error + radial_rel * outer.value.abs())
    };
    if !(est.value.is_finite()) || est.error > quad.rel_tol * est.value.abs() {
        return Err(Error::Quadrature {
            what: "multiplier".into(),
            achieved: est.error / est.value.abs().max(f64::MIN_POSITIVE),
            requested: quad.rel_tol,
        });
    }
    Ok(est)
}

/// Outcome of one structural check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    pub value: f64,
}

/// Integrability, lower bound and evenness of the kernel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructuralReport {
    pub integrability: PropertyCheck,
    pub lower_bound: PropertyCheck,
    pub evenness: PropertyCheck,
}

impl StructuralReport {
    pub fn all_pass(&self) -> bool {
        self.integrability.passed && self.lower_bound.passed && self.evenness.passed
    }
}

/// Checks `∫ min(|y|²,1) K < ∞`, `K ≥ β|y|^{-n-2s}` and `K(y) = K(-y)` at sampled directions.
pub fn check_structural_properties(spec: &KernelSpec) -> StructuralReport {
    let s = spec.s;
    // radial part: ∫_0^1 r^{1-2s} dr + ∫_1^∞ r^{-1-2s} dr
    let radial = 1.0 / (2.0 - 2.0 * s) + 1.0 / (2.0 * s);
    let m_k = spec.a.sphere_integral(spec.n) * radial;

    let beta = spec.beta();
    let mut angles: Vec<f64> = (0..720).map(|j| TAU * j as f64 / 720.0).collect();
    angles.extend(spec.a.breakpoints());
    let dirs: Vec<Vec<f64>> = if spec.n == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        angles.iter().map(|t| vec![t.cos(), t.sin()]).collect()
    };
    let mut min_ratio = f64::INFINITY;
    let mut max_asym: f64 = 0.0;
    for d in &dirs {
        for r in [0.25, 1.0, 3.0] {
            let y: Vec<f64> = d.iter().map(|v| v * r).collect();
            let ny: Vec<f64> = y.iter().map(|v| -v).collect();
            let ky = spec.eval_unchecked(&y, r);
            let kny = spec.eval_unchecked(&ny, r);
            let lower = r.powf(-(spec.n as f64) - 2.0 * s);
            min_ratio = min_ratio.min(ky / lower);
            max_asym = max_asym.max((ky - kny).abs() / ky.max(kny));
        }
    }
    StructuralReport {
        integrability: PropertyCheck {
            name: "integrability of min(|y|^2,1) K".into(),
            passed: m_k.is_finite() && m_k > 0.0,
            value: m_k,
        },
        lower_bound: PropertyCheck {
            name: "K(y) >= beta |y|^(-n-2s)".into(),
            passed: beta > 0.0 && min_ratio >= beta * (1.0 - 1e-12),
            value: min_ratio,
        },
        evenness: PropertyCheck {
            name: "K(y) = K(-y)".into(),
            passed: max_asym <= 1e-12,
            value: max_asym,
        },
    }
}
