//! Quadrature building blocks shared by the assembly, operator and kernel modules.
//!
//! Gauss-Legendre rules for smooth integrands, a collapsed tensor rule on the
//! reference triangle, and a double-exponential (tanh-sinh) integrator for
//! integrands with algebraic endpoint singularities.

use std::f64::consts::{FRAC_PI_2, PI};

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Builds the `m`-point rule by Newton iteration on the Legendre recurrence.
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "Gauss rule needs at least one point");
        let mut nodes = vec![0.0; m];
        let mut weights = vec![0.0; m];
        let mf = m as f64;
        for i in 0..(m + 1) / 2 {
            let mut x = (PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(m, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(m, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[m - 1 - i] = x;
            weights[i] = w;
            weights[m - 1 - i] = w;
        }
        if m % 2 == 1 {
            nodes[m / 2] = 0.0;
        }
        GaussRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Composite rule over consecutive breakpoints.
    pub fn integrate_panels<F: FnMut(f64) -> f64>(&self, breaks: &[f64], mut f: F) -> f64 {
        breaks
            .windows(2)
            .map(|p| self.integrate(p[0], p[1], &mut f))
            .sum()
    }
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Collapsed tensor rule on the reference triangle `{ξ, η ≥ 0, ξ + η ≤ 1}`.
/// Returns `(ξ, η, weight)`; weights sum to `1/2`.
pub fn triangle_rule(m: usize) -> Vec<(f64, f64, f64)> {
    let g = GaussRule::new(m);
    let mut out = Vec::with_capacity(m * m);
    for (u, wu) in g.mapped(0.0, 1.0) {
        for (v, wv) in g.mapped(0.0, 1.0) {
            out.push((u, (1.0 - u) * v, wu * wv * (1.0 - u)));
        }
    }
    out
}

/// A value with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn new(value: f64, error: f64) -> Self {
        Estimate { value, error }
    }
}

impl std::ops::Add for Estimate {
    type Output = Estimate;
    fn add(self, rhs: Estimate) -> Estimate {
        Estimate::new(self.value + rhs.value, self.error + rhs.error)
    }
}

impl std::iter::Sum for Estimate {
    fn sum<I: Iterator<Item = Estimate>>(iter: I) -> Estimate {
        iter.fold(Estimate::new(0.0, 0.0), |a, b| a + b)
    }
}

/// Settings for [`tanh_sinh`].
#[derive(Debug, Clone, Copy)]
pub struct TanhSinh {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_level: u32,
}

impl Default for TanhSinh {
    fn default() -> Self {
        TanhSinh {
            rel_tol: 1e-12,
            abs_tol: 1e-15,
            max_level: 9,
        }
    }
}

const TANH_SINH_TMAX: f64 = 4.5;

/// Double-exponential quadrature of `f` over `[a, b]`.
///
/// Abscissae are generated from their distance to the nearer endpoint so that
/// algebraic endpoint singularities are sampled without cancellation. The error
/// estimate is the difference between the last two levels plus a rounding floor.
pub fn tanh_sinh<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: TanhSinh) -> Estimate {
    if a == b {
        return Estimate::new(0.0, 0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let len = hi - lo;
    let mut sample = |t: f64| -> (f64, f64) {
        let u = FRAC_PI_2 * t.sinh();
        let ch = u.cosh();
        let w = 0.5 * len * FRAC_PI_2 * t.cosh() / (ch * ch);
        let x = if t < 0.0 {
            lo + len / (1.0 + (-2.0 * u).exp())
        } else {
            hi - len / (1.0 + (2.0 * u).exp())
        };
        if x <= lo || x >= hi || w == 0.0 {
            return (0.0, 0.0);
        }
        let fx = f(x);
        (w * fx, (w * fx).abs())
    };

    // level 0: step 1
    let mut h = 1.0;
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    let n0 = (TANH_SINH_TMAX / h) as i64;
    for j in -n0..=n0 {
        let (v, av) = sample(j as f64 * h);
        sum += v;
        abs_sum += av;
    }
    let mut prev = sum * h;
    let mut value = prev;
    let mut err = f64::INFINITY;
    for level in 1..=opts.max_level {
        h *= 0.5;
        let n = (TANH_SINH_TMAX / h) as i64;
        let mut j = -n + if n % 2 == 0 { 1 } else { 0 };
        while j <= n {
            let (v, av) = sample(j as f64 * h);
            sum += v;
            abs_sum += av;
            j += 2;
        }
        value = sum * h;
        err = (value - prev).abs();
        let floor = 64.0 * f64::EPSILON * abs_sum * h;
        err = err.max(floor);
        // agreement of the coarsest levels is often accidental
        if level >= 3 && err <= opts.abs_tol.max(opts.rel_tol * value.abs()) {
            break;
        }
        prev = value;
    }
    Estimate::new(sign * value, err)
}

/// Composite tanh-sinh over sorted breakpoints.
pub fn tanh_sinh_panels<F: FnMut(f64) -> f64>(
    mut f: F,
    breaks: &[f64],
    opts: TanhSinh,
) -> Estimate {
    breaks
        .windows(2)
        .filter(|p| p[1] > p[0])
        .map(|p| tanh_sinh(&mut f, p[0], p[1], opts))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_rule_integrates_polynomials_exactly() {
        for m in 1..12 {
            let g = GaussRule::new(m);
            for deg in 0..(2 * m) {
                let v = g.integrate(0.0, 2.0, |x| x.powi(deg as i32));
                let exact = 2f64.powi(deg as i32 + 1) / (deg as f64 + 1.0);
                assert_relative_eq!(v, exact, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn triangle_rule_area_and_moments() {
        let r = triangle_rule(4);
        let area: f64 = r.iter().map(|p| p.2).sum();
        assert_relative_eq!(area, 0.5, max_relative = 1e-14);
        // ∫ ξ² η dA = 2!1!/5! = 1/60
        let m: f64 = r.iter().map(|&(x, y, w)| w * x * x * y).sum();
        assert_relative_eq!(m, 1.0 / 60.0, max_relative = 1e-13);
    }

    #[test]
    fn tanh_sinh_handles_endpoint_singularity() {
        let e = tanh_sinh(|x| x.powf(-0.5), 0.0, 1.0, TanhSinh::default());
        assert_relative_eq!(e.value, 2.0, max_relative = 1e-11);
        let e = tanh_sinh(|x| (1.0 - x).powf(0.25), 0.0, 1.0, TanhSinh::default());
        assert_relative_eq!(e.value, 0.8, max_relative = 1e-11);
        assert!(e.error < 1e-9);
    }

    #[test]
    fn tanh_sinh_reversed_limits_flip_sign() {
        let a = tanh_sinh(|x| x.exp(), 0.0, 1.0, TanhSinh::default());
        let b = tanh_sinh(|x| x.exp(), 1.0, 0.0, TanhSinh::default());
        assert_relative_eq!(a.value, -b.value);
        assert_relative_eq!(a.value, 1f64.exp() - 1.0, max_relative = 1e-13);
    }
}
