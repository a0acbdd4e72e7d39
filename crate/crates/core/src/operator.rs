//! Pointwise evaluation of `L_K u(x)` for closed-form test functions, through
//! the principal value and through the second-difference integral.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{sort_dedup, KernelSpec};
use crate::quadrature::{tanh_sinh, tanh_sinh_panels, Estimate, GaussRule, TanhSinh};

fn one() -> f64 {
    1.0
}

/// Bounded test functions on `ℝⁿ` with known smoothness structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClosedFormFunction {
    /// `A exp(-|x-c|²/w²)`.
    Gaussian {
        center: Vec<f64>,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `(R² - |x-c|²)_+^p`.
    Torsion {
        center: Vec<f64>,
        radius: f64,
        exponent: f64,
    },
    /// `(c₀ + c₁ (x-c)₁ + c₂ |x-c|²) (1 - |x-c|²/R²)_+³`.
    PolyCutoff {
        center: Vec<f64>,
        radius: f64,
        coeffs: [f64; 3],
    },
    Constant { value: f64 },
    /// `Σ αₖ uₖ`.
    Combination { terms: Vec<(f64, ClosedFormFunction)> },
}

impl ClosedFormFunction {
    pub fn gaussian(center: &[f64], width: f64) -> Self {
        ClosedFormFunction::Gaussian {
            center: center.to_vec(),
            width,
            amplitude: 1.0,
        }
    }

    /// `(1 - |x|²)_+^s` on the unit ball of `ℝⁿ`.
    pub fn torsion(n: usize, s: f64) -> Self {
        ClosedFormFunction::Torsion {
            center: vec![0.0; n],
            radius: 1.0,
            exponent: s,
        }
    }

    /// Every variant is globally bounded.
    pub fn is_bounded(&self) -> bool {
        true
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d2 = |c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        match self {
            ClosedFormFunction::Gaussian {
                center,
                width,
                amplitude,
            } => amplitude * (-d2(center) / (width * width)).exp(),
            ClosedFormFunction::Torsion {
                center,
                radius,
                exponent,
            } => {
                let v = radius * radius - d2(center);
                if v > 0.0 {
                    v.powf(*exponent)
                } else {
                    0.0
                }
            }
            ClosedFormFunction::PolyCutoff {
                center,
                radius,
                coeffs,
            } => {
                let r2 = d2(center);
                let cut = 1.0 - r2 / (radius * radius);
                if cut <= 0.0 {
                    return 0.0;
                }
                (coeffs[0] + coeffs[1] * (x[0] - center[0]) + coeffs[2] * r2) * cut.powi(3)
            }
            ClosedFormFunction::Constant { value } => *value,
            ClosedFormFunction::Combination { terms } => terms.iter().map(|(a, u)| a * u.eval(x)).sum(),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        let bad = |c: &Vec<f64>| c.len() != n;
        match self {
            ClosedFormFunction::Gaussian { center, .. }
            | ClosedFormFunction::Torsion { center, .. }
            | ClosedFormFunction::PolyCutoff { center, .. } => {
                if bad(center) {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: center.len(),
                    });
                }
            }
            ClosedFormFunction::Combination { terms } => {
                for (_, u) in terms {
                    u.check_dim(n)?;
                }
            }
            ClosedFormFunction::Constant { .. } => {}
        }
        Ok(())
    }

    /// Spheres `|y - c| = R` across which the function is not smooth, with a
    /// flag for compact support.
    fn spheres(&self, out: &mut Vec<(Vec<f64>, f64)>) {
        match self {
            ClosedFormFunction::Torsion { center, radius, .. }
            | ClosedFormFunction::PolyCutoff { center, radius, .. } => out.push((center.clone(), *radius)),
            ClosedFormFunction::Combination { terms } => terms.iter().for_each(|(_, u)| u.spheres(out)),
            _ => {}
        }
    }

    /// Radius beyond which the function is negligible along every ray from `x`
    /// (exactly zero for compactly supported terms).
    fn reach(&self, x: &[f64]) -> f64 {
        let dist = |c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        match self {
            ClosedFormFunction::Gaussian { center, width, .. } => dist(center) + 9.6 * width,
            ClosedFormFunction::Torsion { center, radius, .. }
            | ClosedFormFunction::PolyCutoff { center, radius, .. } => dist(center) + radius,
            ClosedFormFunction::Constant { .. } => 0.0,
            ClosedFormFunction::Combination { terms } => terms.iter().map(|(_, u)| u.reach(x)).fold(0.0, f64::max),
        }
    }

    /// Length scale on which the function is smooth around `x`.
    fn smooth_radius(&self, x: &[f64]) -> f64 {
        let dist = |c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        match self {
            ClosedFormFunction::Gaussian { width, .. } => *width,
            ClosedFormFunction::Torsion { center, radius, .. }
            | ClosedFormFunction::PolyCutoff { center, radius, .. } => (radius - dist(center)).abs(),
            ClosedFormFunction::Constant { .. } => f64::INFINITY,
            ClosedFormFunction::Combination { terms } => {
                terms.iter().map(|(_, u)| u.smooth_radius(x)).fold(f64::INFINITY, f64::min)
            }
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            ClosedFormFunction::Constant { .. } => true,
            ClosedFormFunction::Combination { terms } => terms.iter().all(|(_, u)| u.is_constant()),
            _ => false,
        }
    }
}

/// Quadrature controls for pointwise evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorQuadrature {
    /// Gauss order per angular panel (2D).
    pub angular_order: usize,
    /// Minimum number of angular panels (2D).
    pub angular_panels: usize,
    pub rel_tol: f64,
    /// Richardson columns for the principal value.
    pub richardson: usize,
    /// Number of ε levels for the default sequence.
    pub levels: usize,
}

impl Default for OperatorQuadrature {
    fn default() -> Self {
        OperatorQuadrature {
            angular_order: 16,
            angular_panels: 8,
            rel_tol: 1e-13,
            richardson: 5,
            levels: 12,
        }
    }
}

struct Direction {
    theta: f64,
    dir: Vec<f64>,
    /// Weights in the main rule and in the lower-order check rule.
    weight: f64,
    check_weight: f64,
}

/// Directions with weights: `S⁰ = {±1}` in 1D, Gauss panels on the circle in 2D.
fn directions(spec: &KernelSpec, q: &OperatorQuadrature) -> Vec<Direction> {
    if spec.n() == 1 {
        return [(0.0, 1.0), (std::f64::consts::PI, -1.0)]
            .into_iter()
            .map(|(t, d)| Direction {
                theta: t,
                dir: vec![d],
                weight: 1.0,
                check_weight: 1.0,
            })
            .collect();
    }
    let mut brk = spec.density().breakpoints();
    brk.extend((0..=q.angular_panels).map(|k| TAU * k as f64 / q.angular_panels as f64));
    let brk = sort_dedup(brk);
    let main = GaussRule::new(q.angular_order);
    let check = GaussRule::new((q.angular_order * 3 / 4).max(2));
    let mut out = Vec::new();
    for w in brk.windows(2) {
        for (rule, is_main) in [(&main, true), (&check, false)] {
            for (t, wt) in rule.mapped(w[0], w[1]) {
                out.push(Direction {
                    theta: t,
                    dir: vec![t.cos(), t.sin()],
                    weight: if is_main { wt } else { 0.0 },
                    check_weight: if is_main { 0.0 } else { wt },
                });
            }
        }
    }
    out
}

fn ray_roots(x: &[f64], dir: &[f64], spheres: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let mut roots = Vec::new();
    for (c, r) in spheres {
        let p: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
        let b = p.iter().zip(dir).map(|(a, d)| a * d).sum::<f64>();
        let cc = p.iter().map(|a| a * a).sum::<f64>() - r * r;
        let disc = b * b - cc;
        if disc > 0.0 {
            let sq = disc.sqrt();
            for t in [-b - sq, -b + sq] {
                if t > 0.0 {
                    roots.push(t);
                }
            }
        }
    }
    roots
}

/// Along one ray: panels from `start` to the cutoff with kinks as breakpoints.
fn far_panels(start: f64, cutoff: f64, roots: &[f64], scale: f64) -> Vec<f64> {
    let mut brk = vec![start];
    brk.extend(roots.iter().cloned().filter(|r| *r > start && *r < cutoff));
    // panels no wider than the smoothness scale for slowly varying integrands
    let mut t = start + scale;
    while t < cutoff {
        brk.push(t);
        t += scale;
    }
    brk.push(cutoff.max(start));
    sort_dedup(brk)
}

/// Result of a pointwise evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointValue {
    pub value: f64,
    pub error: f64,
}

fn setup(spec: &KernelSpec, u: &ClosedFormFunction, x: &[f64]) -> Result<(f64, Vec<(Vec<f64>, f64)>)> {
    if x.len() != spec.n() {
        return Err(Error::DimensionMismatch {
            expected: spec.n(),
            found: x.len(),
        });
    }
    u.check_dim(spec.n())?;
    let eps0 = 0.5 * u.smooth_radius(x).min(1.0);
    if !(eps0 > 0.0) {
        return Err(Error::Domain(
            "test function is not twice differentiable at the evaluation point".into(),
        ));
    }
    let mut spheres = Vec::new();
    u.spheres(&mut spheres);
    Ok((eps0, spheres))
}

/// Default geometric sequence `ε_k = ε₀ 2^{-k}` with `ε₀` inside the smooth region.
pub fn default_eps_sequence(spec: &KernelSpec, u: &ClosedFormFunction, x: &[f64], q: &OperatorQuadrature) -> Result<Vec<f64>> {
    let (eps0, _) = setup(spec, u, x)?;
    Ok((0..q.levels).map(|k| eps0 * 0.5f64.powi(k as i32)).collect())
}

/// `L_K u(x)` via `½ ∫ (2u(x) - u(x+z) - u(x-z)) K(z) dz`.
pub fn lk_pointwise_sd(spec: &KernelSpec, u: &ClosedFormFunction, x: &[f64], q: &OperatorQuadrature) -> Result<PointValue> {
    let (eps0, spheres) = setup(spec, u, x)?;
    if u.is_constant() {
        return Ok(PointValue { value: 0.0, error: 0.0 });
    }
    let s = spec.s();
    let ux = u.eval(x);
    let opts = TanhSinh {
        rel_tol: q.rel_tol,
        abs_tol: 0.0,
        max_level: 10,
    };
    let reach = u.reach(x);
    let scale = eps0.max(1e-3);
    let mut main = Estimate::new(0.0, 0.0);
    let mut check = 0.0;
    let mut magnitude = 0.0;
    for d in directions(spec, q) {
        let a = spec.density().eval_angle(d.theta);
        let neg: Vec<f64> = d.dir.iter().map(|v| -v).collect();
        let mut roots = ray_roots(x, &d.dir, &spheres);
        roots.extend(ray_roots(x, &neg, &spheres));
        let cutoff = reach.max(eps0);
        let sd = |r: f64| {
            let yp: Vec<f64> = x.iter().zip(&d.dir).map(|(a, b)| a + r * b).collect();
            let ym: Vec<f64> = x.iter().zip(&d.dir).map(|(a, b)| a - r * b).collect();
            (2.0 * ux - u.eval(&yp) - u.eval(&ym)) * r.powf(-1.0 - 2.0 * s)
        };
        // below r_t the second difference is pure rounding noise; its leading
        // r² behavior is integrated exactly instead
        let r_t = 1e-4 * eps0;
        let inner = sd(r_t) * r_t / (2.0 - 2.0 * s);
        let near = tanh_sinh(sd, r_t, eps0, opts) + Estimate::new(inner, 1e-7 * inner.abs());
        let far = tanh_sinh_panels(sd, &far_panels(eps0, cutoff, &roots, scale), opts);
        let tail = 2.0 * ux * cutoff.powf(-2.0 * s) / (2.0 * s);
        let radial = near + far + Estimate::new(tail, 0.0);
        let f = 0.5 * a * radial.value;
        main = main + Estimate::new(d.weight * f, d.weight * 0.5 * a * radial.error);
        check += d.check_weight * f;
        magnitude += d.weight * (0.5 * a * radial.value).abs();
    }
    let angular = if spec.n() == 1 { 0.0 } else { (main.value - check).abs() };
    let rounding = 1e-14 * magnitude;
    Ok(PointValue {
        value: main.value,
        error: main.error + angular + rounding,
    })
}

/// Richardson exponents for `T(ε) - L`: `2k - 2s` for even densities, `k - 2s` otherwise.
fn richardson_exponents(spec: &KernelSpec, count: usize) -> Vec<f64> {
    let s = spec.s();
    let even = spec.n() == 1 || spec.density().is_flagged_even();
    (1..=count)
        .map(|k| if even { 2.0 * k as f64 - 2.0 * s } else { k as f64 - 2.0 * s })
        .collect()
}

/// `L_K u(x) = lim_{ε→0} ∫_{|z|>ε} (u(x) - u(x+z)) K(z) dz`, extrapolated in ε.
///
/// `eps` must be a decreasing geometric sequence. The truncated integrals are
/// accumulated from the outermost ε inward, one annulus at a time, and the
/// limit is taken by Richardson extrapolation with the exponents of the
/// small-ε expansion.
pub fn lk_pointwise_pv(
    spec: &KernelSpec,
    u: &ClosedFormFunction,
    x: &[f64],
    eps: &[f64],
    q: &OperatorQuadrature,
) -> Result<PointValue> {
    let (eps_smooth, spheres) = setup(spec, u, x)?;
    if u.is_constant() {
        return Ok(PointValue { value: 0.0, error: 0.0 });
    }
    if eps.len() < 3 {
        return Err(Error::InvalidParameter("need at least three ε values".into()));
    }
    let ratio = eps[1] / eps[0];
    if !(ratio > 0.0 && ratio < 1.0)
        || eps.windows(2).any(|w| ((w[1] / w[0]) - ratio).abs() > 1e-12 * ratio)
    {
        return Err(Error::InvalidParameter(
            "ε sequence must be positive, decreasing and geometric".into(),
        ));
    }
    let s = spec.s();
    let ux = u.eval(x);
    let opts = TanhSinh {
        rel_tol: q.rel_tol,
        abs_tol: 0.0,
        max_level: 10,
    };
    let reach = u.reach(x);
    let scale = eps_smooth.max(1e-3);
    let levels = eps.len();
    let mut t_main = vec![0.0; levels];
    let mut t_check = vec![0.0; levels];
    let mut quad_err = 0.0;
    let mut magnitude = 0.0;
    for d in directions(spec, q) {
        let a = spec.density().eval_angle(d.theta);
        let roots = ray_roots(x, &d.dir, &spheres);
        let cutoff = reach.max(eps[0]);
        let f = |r: f64| {
            let y: Vec<f64> = x.iter().zip(&d.dir).map(|(a, b)| a + r * b).collect();
            (ux - u.eval(&y)) * r.powf(-1.0 - 2.0 * s)
        };
        let far = tanh_sinh_panels(f, &far_panels(eps[0], cutoff, &roots, scale), opts);
        let tail = ux * cutoff.powf(-2.0 * s) / (2.0 * s);
        let mut acc = far.value + tail;
        let mut err = far.error;
        magnitude += d.weight * a * (far.value.abs() + tail.abs());
        for k in 0..levels {
            if k > 0 {
                let ann = tanh_sinh(f, eps[k], eps[k - 1], opts);
                acc += ann.value;
                err += ann.error;
            }
            t_main[k] += d.weight * a * acc;
            t_check[k] += d.check_weight * a * acc;
        }
        quad_err += d.weight * a * err;
    }
    let cols = q.richardson.min(levels - 2);
    let exps = richardson_exponents(spec, cols);
    let extrapolate = |t: &[f64]| -> (f64, f64) {
        let mut table = vec![t.to_vec()];
        for (j, p) in exps.iter().enumerate() {
            let prev = &table[j];
            let fac = ratio.powf(-p) - 1.0;
            let next: Vec<f64> = (0..levels)
                .map(|k| if k <= j { f64::NAN } else { prev[k] + (prev[k] - prev[k - 1]) / fac })
                .collect();
            table.push(next);
        }
        let last = &table[cols];
        let best = last[levels - 1];
        let err = (best - last[levels - 2])
            .abs()
            .max((best - table[cols - 1][levels - 1]).abs());
        (best, err)
    };
    // first differences must shrink for the limit to exist
    let diffs: Vec<f64> = t_main.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let m = diffs.len();
    let floor = 1e-13 * t_main[levels - 1].abs().max(magnitude);
    if m >= 3 && diffs[m - 1] > floor && diffs[m - 1] >= 0.95 * diffs[m - 2] && diffs[m - 2] >= 0.95 * diffs[m - 3] {
        return Err(Error::Divergence(format!(
            "truncated integrals are not Cauchy: last increments {:.3e}, {:.3e}",
            diffs[m - 2],
            diffs[m - 1]
        )));
    }
    let (value, rich_err) = extrapolate(&t_main);
    let angular = if spec.n() == 1 { 0.0 } else { (value - extrapolate(&t_check).0).abs() };
    Ok(PointValue {
        value,
        error: rich_err + quad_err + angular + 1e-14 * magnitude,
    })
}

/// Tabulates both evaluations at a list of points: `(x, pv, pv_err, sd, sd_err)`.
pub fn tabulate(
    spec: &KernelSpec,
    u: &ClosedFormFunction,
    points: &[Vec<f64>],
    q: &OperatorQuadrature,
) -> Result<Vec<(Vec<f64>, PointValue, PointValue)>> {
    points
        .iter()
        .map(|x| {
            let eps = default_eps_sequence(spec, u, x, q)?;
            Ok((x.clone(), lk_pointwise_pv(spec, u, x, &eps, q)?, lk_pointwise_sd(spec, u, x, q)?))
        })
        .collect()
}
