//! Executable checks on computed fields: weighted norms, maximum principles,
//! boundary quotients, Hölder seminorms and the local-minimizer probe.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_exterior_coupling, assemble_load, element_quadrature, ExteriorTrace, GramMatrix};
use crate::error::{Error, Result};
use crate::geometry::FeSpace;
use crate::kernel::KernelSpec;
use crate::variational::{Energy, Reaction};

/// Relative undershoot tolerated by the discrete maximum-principle check.
pub const TOL_MP: f64 = 1e-3;

/// Where a verdict was computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerdictContext {
    pub h: f64,
    pub s: f64,
    pub kernel: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl VerdictContext {
    pub fn new(space: &FeSpace, spec: &KernelSpec) -> Self {
        VerdictContext {
            h: space.mesh_size(),
            s: spec.s(),
            kernel: kernel_id(spec),
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Short identifier of a kernel: `n`, `s` and the density kind.
pub fn kernel_id(spec: &KernelSpec) -> String {
    let kind = match spec.density().kind() {
        crate::kernel::DensityKind::Constant(c) => format!("const{c}"),
        crate::kernel::DensityKind::Sectors { .. } => "sectors".to_string(),
        crate::kernel::DensityKind::Samples(v) => format!("samples{}", v.len()),
    };
    format!("n{}-s{}-{}", spec.n(), spec.s(), kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
}

/// Outcome of one check; `passed` is false exactly when `measured` violates
/// `threshold` under `comparison`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyVerdict {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    pub context: VerdictContext,
}

impl PropertyVerdict {
    fn make(name: &str, measured: f64, comparison: Comparison, threshold: f64, context: &VerdictContext) -> Self {
        let passed = match comparison {
            Comparison::Greater => measured > threshold,
            Comparison::AtLeast => measured >= threshold,
            Comparison::AtMost => measured <= threshold,
        };
        PropertyVerdict {
            name: name.to_string(),
            passed,
            measured,
            comparison,
            threshold,
            context: context.clone(),
        }
    }

    pub fn above(name: &str, measured: f64, threshold: f64, context: &VerdictContext) -> Self {
        Self::make(name, measured, Comparison::Greater, threshold, context)
    }

    pub fn at_least(name: &str, measured: f64, threshold: f64, context: &VerdictContext) -> Self {
        Self::make(name, measured, Comparison::AtLeast, threshold, context)
    }

    pub fn at_most(name: &str, measured: f64, threshold: f64, context: &VerdictContext) -> Self {
        Self::make(name, measured, Comparison::AtMost, threshold, context)
    }
}

/// `‖u/δ^s‖_∞` over interior nodes.
pub fn c0delta_norm(space: &FeSpace, u: &[f64], s: f64) -> f64 {
    space
        .dof_delta()
        .iter()
        .zip(u)
        .map(|(d, v)| v.abs() / d.powf(s))
        .fold(0.0, f64::max)
}

/// `min u/δ^s` over interior nodes, signed; zero for an empty space.
pub fn hopf_quotient_min(space: &FeSpace, u: &[f64], s: f64) -> f64 {
    let m = space
        .dof_delta()
        .iter()
        .zip(u)
        .map(|(d, v)| v / d.powf(s))
        .fold(f64::INFINITY, f64::min);
    if m.is_finite() {
        m
    } else {
        0.0
    }
}

/// Solves `(G + c M) u = load(g) + b(h)`; a failed factorization means `c`
/// pushed the operator below its spectral bound.
pub fn solve_shifted<G: Fn(&[f64]) -> f64>(
    gram: &GramMatrix,
    mass: &DMatrix<f64>,
    space: &FeSpace,
    spec: &KernelSpec,
    g: G,
    trace: &ExteriorTrace,
    c: f64,
    angular: usize,
) -> Result<Vec<f64>> {
    let a = &gram.matrix + c * mass;
    let chol = a.cholesky().ok_or_else(|| {
        Error::SpectralBound(format!(
            "G + {c}·M is not positive definite; the shift -c must stay above -λ₁"
        ))
    })?;
    let load = assemble_load(space, g, 6);
    let b = assemble_exterior_coupling(space, spec, trace, angular)?;
    let rhs = DVector::from_iterator(load.len(), load.iter().zip(&b).map(|(l, e)| l + e));
    Ok(chol.solve(&rhs).as_slice().to_vec())
}

/// Weak maximum principle on the discrete solution: `min u ≥ -TOL_MP ‖u‖_∞`.
#[allow(clippy::too_many_arguments)]
pub fn max_principle_check<G: Fn(&[f64]) -> f64>(
    gram: &GramMatrix,
    mass: &DMatrix<f64>,
    space: &FeSpace,
    spec: &KernelSpec,
    g: G,
    trace: &ExteriorTrace,
    lower_c: Option<f64>,
    context: &VerdictContext,
) -> Result<(PropertyVerdict, Vec<f64>)> {
    let c = lower_c.unwrap_or(0.0);
    let u = solve_shifted(gram, mass, space, spec, g, trace, c, 16)?;
    let amax = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let lo = u.iter().cloned().fold(0.0f64, f64::min);
    let measured = if amax > 0.0 { lo / amax } else { 0.0 };
    let name = if lower_c.is_some() {
        "weak maximum principle with f = -c u + g (min u / max|u|)"
    } else {
        "weak maximum principle (min u / max|u|)"
    };
    Ok((PropertyVerdict::at_least(name, measured, -TOL_MP, context), u))
}

fn pair_sup(points: &[[f64; 2]], vals: &[f64], dim: usize, exponent: f64) -> f64 {
    let n = points.len();
    let total = n * n.saturating_sub(1) / 2;
    let stride = total.div_ceil(1_000_000).max(1);
    let mut best = 0.0f64;
    let mut k = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if k % stride == 0 {
                let d2: f64 = (0..dim).map(|c| (points[i][c] - points[j][c]).powi(2)).sum();
                let d = d2.sqrt();
                if d > 0.0 {
                    best = best.max((vals[i] - vals[j]).abs() / d.powf(exponent));
                }
            }
            k += 1;
        }
    }
    best
}

/// Node-pair Hölder seminorm of `u`, boundary zeros included. Beyond `10⁶`
/// pairs every `k`-th pair is used.
pub fn holder_seminorm(space: &FeSpace, u: &[f64], exponent: f64) -> Result<f64> {
    if !(exponent > 0.0 && exponent <= 1.0) {
        return Err(Error::InvalidParameter(format!("Hölder exponent must lie in (0,1], got {exponent}")));
    }
    Ok(pair_sup(space.nodes(), &space.node_values(u), space.dim(), exponent))
}

/// Node-pair Hölder seminorm of `u/δ^s` over interior nodes farther than
/// `corner_exclusion` from every corner.
pub fn holder_seminorm_quotient(space: &FeSpace, u: &[f64], s: f64, alpha: f64, corner_exclusion: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < s) {
        return Err(Error::InvalidParameter(format!(
            "quotient Hölder exponent must lie in (0, s), got {alpha} with s = {s}"
        )));
    }
    let corners = space.domain().corners();
    let delta = space.dof_delta();
    let mut pts = Vec::new();
    let mut vals = Vec::new();
    for k in 0..space.num_dofs() {
        let p = space.point_of(space.node_of_dof(k));
        let far = corners
            .iter()
            .all(|c| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() > corner_exclusion);
        if far {
            pts.push(p);
            vals.push(u[k] / delta[k].powf(s));
        }
    }
    Ok(pair_sup(&pts, &vals, space.dim(), alpha))
}

/// `(‖u‖_∞, ‖u‖_{L^{2*_s}})`, nodal maximum and element quadrature.
pub fn linf_report(space: &FeSpace, u: &[f64], s: f64) -> (f64, f64) {
    let n = space.dim() as f64;
    let p = 2.0 * n / (n - 2.0 * s);
    let linf = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let integral: f64 = element_quadrature(space, 6)
        .iter()
        .map(|q| q.weight * q.eval(u).abs().powf(p))
        .sum();
    (linf, integral.powf(1.0 / p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    X,
    C0delta,
}

/// Random perturbations `v` of `u0` with norm in `(0, radius]`; passes iff
/// `J(u0 + v) ≥ J(u0) - 1e-12` for every draw. With `bias`, each draw is
/// `bias + 0.25 w` for uniform noise `w` before rescaling.
#[allow(clippy::too_many_arguments)]
pub fn local_min_probe(
    gram: &GramMatrix,
    space: &FeSpace,
    reaction: &Reaction,
    u0: &[f64],
    radius: f64,
    norm_kind: NormKind,
    samples: usize,
    seed: u64,
    bias: Option<&[f64]>,
    s: f64,
    context: &VerdictContext,
) -> Result<PropertyVerdict> {
    let energy = Energy::new(gram, space, reaction, 4)?;
    let j0 = energy.value(u0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let mut v: Vec<f64> = (0..u0.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if let Some(b) = bias {
            v = b.iter().zip(&v).map(|(bi, wi)| bi + 0.25 * wi).collect();
        }
        let nv = match norm_kind {
            NormKind::X => energy.gram_norm(&v),
            NormKind::C0delta => c0delta_norm(space, &v, s),
        };
        let t = radius * rng.gen_range(f64::EPSILON..=1.0) / nv;
        let w: Vec<f64> = u0.iter().zip(&v).map(|(a, b)| a + t * b).collect();
        worst = worst.min(energy.value(&w) - j0);
    }
    let name = match norm_kind {
        NormKind::X => "local minimizer probe in the X ball (min J(u0+v) - J(u0))",
        NormKind::C0delta => "local minimizer probe in the C0_delta ball (min J(u0+v) - J(u0))",
    };
    let ctx = context.clone().with_seed(seed);
    Ok(PropertyVerdict::at_least(name, worst, -1e-12, &ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_gram, assemble_mass, AssemblyQuadrature};
    use crate::geometry::{build_mesh, Domain};
    use crate::spectral::eigenpairs;
    use approx::assert_relative_eq;

    fn setup(h: f64) -> (FeSpace, KernelSpec, GramMatrix, DMatrix<f64>) {
        let space = build_mesh(&Domain::interval(-1.0, 1.0).unwrap(), h).unwrap();
        let spec = KernelSpec::isotropic(1, 0.25).unwrap();
        let g = assemble_gram(&space, &spec, &AssemblyQuadrature::default()).unwrap();
        let m = assemble_mass(&space);
        (space, spec, g, m)
    }

    #[test]
    fn weighted_norms_by_hand() {
        let space = build_mesh(&Domain::interval(-1.0, 1.0).unwrap(), 0.5).unwrap();
        let zero = vec![0.0; space.num_dofs()];
        assert_eq!(c0delta_norm(&space, &zero, 0.5), 0.0);
        assert_eq!(hopf_quotient_min(&space, &zero, 0.5), 0.0);
        let k = (0..space.num_dofs()).find(|&k| (space.dof_point(k)[0] + 0.5).abs() < 1e-12).unwrap();
        let mut u = zero.clone();
        u[k] = 3.0;
        assert_relative_eq!(c0delta_norm(&space, &u, 0.5), 3.0 / 0.5f64.sqrt(), max_relative = 1e-14);
        assert_eq!(linf_report(&space, &zero, 0.25), (0.0, 0.0));
        let (a, b) = linf_report(&space, &u, 0.25);
        let u2: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        let (a2, b2) = linf_report(&space, &u2, 0.25);
        assert_relative_eq!(a2, 2.0 * a, max_relative = 1e-14);
        assert_relative_eq!(b2, 2.0 * b, max_relative = 1e-12);
    }

    #[test]
    fn holder_of_power_function_stays_below_analytic() {
        let space = build_mesh(&Domain::interval(-1.0, 1.0).unwrap(), 1.0 / 32.0).unwrap();
        let s = 0.25;
        // |x|^s is not zero on the boundary, so use nodal values directly
        let vals: Vec<f64> = space.nodes().iter().map(|p| p[0].abs().powf(s)).collect();
        let semi = pair_sup(space.nodes(), &vals, 1, s);
        // the seminorm of |x|^s is 1, attained against y = 0, which is a node
        assert!(semi <= 1.0 + 1e-12 && semi > 1.0 - 1e-12, "{semi}");
        let zero = vec![0.0; space.num_dofs()];
        assert_eq!(holder_seminorm(&space, &zero, 0.5).unwrap(), 0.0);
        assert!(holder_seminorm(&space, &zero, 1.5).is_err());
    }

    #[test]
    fn holder_is_monotone_in_exponent_on_small_domains() {
        let space = build_mesh(&Domain::interval(-0.45, 0.45).unwrap(), 0.05).unwrap();
        let u = space.interpolate(|x| (0.2 - x[0] * x[0]).abs().sqrt());
        let mut last = 0.0;
        for e in [0.1, 0.3, 0.5, 0.8, 1.0] {
            let v = holder_seminorm(&space, &u, e).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn max_principle_cases() {
        let (space, spec, g, m) = setup(1.0 / 16.0);
        let ctx = VerdictContext::new(&space, &spec);
        let (v, u) = max_principle_check(&g, &m, &space, &spec, |_| 1.0, &ExteriorTrace::Zero, None, &ctx).unwrap();
        assert!(v.passed && u.iter().all(|x| *x > 0.0));
        let (v, u) = max_principle_check(&g, &m, &space, &spec, |_| 0.0, &ExteriorTrace::Zero, None, &ctx).unwrap();
        assert!(v.passed && u.iter().all(|x| *x == 0.0));
        let (v, u) = max_principle_check(&g, &m, &space, &spec, |_| -1.0, &ExteriorTrace::Zero, None, &ctx).unwrap();
        assert!(!v.passed && u.iter().all(|x| *x < 0.0));
        let trace = ExteriorTrace::Constant { value: 1.0, collar: 0.5 };
        let (v, _) = max_principle_check(&g, &m, &space, &spec, |_| 0.0, &trace, None, &ctx).unwrap();
        assert!(v.passed);
        let l1 = eigenpairs(&g.matrix, &m, 1, 1e-10).unwrap().values[0];
        let (v, _) = max_principle_check(&g, &m, &space, &spec, |_| 1.0, &trace, Some(0.5 * l1), &ctx).unwrap();
        assert!(v.passed);
        assert!(matches!(
            max_principle_check(&g, &m, &space, &spec, |_| 1.0, &trace, Some(-1.5 * l1), &ctx),
            Err(Error::SpectralBound(_))
        ));
    }

    #[test]
    fn hopf_and_c0delta_bracket_the_quotient() {
        let (space, spec, g, m) = setup(1.0 / 32.0);
        let ctx = VerdictContext::new(&space, &spec);
        let (_, u) = max_principle_check(&g, &m, &space, &spec, |_| 1.0, &ExteriorTrace::Zero, None, &ctx).unwrap();
        let lo = hopf_quotient_min(&space, &u, 0.25);
        let hi = c0delta_norm(&space, &u, 0.25);
        assert!(0.0 < lo && lo <= hi);
    }

    #[test]
    fn probe_at_zero_for_the_quadratic() {
        let (space, spec, g, _) = setup(1.0 / 16.0);
        let ctx = VerdictContext::new(&space, &spec);
        let zero = vec![0.0; space.num_dofs()];
        for kind in [NormKind::X, NormKind::C0delta] {
            let v = local_min_probe(&g, &space, &Reaction::Zero, &zero, 0.5, kind, 50, 3, None, 0.25, &ctx).unwrap();
            assert!(v.passed, "{v:?}");
            assert_eq!(v.context.seed, Some(3));
        }
    }
}
