//! `anisokernel` command line: configuration, command dispatch and artifacts.
//!
//! Every output file starts with the SHA-256 of the configuration bytes and
//! the refinement count, as a `#` line in CSV files and a `config_sha256`
//! field in JSON reports. Numbers in CSV files carry 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::{
    assemble_exterior_coupling, assemble_gram, assemble_load, assemble_mass, boundary_graded_quadrature,
    AssemblyQuadrature, ExteriorTrace, GramMatrix,
};
use crate::diagnostics::{
    hopf_quotient_min, holder_seminorm, holder_seminorm_quotient, linf_report, local_min_probe, max_principle_check,
    c0delta_norm, NormKind, PropertyVerdict, VerdictContext,
};
use crate::error::{Error, Result};
use crate::geometry::{build_mesh, Domain, FeSpace};
use crate::kernel::{check_structural_properties, KernelSpec};
use crate::operator::{lk_pointwise_sd, tabulate, ClosedFormFunction, OperatorQuadrature};
use crate::spectral::{eigenpairs, spectral_report};
use crate::variational::{solve_three, Energy, Reaction, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Assemble,
    Eigs,
    SolveLinear,
    SolveMulti,
    OperatorEval,
    Verify,
    Torsion,
}

#[derive(Debug, Parser)]
#[command(name = "anisokernel", version, about = "Anisotropic nonlocal operators: assembly, spectra, solvers and checks")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Uniform refinements of the configured mesh (refinement steps for `torsion`).
    #[arg(long)]
    pub refine: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub target_h: f64,
    #[serde(default)]
    pub refine: usize,
}

/// Reaction as written in a config; `model_ratio` fixes `β₁ = ratio λ₁` and
/// `b = share β₁` once `λ₁` is known.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearityConfig {
    ModelRatio {
        r: f64,
        q: f64,
        beta1_over_lambda1: f64,
        b_share: f64,
    },
    Model { r: f64, q: f64, b: f64, a1: f64, beta1: f64 },
    Linear { lambda: f64 },
    Zero,
    Tabulated { t: Vec<f64>, f: Vec<f64> },
}

impl NonlinearityConfig {
    pub fn resolve(&self, lambda1: f64) -> Reaction {
        match self.clone() {
            NonlinearityConfig::ModelRatio {
                r,
                q,
                beta1_over_lambda1,
                b_share,
            } => Reaction::model_from_ratio(r, q, beta1_over_lambda1, b_share, lambda1),
            NonlinearityConfig::Model { r, q, b, a1, beta1 } => Reaction::Model { r, q, b, a1, beta1 },
            NonlinearityConfig::Linear { lambda } => Reaction::Linear { lambda },
            NonlinearityConfig::Zero => Reaction::Zero,
            NonlinearityConfig::Tabulated { t, f } => Reaction::Tabulated { t, f },
        }
    }

    fn validate(&self, n: usize, s: f64) -> Result<()> {
        if let NonlinearityConfig::ModelRatio {
            beta1_over_lambda1,
            b_share,
            ..
        } = self
        {
            if !(*beta1_over_lambda1 > 0.0 && *beta1_over_lambda1 < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "asymptotic slope beta1 < lambda1 needs 0 < beta1_over_lambda1 < 1, got {beta1_over_lambda1}"
                )));
            }
            if !(*b_share > 0.0 && *b_share < 1.0) {
                return Err(Error::InvalidParameter(format!("b_share must lie in (0,1), got {b_share}")));
            }
        }
        self.resolve(1.0).validate(n, s, None)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorEvalConfig {
    pub function: ClosedFormFunction,
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub quadrature: OperatorQuadrature,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub seed: u64,
    pub samples: usize,
    pub radius: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            seed: 7,
            samples: 100,
            radius: 0.1,
        }
    }
}

fn default_eigs() -> usize {
    6
}

fn default_load() -> ClosedFormFunction {
    ClosedFormFunction::Constant { value: 1.0 }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    pub domain: Domain,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub quadrature: AssemblyQuadrature,
    #[serde(default)]
    pub nonlinearity: Option<NonlinearityConfig>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_eigs")]
    pub eigs: usize,
    /// Right-hand side `g` of the linear problem.
    #[serde(default = "default_load")]
    pub load: ClosedFormFunction,
    #[serde(default)]
    pub exterior: ExteriorTrace,
    #[serde(default)]
    pub operator_eval: Option<OperatorEvalConfig>,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks not already enforced by the component types.
    pub fn validate(&self) -> Result<()> {
        let n = self.kernel.n();
        if self.domain.dim() != n {
            return Err(Error::InvalidParameter(format!(
                "kernel dimension n = {n} does not match the domain dimension {}",
                self.domain.dim()
            )));
        }
        let diam = self.domain.diameter();
        if !(self.mesh.target_h > 0.0 && self.mesh.target_h < diam) {
            return Err(Error::InvalidParameter(format!(
                "mesh target_h must lie in (0, diameter = {diam}), got {}",
                self.mesh.target_h
            )));
        }
        self.quadrature.validate()?;
        if let Some(nl) = &self.nonlinearity {
            nl.validate(n, self.kernel.s())?;
        }
        let sv = &self.solver;
        if !(sv.tol > 0.0) || sv.iter_cap == 0 || sv.path_nodes < 5 || !(sv.separation_tol > 0.0) || sv.quad_order < 2 {
            return Err(Error::InvalidParameter(
                "solver needs tol > 0, iter_cap >= 1, path_nodes >= 5, separation_tol > 0, quad_order >= 2".into(),
            ));
        }
        if self.eigs < 3 {
            return Err(Error::InvalidParameter(format!("eigs must be at least 3, got {}", self.eigs)));
        }
        if !(self.probe.radius > 0.0) || self.probe.samples == 0 {
            return Err(Error::InvalidParameter("probe needs radius > 0 and samples >= 1".into()));
        }
        if let Some(c) = self.exterior.collar() {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter(format!("exterior collar must be positive, got {c}")));
            }
        }
        if let Some(op) = &self.operator_eval {
            if op.points.iter().any(|p| p.len() != n) {
                return Err(Error::InvalidParameter(format!("operator_eval points must have {n} coordinates")));
            }
        }
        Ok(())
    }
}

/// Floating output with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the artifacts of one run under a common config hash.
pub struct Artifacts {
    dir: PathBuf,
    hash: String,
}

impl Artifacts {
    pub fn new(dir: &Path, config_bytes: &[u8], refine: usize) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut h = Sha256::new();
        h.update(config_bytes);
        h.update(format!("\nrefine={refine}").as_bytes());
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            hash: hex::encode(h.finalize()),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn csv(&self, name: &str, header: &str, rows: &[Vec<f64>]) -> Result<()> {
        let mut out = format!("# config-sha256: {}\n{header}\n", self.hash);
        for r in rows {
            let line: Vec<String> = r.iter().map(|v| fmt17(*v)).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        fs::write(self.dir.join(name), out)?;
        Ok(())
    }

    pub fn json<T: Serialize>(&self, name: &str, data: &T) -> Result<()> {
        let doc = serde_json::json!({ "config_sha256": self.hash, "data": data });
        fs::write(self.dir.join(name), serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }
}

/// Loaded problem: mesh, matrices and verdict context.
pub struct Problem {
    pub config: RunConfig,
    pub space: FeSpace,
    pub gram: GramMatrix,
    pub mass: DMatrix<f64>,
    pub context: VerdictContext,
}

impl Problem {
    pub fn build(config: RunConfig, refine: usize) -> Result<Self> {
        let mut space = build_mesh(&config.domain, config.mesh.target_h)?;
        for _ in 0..refine {
            space = space.refine()?;
        }
        let gram = assemble_gram(&space, &config.kernel, &config.quadrature)?;
        let mass = assemble_mass(&space);
        let context = VerdictContext::new(&space, &config.kernel);
        Ok(Problem {
            config,
            space,
            gram,
            mass,
            context,
        })
    }

    pub fn s(&self) -> f64 {
        self.config.kernel.s()
    }

    /// `G u = load(g) + b(h)` for the configured data.
    pub fn solve_linear(&self, g: &ClosedFormFunction) -> Result<Vec<f64>> {
        solve_system(&self.gram, &self.space, &self.config.kernel, g, &self.config.exterior, self.config.quadrature.angular)
    }

    fn node_rows(&self, fields: &[&[f64]]) -> Vec<Vec<f64>> {
        let vals: Vec<Vec<f64>> = fields.iter().map(|f| self.space.node_values(f)).collect();
        (0..self.space.num_nodes())
            .map(|i| {
                let mut row = vec![i as f64];
                row.extend_from_slice(self.space.node(i));
                row.extend(vals.iter().map(|v| v[i]));
                row
            })
            .collect()
    }

    fn node_header(&self, names: &[String]) -> String {
        let mut h = vec!["node".to_string(), "x".to_string()];
        if self.space.dim() == 2 {
            h.push("y".into());
        }
        h.extend(names.iter().cloned());
        h.join(",")
    }
}

fn solve_system(
    gram: &GramMatrix,
    space: &FeSpace,
    spec: &KernelSpec,
    g: &ClosedFormFunction,
    trace: &ExteriorTrace,
    angular: usize,
) -> Result<Vec<f64>> {
    let chol = gram
        .matrix
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Gram matrix".into()))?;
    let load = assemble_load(space, |x| g.eval(x), 6);
    let b = assemble_exterior_coupling(space, spec, trace, angular)?;
    let rhs = DVector::from_iterator(load.len(), load.iter().zip(&b).map(|(l, e)| l + e));
    Ok(chol.solve(&rhs).as_slice().to_vec())
}

/// `c_T` with `G u = load(1)` approximating `c_T (1 - |x|²)_+^s`.
pub fn torsion_constant(spec: &KernelSpec) -> Result<f64> {
    let u0 = ClosedFormFunction::torsion(spec.n(), spec.s());
    let l = lk_pointwise_sd(spec, &u0, &vec![0.0; spec.n()], &OperatorQuadrature::default())?;
    Ok(1.0 / (2.0 * l.value))
}

/// One refinement level of the torsion benchmark.
#[derive(Debug, Clone, Serialize)]
pub struct TorsionLevel {
    pub h: f64,
    pub rel_l2_error: f64,
    pub holder_s: f64,
    pub holder_quotient: f64,
    pub hopf_min: f64,
    #[serde(skip)]
    pub space: FeSpace,
    #[serde(skip)]
    pub solution: Vec<f64>,
}

/// Torsion problem on `B₁` over `levels` nested meshes starting at `target_h`.
pub fn torsion_series(
    spec: &KernelSpec,
    domain: &Domain,
    target_h: f64,
    levels: usize,
    quad: &AssemblyQuadrature,
) -> Result<(f64, Vec<TorsionLevel>)> {
    let unit_ball = match domain {
        Domain::Interval { lo, hi } => *lo == -1.0 && *hi == 1.0,
        Domain::Polygon { .. } => false,
    };
    if !unit_ball {
        return Err(Error::InvalidParameter(
            "the torsion benchmark needs the unit ball, the interval (-1, 1)".into(),
        ));
    }
    let s = spec.s();
    let ct = torsion_constant(spec)?;
    let mut space = build_mesh(domain, target_h)?;
    let mut out = Vec::with_capacity(levels);
    for k in 0..levels {
        if k > 0 {
            space = space.refine()?;
        }
        let gram = assemble_gram(&space, spec, quad)?;
        let u = solve_system(&gram, &space, spec, &ClosedFormFunction::Constant { value: 1.0 }, &ExteriorTrace::Zero, 16)?;
        let (mut e2, mut n2) = (0.0, 0.0);
        for q in boundary_graded_quadrature(&space, 8) {
            let r2: f64 = q.x[..space.dim()].iter().map(|v| v * v).sum();
            let ex = ct * (1.0 - r2).max(0.0).powf(s);
            e2 += q.weight * (q.eval(&u) - ex).powi(2);
            n2 += q.weight * ex * ex;
        }
        out.push(TorsionLevel {
            h: space.mesh_size(),
            rel_l2_error: (e2 / n2).sqrt(),
            holder_s: holder_seminorm(&space, &u, s)?,
            holder_quotient: holder_seminorm_quotient(&space, &u, s, 0.5 * s, 0.0)?,
            hopf_min: hopf_quotient_min(&space, &u, s),
            space: space.clone(),
            solution: u,
        });
    }
    Ok((ct, out))
}

/// Verdicts of a torsion series: error decay, bounded seminorms, stable Hopf constant.
pub fn torsion_verdicts(levels: &[TorsionLevel], context: &VerdictContext) -> Vec<PropertyVerdict> {
    let mut v = Vec::new();
    for w in levels.windows(2) {
        let ctx = VerdictContext { h: w[1].h, ..context.clone() };
        v.push(PropertyVerdict::at_most(
            "torsion relative L2 error ratio under refinement",
            w[1].rel_l2_error / w[0].rel_l2_error,
            0.8,
            &ctx,
        ));
        v.push(PropertyVerdict::at_most(
            "C^s node-pair seminorm ratio under refinement",
            w[1].holder_s / w[0].holder_s,
            1.5,
            &ctx,
        ));
        v.push(PropertyVerdict::at_most(
            "C^(s/2) seminorm ratio of u/delta^s under refinement",
            w[1].holder_quotient / w[0].holder_quotient,
            1.5,
            &ctx,
        ));
        let r = w[1].hopf_min / w[0].hopf_min;
        v.push(PropertyVerdict::at_most(
            "Hopf constant change under refinement (max(r, 1/r))",
            if r > 0.0 { r.max(1.0 / r) } else { f64::INFINITY },
            2.0,
            &ctx,
        ));
    }
    for l in levels {
        let ctx = VerdictContext { h: l.h, ..context.clone() };
        v.push(PropertyVerdict::above("torsion Hopf quotient min u/delta^s", l.hopf_min, 0.0, &ctx));
    }
    v
}

/// Seeded nonnegative load: a nonnegative combination of Gaussian bumps
/// centered in the bounding box of the domain.
pub fn random_nonneg_load(domain: &Domain, rng: &mut ChaCha8Rng) -> ClosedFormFunction {
    let (lo, hi) = match domain {
        Domain::Interval { lo, hi } => ([*lo, 0.0], [*hi, 0.0]),
        Domain::Polygon { vertices } => {
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for v in vertices {
                for c in 0..2 {
                    lo[c] = lo[c].min(v[c]);
                    hi[c] = hi[c].max(v[c]);
                }
            }
            (lo, hi)
        }
    };
    let dim = domain.dim();
    let terms = (0..3)
        .map(|_| {
            let center: Vec<f64> = (0..dim).map(|c| rng.gen_range(lo[c]..hi[c])).collect();
            let width = rng.gen_range(0.1..0.6) * domain.diameter();
            (rng.gen_range(0.0..2.0), ClosedFormFunction::gaussian(&center, width))
        })
        .collect();
    ClosedFormFunction::Combination { terms }
}

/// Nonnegative exterior traces used by the maximum-principle battery.
pub fn exterior_battery(domain: &Domain, collar: f64) -> Vec<ExteriorTrace> {
    let dim = domain.dim();
    let far: Vec<f64> = match domain {
        Domain::Interval { hi, .. } => vec![*hi + 0.5 * collar],
        Domain::Polygon { vertices } => vertices[0].to_vec(),
    };
    vec![
        ExteriorTrace::Constant { value: 1.0, collar },
        ExteriorTrace::Constant { value: 0.25, collar: 0.5 * collar },
        ExteriorTrace::RadialGaussian {
            center: far,
            amplitude: 2.0,
            width: 0.5,
            collar,
        },
        ExteriorTrace::RadialGaussian {
            center: vec![0.0; dim],
            amplitude: 1.0,
            width: 2.0,
            collar,
        },
        ExteriorTrace::Sampled {
            collar,
            distances: vec![0.0, 0.5 * collar, collar],
            values: vec![1.0, 0.2, 0.0],
        },
    ]
}

/// The diagnostics battery of `verify`.
pub fn verify_battery(p: &Problem) -> Result<Vec<PropertyVerdict>> {
    let ctx = &p.context;
    let s = p.s();
    let spec = &p.config.kernel;
    let mut v = Vec::new();

    let st = check_structural_properties(spec);
    for c in [&st.integrability, &st.lower_bound, &st.evenness] {
        v.push(PropertyVerdict::at_least(&c.name, if c.passed { 1.0 } else { 0.0 }, 1.0, ctx));
    }

    let eig = eigenpairs(&p.gram.matrix, &p.mass, p.config.eigs.min(p.gram.dim()), 1e-8)?;
    v.extend(spectral_report(&eig, &p.space, s, ctx)?);
    let mut orth = 0.0f64;
    for (j, ej) in eig.vectors.iter().enumerate() {
        let mej = &p.mass * DVector::from_column_slice(ej);
        for (k, ek) in eig.vectors.iter().enumerate() {
            let d = DVector::from_column_slice(ek).dot(&mej) - if j == k { 1.0 } else { 0.0 };
            orth = orth.max(d.abs());
        }
    }
    v.push(PropertyVerdict::at_most("mass orthonormality of eigenvectors", orth, 1e-10, ctx));
    let (linf, lcrit) = linf_report(&p.space, &eig.vectors[0], s);
    v.push(PropertyVerdict::at_most("e1 sup norm is finite", linf, f64::MAX, ctx));
    v.push(PropertyVerdict::at_most("e1 critical Lebesgue norm is finite", lcrit, f64::MAX, ctx));

    let one = |_: &[f64]| 1.0;
    let (mp, torsion) = max_principle_check(&p.gram, &p.mass, &p.space, spec, one, &ExteriorTrace::Zero, None, ctx)?;
    v.push(mp);
    v.push(PropertyVerdict::above(
        "torsion Hopf quotient min u/delta^s",
        hopf_quotient_min(&p.space, &torsion, s),
        0.0,
        ctx,
    ));
    let (_, zero_sol) = max_principle_check(&p.gram, &p.mass, &p.space, spec, |_| 0.0, &ExteriorTrace::Zero, None, ctx)?;
    v.push(PropertyVerdict::at_most(
        "zero data gives the zero solution (max|u|)",
        zero_sol.iter().fold(0.0f64, |a, x| a.max(x.abs())),
        0.0,
        ctx,
    ));
    let seed = p.config.probe.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sctx = ctx.clone().with_seed(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let g = random_nonneg_load(&p.space.domain().clone(), &mut rng);
        let (r, _) = max_principle_check(&p.gram, &p.mass, &p.space, spec, |x| g.eval(x), &ExteriorTrace::Zero, None, &sctx)?;
        worst = worst.min(r.measured);
    }
    v.push(PropertyVerdict::at_least(
        "weak maximum principle over 20 seeded nonnegative loads (worst min u / max|u|)",
        worst,
        -crate::diagnostics::TOL_MP,
        &sctx,
    ));
    let collar = (0.5f64).max(p.space.mesh_size());
    let c = 0.5 * eig.values[0];
    let mut worst = f64::INFINITY;
    for (k, trace) in exterior_battery(p.space.domain(), collar).iter().enumerate() {
        let g = random_nonneg_load(&p.space.domain().clone(), &mut rng);
        let gk = if k == 0 { ClosedFormFunction::Constant { value: 0.0 } } else { g };
        let (r, _) = max_principle_check(&p.gram, &p.mass, &p.space, spec, |x| gk.eval(x), trace, Some(c), &sctx)?;
        worst = worst.min(r.measured);
    }
    v.push(PropertyVerdict::at_least(
        "maximum principle with exterior data and f = -c u + g, c = lambda1/2 (worst min u / max|u|)",
        worst,
        -crate::diagnostics::TOL_MP,
        &sctx,
    ));

    if p.space.dim() == 1 {
        let fine = p.space.refine()?;
        let gram_f = assemble_gram(&fine, spec, &p.config.quadrature)?;
        let one_c = ClosedFormFunction::Constant { value: 1.0 };
        let tf = solve_system(&gram_f, &fine, spec, &one_c, &ExteriorTrace::Zero, 16)?;
        let a = holder_seminorm(&p.space, &torsion, s)?;
        let b = holder_seminorm(&fine, &tf, s)?;
        v.push(PropertyVerdict::at_most("C^s seminorm ratio of the torsion solution under refinement", b / a, 1.5, ctx));
        let r = hopf_quotient_min(&fine, &tf, s) / hopf_quotient_min(&p.space, &torsion, s);
        v.push(PropertyVerdict::at_most(
            "torsion Hopf constant change under refinement (max(r, 1/r))",
            if r > 0.0 { r.max(1.0 / r) } else { f64::INFINITY },
            2.0,
            ctx,
        ));
    }

    let gfun = ClosedFormFunction::gaussian(&vec![0.0; p.space.dim()], 0.5);
    let pts: Vec<Vec<f64>> = if p.space.dim() == 1 {
        vec![vec![0.0], vec![0.3]]
    } else {
        vec![vec![0.0, 0.0], vec![0.2, -0.1]]
    };
    let mut gap = f64::NEG_INFINITY;
    for (_, pv, sd) in tabulate(spec, &gfun, &pts, &OperatorQuadrature::default())? {
        gap = gap.max((pv.value - sd.value).abs() - (pv.error + sd.error));
    }
    v.push(PropertyVerdict::at_most(
        "pointwise definitions agree within their error estimates (|pv - sd| - errors)",
        gap,
        0.0,
        ctx,
    ));

    if let Some(nl) = &p.config.nonlinearity {
        let reaction = nl.resolve(eig.values[0]);
        reaction.validate(p.space.dim(), s, Some(eig.values[0]))?;
        let energy = Energy::new(&p.gram, &p.space, &reaction, p.config.solver.quad_order)?;
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let u: Vec<f64> = (0..p.gram.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d: Vec<f64> = (0..p.gram.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let eps = 1e-4;
            let up: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + eps * b).collect();
            let um: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a - eps * b).collect();
            let fd = (energy.value(&up) - energy.value(&um)) / (2.0 * eps);
            let an: f64 = energy.gradient(&u).iter().zip(&d).map(|(a, b)| a * b).sum();
            worst = worst.max((fd - an).abs() / (1.0 + an.abs()));
        }
        v.push(PropertyVerdict::at_most("gradient matches central differences", worst, 1e-6, &sctx));
        if matches!(reaction, Reaction::Model { .. }) {
            let three = solve_three(&p.gram, &p.mass, &p.space, &reaction.clone().into(), s, &p.config.solver, ctx)?;
            v.extend(three.report.verdicts.iter().cloned());
            let pc = &p.config.probe;
            for kind in [NormKind::X, NormKind::C0delta] {
                v.push(local_min_probe(
                    &p.gram, &p.space, &reaction, &three.plus.coeffs, pc.radius, kind, pc.samples, pc.seed, None, s, ctx,
                )?);
            }
            let zero = vec![0.0; p.gram.dim()];
            let at0 = local_min_probe(
                &p.gram, &p.space, &reaction, &zero, 0.5, NormKind::X, 20, pc.seed, Some(&eig.vectors[0]), s, ctx,
            )?;
            v.push(PropertyVerdict::at_most(
                "probe finds descent from 0 along e1 (min J(v) - J(0))",
                at0.measured,
                -1e-12,
                &at0.context,
            ));
        }
    }
    Ok(v)
}

fn config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidParameter(_) | Error::Json(_) | Error::Geometry(_) | Error::DimensionMismatch { .. }
    )
}

/// Runs one command; returns the process exit status.
pub fn run(cli: &Cli) -> i32 {
    let bytes = match fs::read(&cli.config) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("anisokernel: cannot read {}: {e}", cli.config.display());
            return 2;
        }
    };
    let config = match std::str::from_utf8(&bytes).map_err(|e| e.to_string()).and_then(|t| {
        RunConfig::parse(t).map_err(|e| e.to_string())
    }) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("anisokernel: configuration error: {msg}");
            return 2;
        }
    };
    match dispatch(cli, config, &bytes) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("anisokernel: {e}");
            if config_error(&e) {
                2
            } else {
                1
            }
        }
    }
}

fn report_verdicts(art: &Artifacts, name: &str, verdicts: &[PropertyVerdict]) -> Result<bool> {
    art.json(name, &verdicts)?;
    let mut ok = true;
    for v in verdicts {
        if !v.passed {
            ok = false;
            eprintln!("FAIL {}: measured {} vs threshold {}", v.name, v.measured, v.threshold);
        }
    }
    println!(
        "{}/{} verdicts passed",
        verdicts.iter().filter(|v| v.passed).count(),
        verdicts.len()
    );
    Ok(ok)
}

fn dispatch(cli: &Cli, config: RunConfig, bytes: &[u8]) -> Result<bool> {
    let out = cli.out.clone().unwrap_or_else(|| config.output.clone());
    if cli.command == Command::Torsion {
        let levels = cli.refine.unwrap_or(3) + 1;
        let art = Artifacts::new(&out, bytes, levels - 1)?;
        let (ct, series) = torsion_series(&config.kernel, &config.domain, config.mesh.target_h, levels, &config.quadrature)?;
        let rows: Vec<Vec<f64>> = series
            .iter()
            .map(|l| vec![l.h, l.rel_l2_error, l.holder_s, l.holder_quotient, l.hopf_min])
            .collect();
        art.csv("torsion.csv", "h,rel_l2_error,holder_s,holder_quotient,hopf_min", &rows)?;
        let ctx = VerdictContext {
            h: series[0].h,
            s: config.kernel.s(),
            kernel: crate::diagnostics::kernel_id(&config.kernel),
            seed: None,
        };
        art.json("torsion_report.json", &serde_json::json!({ "c_t": ct, "levels": series }))?;
        println!("c_T = {}", fmt17(ct));
        return report_verdicts(&art, "torsion_verdicts.json", &torsion_verdicts(&series, &ctx));
    }
    let refine = cli.refine.unwrap_or(config.mesh.refine);
    let art = Artifacts::new(&out, bytes, refine)?;
    if cli.command == Command::OperatorEval {
        let Some(op) = &config.operator_eval else {
            return Err(Error::InvalidParameter("operator-eval needs an operator_eval section".into()));
        };
        let rows: Vec<Vec<f64>> = tabulate(&config.kernel, &op.function, &op.points, &op.quadrature)?
            .into_iter()
            .map(|(x, pv, sd)| {
                let mut r = x;
                r.extend([pv.value, pv.error, sd.value, sd.error]);
                r
            })
            .collect();
        let coords = if config.kernel.n() == 1 { "x" } else { "x,y" };
        art.csv("operator.csv", &format!("{coords},pv,pv_err,sd,sd_err"), &rows)?;
        return Ok(true);
    }
    let p = Problem::build(config, refine)?;
    match cli.command {
        Command::Assemble => {
            let trip = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
                let mut rows = Vec::new();
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        rows.push(vec![i as f64, j as f64, m[(i, j)]]);
                    }
                }
                rows
            };
            art.csv("gram.csv", "i,j,value", &trip(&p.gram.matrix))?;
            art.csv("mass.csv", "i,j,value", &trip(&p.mass))?;
            let load = assemble_load(&p.space, |x| p.config.load.eval(x), 6);
            let b = assemble_exterior_coupling(&p.space, &p.config.kernel, &p.config.exterior, p.config.quadrature.angular)?;
            let rows: Vec<Vec<f64>> = (0..load.len()).map(|k| vec![k as f64, load[k], b[k]]).collect();
            art.csv("rhs.csv", "dof,load,exterior", &rows)?;
            let nodes: Vec<Vec<f64>> = (0..p.space.num_nodes())
                .map(|i| {
                    let mut r = vec![i as f64];
                    r.extend_from_slice(p.space.node(i));
                    r.push(p.space.dof_of_node(i).map_or(-1.0, |d| d as f64));
                    r
                })
                .collect();
            let coords = if p.space.dim() == 1 { "x" } else { "x,y" };
            art.csv("nodes.csv", &format!("node,{coords},dof"), &nodes)?;
            let elems: Vec<Vec<f64>> = p
                .space
                .elements()
                .iter()
                .map(|e| e.verts().iter().map(|v| *v as f64).collect())
                .collect();
            art.csv("elements.csv", if p.space.dim() == 1 { "v0,v1" } else { "v0,v1,v2" }, &elems)?;
            art.json(
                "assembly.json",
                &serde_json::json!({
                    "dofs": p.gram.dim(),
                    "elements": p.space.num_elements(),
                    "h": p.space.mesh_size(),
                    "quadrature": p.gram.quadrature,
                    "tail_method": p.gram.tail_method,
                }),
            )?;
            Ok(true)
        }
        Command::Eigs => {
            let eig = eigenpairs(&p.gram.matrix, &p.mass, p.config.eigs.min(p.gram.dim()), 1e-8)?;
            let rows: Vec<Vec<f64>> = (0..eig.values.len())
                .map(|k| vec![(k + 1) as f64, eig.values[k], eig.residuals[k]])
                .collect();
            art.csv("eigenvalues.csv", "k,lambda,residual", &rows)?;
            let fields: Vec<&[f64]> = eig.vectors.iter().map(|v| v.as_slice()).collect();
            let names: Vec<String> = (1..=fields.len()).map(|k| format!("e{k}")).collect();
            art.csv("eigenvectors.csv", &p.node_header(&names), &p.node_rows(&fields))?;
            report_verdicts(&art, "spectral_verdicts.json", &spectral_report(&eig, &p.space, p.s(), &p.context)?)
        }
        Command::SolveLinear => {
            let u = p.solve_linear(&p.config.load)?;
            art.csv("solution.csv", &p.node_header(&["u".into()]), &p.node_rows(&[&u]))?;
            let (linf, lcrit) = linf_report(&p.space, &u, p.s());
            let residual = {
                let load = assemble_load(&p.space, |x| p.config.load.eval(x), 6);
                let b = assemble_exterior_coupling(&p.space, &p.config.kernel, &p.config.exterior, p.config.quadrature.angular)?;
                let gu = p.gram.apply(&u);
                gu.iter().zip(load.iter().zip(&b)).map(|(a, (l, e))| (a - l - e).abs()).fold(0.0, f64::max)
            };
            art.json(
                "solution_report.json",
                &serde_json::json!({
                    "linf": linf,
                    "l_critical": lcrit,
                    "c0delta": c0delta_norm(&p.space, &u, p.s()),
                    "hopf_min": hopf_quotient_min(&p.space, &u, p.s()),
                    "residual_max": residual,
                }),
            )?;
            Ok(true)
        }
        Command::SolveMulti => {
            let Some(nl) = &p.config.nonlinearity else {
                return Err(Error::InvalidParameter("solve-multi needs a nonlinearity section".into()));
            };
            let l1 = eigenpairs(&p.gram.matrix, &p.mass, 1, 1e-8)?.values[0];
            let reaction = nl.resolve(l1);
            let three = solve_three(&p.gram, &p.mass, &p.space, &reaction.into(), p.s(), &p.config.solver, &p.context)?;
            let names = ["u_plus".to_string(), "u_minus".to_string(), "u_pass".to_string()];
            let fields = [three.plus.coeffs.as_slice(), three.minus.coeffs.as_slice(), three.pass.coeffs.as_slice()];
            art.csv("solutions.csv", &p.node_header(&names), &p.node_rows(&fields))?;
            art.json("solve_report.json", &three.report)?;
            report_verdicts(&art, "solve_verdicts.json", &three.report.verdicts)
        }
        Command::Verify => report_verdicts(&art, "verdicts.json", &verify_battery(&p)?),
        Command::OperatorEval | Command::Torsion => unreachable!(),
    }
}

/// Sizes the global worker pool from `ANISOKERNEL_THREADS` when set.
pub fn init_threads() {
    if let Some(n) = std::env::var("ANISOKERNEL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}
