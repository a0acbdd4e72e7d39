//! Dense Galerkin assembly of the energy inner product, mass matrix, loads and
//! exterior-data coupling.
//!
//! The Gram entry of two hat functions splits into element pairs inside `Ω × Ω`
//! and a complement term `2 ∫_Ω φ_i φ_j Φ` with
//! `Φ(x) = ∫_{S^{n-1}} a(θ) R(x,θ)^{-2s} / (2s) dθ`.
//!
//! Touching pairs are regularized by coordinate changes in which the kernel's
//! homogeneity lets the radial variable be integrated in closed form:
//!
//! * identical elements: the integrand depends on `z = x - y` only and the
//!   overlap area of a simplex with its translate is `|T| (1 - ‖z‖_D)^n`,
//!   `D = T - T`;
//! * shared facet: integrating out the coordinate along the common facet
//!   leaves a function of three variables that is homogeneous of degree `-2s`
//!   times the length weight `1 - N(w)`;
//! * shared vertex (2D): scaling about the common vertex.

use std::f64::consts::LN_10;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, ElementGeom, FeSpace, PairKind, Point};
use crate::kernel::{sort_dedup, KernelSpec};
use crate::quadrature::{triangle_rule, GaussRule};

/// Smallest Gauss order accepted for the touching-pair transforms.
pub const MIN_TOUCHING_ORDER: usize = 3;

/// Quadrature orders for assembly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssemblyQuadrature {
    /// Gauss order along each remaining coordinate of the touching-pair transforms.
    pub touching: usize,
    /// Upper bound on the tensor Gauss order for disjoint pairs; the order
    /// actually used is chosen from the pair separation.
    pub disjoint: usize,
    /// Gauss order per angular panel.
    pub angular: usize,
}

impl Default for AssemblyQuadrature {
    fn default() -> Self {
        AssemblyQuadrature {
            touching: 12,
            disjoint: 12,
            angular: 16,
        }
    }
}

impl AssemblyQuadrature {
    pub fn validate(&self) -> Result<()> {
        if self.touching < MIN_TOUCHING_ORDER {
            return Err(Error::InvalidParameter(format!(
                "touching quadrature order {} is below the minimum {MIN_TOUCHING_ORDER} for the touching-pair transform",
                self.touching
            )));
        }
        if self.disjoint < 3 || self.angular < 2 {
            return Err(Error::InvalidParameter(
                "disjoint order must be >= 3 and angular order >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Dense Gram matrix of the energy inner product over the interior nodes.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    pub quadrature: AssemblyQuadrature,
    pub tail_method: &'static str,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(u)).as_slice().to_vec()
    }

    /// `uᵀ G v`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let gv = self.apply(v);
        u.iter().zip(&gv).map(|(a, b)| a * b).sum()
    }

    /// Coordinate triplets `i j value`, one per line, 17 significant digits.
    pub fn triplets(&self) -> String {
        matrix_triplets(&self.matrix)
    }
}

pub fn matrix_triplets(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let _ = writeln!(out, "{i} {j} {:.16e}", m[(i, j)]);
        }
    }
    out
}

/// `K_sym(z) = (K(z) + K(-z))/2` without allocation.
struct KernelEval<'a> {
    spec: &'a KernelSpec,
    half_exp: f64,
    constant: Option<f64>,
}

impl<'a> KernelEval<'a> {
    fn new(spec: &'a KernelSpec) -> Self {
        let constant = match spec.density().kind() {
            crate::kernel::DensityKind::Constant(c) => Some(*c),
            _ if spec.n() == 1 => Some(spec.symmetric_density(0.0)),
            _ => None,
        };
        KernelEval {
            spec,
            half_exp: -0.5 * (spec.n() as f64 + 2.0 * spec.s()),
            constant,
        }
    }

    #[inline]
    fn at(&self, z: [f64; 2]) -> f64 {
        let r2 = z[0] * z[0] + z[1] * z[1];
        let a = match self.constant {
            Some(c) => c,
            None => self.spec.symmetric_density(z[1].atan2(z[0])),
        };
        a * r2.powf(self.half_exp)
    }

    #[inline]
    fn density(&self, theta: f64) -> f64 {
        self.constant
            .unwrap_or_else(|| self.spec.symmetric_density(theta))
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Affine {
    c: f64,
    g: Point,
}

impl Affine {
    #[inline]
    fn at(&self, x: Point) -> f64 {
        self.c + self.g[0] * x[0] + self.g[1] * x[1]
    }

    #[inline]
    fn slope(&self, v: Point) -> f64 {
        self.g[0] * v[0] + self.g[1] * v[1]
    }
}

const MAX_LOCAL: usize = 6;

/// Hat functions of the interior nodes of an element pair, as affine
/// functions on each of the two elements (zero where the node is absent).
struct PairBasis {
    dofs: Vec<usize>,
    on_e: Vec<Affine>,
    on_f: Vec<Affine>,
}

fn local_affine(el: &ElementGeom, node: usize) -> Affine {
    el.verts()
        .iter()
        .position(|&v| v == node)
        .map_or(Affine::default(), |k| Affine {
            c: el.bary_const[k],
            g: el.bary_grad[k],
        })
}

fn pair_basis(space: &FeSpace, e: usize, f: usize) -> PairBasis {
    let (ee, ef) = (&space.elements()[e], &space.elements()[f]);
    let mut nodes: Vec<usize> = ee.verts().to_vec();
    for v in ef.verts() {
        if !nodes.contains(v) {
            nodes.push(*v);
        }
    }
    let mut out = PairBasis {
        dofs: Vec::new(),
        on_e: Vec::new(),
        on_f: Vec::new(),
    };
    for v in nodes {
        if let Some(k) = space.dof_of_node(v) {
            out.dofs.push(k);
            out.on_e.push(local_affine(ee, v));
            out.on_f.push(local_affine(ef, v));
        }
    }
    out
}

/// Symmetric local matrix accumulated from rank-one samples `w d dᵀ`.
struct Local {
    k: usize,
    a: [[f64; MAX_LOCAL]; MAX_LOCAL],
}

impl Local {
    fn new(k: usize) -> Self {
        Local {
            k,
            a: [[0.0; MAX_LOCAL]; MAX_LOCAL],
        }
    }

    #[inline]
    fn add(&mut self, w: f64, d: &[f64; MAX_LOCAL]) {
        for p in 0..self.k {
            let wp = w * d[p];
            for q in p..self.k {
                self.a[p][q] += wp * d[q];
            }
        }
    }
}

fn gauss_order_for(ratio: f64, digits: f64, cap: usize) -> usize {
    let t = 1.0 + 2.0 * ratio;
    let rho = t + (t * t - 1.0).sqrt();
    let m = (digits * LN_10 / (2.0 * rho.ln())).ceil() as usize + 1;
    m.clamp(3, cap)
}

struct Rules {
    gauss: Vec<GaussRule>,
    tri: Vec<Vec<(f64, f64, f64)>>,
}

impl Rules {
    fn new(cap: usize) -> Self {
        Rules {
            gauss: (0..=cap).map(|m| GaussRule::new(m.max(1))).collect(),
            tri: (0..=cap).map(|m| triangle_rule(m.max(1))).collect(),
        }
    }
}

struct Ctx<'a> {
    space: &'a FeSpace,
    spec: &'a KernelSpec,
    kern: KernelEval<'a>,
    quad: AssemblyQuadrature,
    rules: Rules,
}

fn tri_points(space: &FeSpace, el: &ElementGeom) -> [Point; 3] {
    let v = el.vertices;
    [space.point_of(v[0]), space.point_of(v[1]), space.point_of(v[2])]
}

#[inline]
fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

fn tri_distance(a: &[Point; 3], b: &[Point; 3]) -> f64 {
    let mut d = f64::INFINITY;
    for i in 0..3 {
        for j in 0..3 {
            d = d.min(seg_dist(a[i], b[j], b[(j + 1) % 3]));
            d = d.min(seg_dist(b[i], a[j], a[(j + 1) % 3]));
        }
    }
    d
}

fn tri_diam(t: &[Point; 3]) -> f64 {
    let l = |a: Point, b: Point| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    l(t[0], t[1]).max(l(t[1], t[2])).max(l(t[0], t[2]))
}

fn red_children(t: &[Point; 3]) -> [[Point; 3]; 4] {
    let m = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let (ab, bc, ca) = (m(t[0], t[1]), m(t[1], t[2]), m(t[2], t[0]));
    [[t[0], ab, ca], [ab, t[1], bc], [ca, bc, t[2]], [ab, bc, ca]]
}

impl<'a> Ctx<'a> {
    fn s(&self) -> f64 {
        self.spec.s()
    }

    /// Local matrix of one unordered element pair inside `Ω × Ω`.
    fn pair(&self, e: usize, f: usize) -> Option<(Vec<usize>, Local)> {
        let basis = pair_basis(self.space, e, f);
        if basis.dofs.is_empty() {
            return None;
        }
        let mut loc = Local::new(basis.dofs.len());
        let kind = self.space.pair_kind(e, f);
        if self.space.dim() == 1 {
            match kind {
                PairKind::Identical => self.identical_1d(e, &basis, &mut loc),
                PairKind::Disjoint => self.disjoint_1d(e, f, &basis, &mut loc),
                _ => self.touching_1d(e, f, &basis, &mut loc),
            }
        } else {
            match kind {
                PairKind::Identical => self.identical_2d(e, &basis, &mut loc),
                PairKind::SharedFacet => self.shared_edge_2d(e, f, &basis, &mut loc),
                PairKind::SharedVertex => self.shared_vertex_2d(e, f, &basis, &mut loc),
                PairKind::Disjoint => {
                    let te = tri_points(self.space, &self.space.elements()[e]);
                    let tf = tri_points(self.space, &self.space.elements()[f]);
                    self.disjoint_2d(&te, &tf, &basis, &mut loc, 0)
                }
            }
        }
        Some((basis.dofs, loc))
    }

    fn identical_1d(&self, e: usize, b: &PairBasis, loc: &mut Local) {
        let el = &self.space.elements()[e];
        let s = self.s();
        let h = el.measure;
        let a = self.kern.density(0.0);
        let factor = 2.0 * a * h.powf(3.0 - 2.0 * s) / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s));
        let mut d = [0.0; MAX_LOCAL];
        for (p, aff) in b.on_e.iter().enumerate() {
            d[p] = aff.g[0];
        }
        loc.add(factor, &d);
    }

    fn touching_1d(&self, e: usize, f: usize, b: &PairBasis, loc: &mut Local) {
        let els = self.space.elements();
        let (ee, ef) = (&els[e], &els[f]);
        let shared = *ee.verts().iter().find(|v| ef.verts().contains(v)).unwrap();
        let p0 = self.space.point_of(shared)[0];
        let other = |el: &ElementGeom| {
            let v = if el.vertices[0] == shared { el.vertices[1] } else { el.vertices[0] };
            self.space.point_of(v)[0]
        };
        let (oe, of) = (other(ee), other(ef));
        let (se, sf) = ((oe - p0).signum(), (of - p0).signum());
        let (h1, h2) = ((oe - p0).abs(), (of - p0).abs());
        let s = self.s();
        let a = self.kern.density(0.0);
        let alpha: Vec<f64> = b.on_e.iter().map(|g| g.g[0] * se).collect();
        let beta: Vec<f64> = b.on_f.iter().map(|g| g.g[0] * sf).collect();
        let tstar = h1 / (h1 + h2);
        let rule = &self.rules.gauss[self.quad.touching];
        let mut d = [0.0; MAX_LOCAL];
        for (lo, hi) in [(0.0, tstar), (tstar, 1.0)] {
            for (t, w) in rule.mapped(lo, hi) {
                let rmax = (h1 / t).min(h2 / (1.0 - t));
                let weight = w * a * rmax.powf(3.0 - 2.0 * s) / (3.0 - 2.0 * s);
                for p in 0..loc.k {
                    d[p] = alpha[p] * t - beta[p] * (1.0 - t);
                }
                loc.add(weight, &d);
            }
        }
    }

    fn disjoint_1d(&self, e: usize, f: usize, b: &PairBasis, loc: &mut Local) {
        let els = self.space.elements();
        let (ee, ef) = (&els[e], &els[f]);
        let iv = |el: &ElementGeom| {
            let (a, b) = (
                self.space.point_of(el.vertices[0])[0],
                self.space.point_of(el.vertices[1])[0],
            );
            (a.min(b), a.max(b))
        };
        let (ie, jf) = (iv(ee), iv(ef));
        let gap = (jf.0 - ie.1).max(ie.0 - jf.1);
        let ratio = gap / ee.diameter.max(ef.diameter);
        let m = gauss_order_for(ratio, 14.0, self.quad.disjoint);
        let rule = &self.rules.gauss[m];
        let mut d = [0.0; MAX_LOCAL];
        for (x, wx) in rule.mapped(ie.0, ie.1) {
            for (y, wy) in rule.mapped(jf.0, jf.1) {
                let k = self.kern.at([x - y, 0.0]);
                for p in 0..loc.k {
                    d[p] = b.on_e[p].at([x, 0.0]) - b.on_f[p].at([y, 0.0]);
                }
                loc.add(wx * wy * k, &d);
            }
        }
    }

    fn identical_2d(&self, e: usize, b: &PairBasis, loc: &mut Local) {
        let el = &self.space.elements()[e];
        let t = tri_points(self.space, el);
        let s = self.s();
        let mut hex: Vec<Point> = Vec::with_capacity(6);
        for i in 0..3 {
            let d = sub(t[(i + 1) % 3], t[i]);
            hex.push(d);
            hex.push([-d[0], -d[1]]);
        }
        hex.sort_by(|a, b| a[1].atan2(a[0]).partial_cmp(&b[1].atan2(b[0])).unwrap());
        let hexagon = Domain::Polygon {
            vertices: hex.clone(),
        };
        let mut brk: Vec<f64> = hex
            .iter()
            .map(|v| v[1].atan2(v[0]).rem_euclid(std::f64::consts::TAU))
            .collect();
        brk.extend(self.spec.symmetric_breakpoints());
        brk.push(0.0);
        brk.push(std::f64::consts::TAU);
        let brk = sort_dedup(brk);
        let radial = 1.0 / (2.0 - 2.0 * s) - 2.0 / (3.0 - 2.0 * s) + 1.0 / (4.0 - 2.0 * s);
        let rule = &self.rules.gauss[self.quad.angular];
        let mut d = [0.0; MAX_LOCAL];
        for win in brk.windows(2) {
            for (th, w) in rule.mapped(win[0], win[1]) {
                let dir = [th.cos(), th.sin()];
                let rho = hexagon.ray_exit_distance(&dir.map(|_| 0.0), &dir);
                let weight = w * self.kern.density(th) * rho.powf(2.0 - 2.0 * s) * el.measure * radial;
                for p in 0..loc.k {
                    d[p] = b.on_e[p].slope(dir);
                }
                loc.add(weight, &d);
            }
        }
    }

    fn shared_vertex_2d(&self, e: usize, f: usize, b: &PairBasis, loc: &mut Local) {
        let els = self.space.elements();
        let (ee, ef) = (&els[e], &els[f]);
        let shared = *ee.verts().iter().find(|v| ef.verts().contains(v)).unwrap();
        let p0 = self.space.point_of(shared);
        let edges = |el: &ElementGeom| {
            let o: Vec<Point> = el
                .verts()
                .iter()
                .filter(|&&v| v != shared)
                .map(|&v| sub(self.space.point_of(v), p0))
                .collect();
            [o[0], o[1]]
        };
        let (ae, af) = (edges(ee), edges(ef));
        let map = |m: &[Point; 2], u: (f64, f64)| {
            [m[0][0] * u.0 + m[1][0] * u.1, m[0][1] * u.0 + m[1][1] * u.1]
        };
        let s = self.s();
        let scale = 4.0 * ee.measure * ef.measure / (4.0 - 2.0 * s);
        let g = &self.rules.gauss[self.quad.touching];
        let tri = &self.rules.tri[self.quad.touching];
        let mut d = [0.0; MAX_LOCAL];
        for (t, wt) in g.mapped(0.0, 1.0) {
            let hyp = (t, 1.0 - t);
            for &(xi, eta, wv) in tri.iter() {
                for swap in [false, true] {
                    let (u, v) = if swap { ((xi, eta), hyp) } else { (hyp, (xi, eta)) };
                    let xe = map(&ae, u);
                    let yf = map(&af, v);
                    let k = self.kern.at(sub(xe, yf));
                    for p in 0..loc.k {
                        d[p] = b.on_e[p].slope(xe) - b.on_f[p].slope(yf);
                    }
                    loc.add(scale * wt * wv * k, &d);
                }
            }
        }
    }

    fn shared_edge_2d(&self, e: usize, f: usize, b: &PairBasis, loc: &mut Local) {
        let els = self.space.elements();
        let (ee, ef) = (&els[e], &els[f]);
        let common: Vec<usize> = ee.verts().iter().filter(|v| ef.verts().contains(v)).cloned().collect();
        let third = |el: &ElementGeom| *el.verts().iter().find(|v| !common.contains(v)).unwrap();
        let p0 = self.space.point_of(common[0]);
        let edge = sub(self.space.point_of(common[1]), p0);
        let we = sub(self.space.point_of(third(ee)), p0);
        let wf = sub(self.space.point_of(third(ef)), p0);
        let k = loc.k;
        let mut ge = [0.0; MAX_LOCAL];
        let mut gw = [0.0; MAX_LOCAL];
        let mut gwf = [0.0; MAX_LOCAL];
        for p in 0..k {
            let (ae, af) = (b.on_e[p], b.on_f[p]);
            ge[p] = if ae.g != [0.0, 0.0] { ae.slope(edge) } else { af.slope(edge) };
            gw[p] = ae.slope(we);
            gwf[p] = af.slope(wf);
        }
        let s = self.s();
        let scale = 4.0 * ee.measure * ef.measure * (1.0 / (3.0 - 2.0 * s) - 1.0 / (4.0 - 2.0 * s));
        let m = self.quad.touching;
        let g = &self.rules.gauss[m];
        let tri = &self.rules.tri[m];
        let mut d = [0.0; MAX_LOCAL];
        let mut emit = |z1: f64, x2: f64, y2: f64, w: f64, loc: &mut Local| {
            let z = [
                z1 * edge[0] + x2 * we[0] - y2 * wf[0],
                z1 * edge[1] + x2 * we[1] - y2 * wf[1],
            ];
            let kv = self.kern.at(z);
            for p in 0..k {
                d[p] = z1 * ge[p] + x2 * gw[p] - y2 * gwf[p];
            }
            loc.add(scale * w * kv, &d);
        };
        for (p1, w1) in g.mapped(0.0, 1.0) {
            for (p2, w2) in g.mapped(0.0, 1.0) {
                // z1 >= 0, x2 = 1 - z1
                emit(p1, 1.0 - p1, p2, w1 * w2, loc);
                // z1 <= 0, y2 = 1 + z1
                emit(-p1, p2, 1.0 - p1, w1 * w2, loc);
            }
        }
        for &(xi, eta, w) in tri.iter() {
            // y2 = 1, z1 >= 0
            emit(xi, eta, 1.0, w, loc);
            // x2 = 1, z1 <= 0
            emit(-xi, 1.0, eta, w, loc);
        }
    }

    fn disjoint_2d(&self, te: &[Point; 3], tf: &[Point; 3], b: &PairBasis, loc: &mut Local, depth: usize) {
        let (de, df) = (tri_diam(te), tri_diam(tf));
        let ratio = tri_distance(te, tf) / de.max(df);
        if ratio < 1.0 && depth < 4 {
            if de >= df {
                for c in red_children(te) {
                    self.disjoint_2d(&c, tf, b, loc, depth + 1);
                }
            } else {
                for c in red_children(tf) {
                    self.disjoint_2d(te, &c, b, loc, depth + 1);
                }
            }
            return;
        }
        let m = (gauss_order_for(ratio, 10.0, self.quad.disjoint) + 1).min(self.quad.disjoint);
        let tri = &self.rules.tri[m];
        let jac = |t: &[Point; 3]| (sub(t[1], t[0])[0] * sub(t[2], t[0])[1] - sub(t[1], t[0])[1] * sub(t[2], t[0])[0]).abs();
        let (je, jf) = (jac(te), jac(tf));
        let at = |t: &[Point; 3], xi: f64, eta: f64| {
            [
                t[0][0] + xi * (t[1][0] - t[0][0]) + eta * (t[2][0] - t[0][0]),
                t[0][1] + xi * (t[1][1] - t[0][1]) + eta * (t[2][1] - t[0][1]),
            ]
        };
        let mut d = [0.0; MAX_LOCAL];
        let ys: Vec<(Point, f64)> = tri.iter().map(|&(a, c, w)| (at(tf, a, c), w * jf)).collect();
        for &(a, c, wx) in tri.iter() {
            let x = at(te, a, c);
            let ex: Vec<f64> = b.on_e.iter().map(|g| g.at(x)).collect();
            for &(y, wy) in &ys {
                let kv = self.kern.at(sub(x, y));
                for p in 0..loc.k {
                    d[p] = ex[p] - b.on_f[p].at(y);
                }
                loc.add(wx * je * wy * kv, &d);
            }
        }
    }
}

/// `Φ(x) = ∫_{ℝⁿ∖Ω} K(x - y) dy` for interior `x`.
pub fn complement_weight(space: &FeSpace, spec: &KernelSpec, x: &[f64], angular: usize) -> f64 {
    let s = spec.s();
    let domain = space.domain();
    match domain {
        Domain::Interval { lo, hi } => {
            let a = spec.symmetric_density(0.0);
            a * ((hi - x[0]).powf(-2.0 * s) + (x[0] - lo).powf(-2.0 * s)) / (2.0 * s)
        }
        Domain::Polygon { .. } => {
            let rule = GaussRule::new(angular);
            angular_integral(spec, domain, x, &rule, |theta, dir| {
                spec.symmetric_density(theta) * domain.ray_exit_distance(x, &dir).powf(-2.0 * s) / (2.0 * s)
            })
        }
    }
}

/// Integral over `[0, 2π)` with panels at corner directions and density breakpoints.
fn angular_integral<F: FnMut(f64, [f64; 2]) -> f64>(
    spec: &KernelSpec,
    domain: &Domain,
    x: &[f64],
    rule: &GaussRule,
    mut f: F,
) -> f64 {
    let mut brk = domain.corner_angles(x);
    brk.extend(spec.symmetric_breakpoints());
    brk.push(0.0);
    brk.push(std::f64::consts::TAU);
    let brk = sort_dedup(brk);
    rule.integrate_panels(&brk, |t| f(t, [t.cos(), t.sin()]))
}

/// Quadrature point on an element with the hat-function values of its vertices.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub element: usize,
    pub x: Point,
    pub weight: f64,
    pub dofs: [Option<usize>; 3],
    pub shape: [f64; 3],
}

impl QuadPoint {
    /// Value of the finite-element function with coefficients `u` at this point.
    #[inline]
    pub fn eval(&self, u: &[f64]) -> f64 {
        (0..3)
            .filter_map(|k| self.dofs[k].map(|d| self.shape[k] * u[d]))
            .sum()
    }
}

fn make_point(space: &FeSpace, e: usize, x: Point, weight: f64) -> QuadPoint {
    let el = &space.elements()[e];
    let lam = el.barycentric(&x[..space.dim()]);
    let mut dofs = [None; 3];
    for (k, v) in el.verts().iter().enumerate() {
        dofs[k] = space.dof_of_node(*v);
    }
    QuadPoint {
        element: e,
        x,
        weight,
        dofs,
        shape: lam,
    }
}

/// Plain element Gauss rule of the given order (tensor collapsed in 2D).
pub fn element_quadrature(space: &FeSpace, order: usize) -> Vec<QuadPoint> {
    let mut out = Vec::new();
    let g = GaussRule::new(order);
    let tri = triangle_rule(order);
    for (e, el) in space.elements().iter().enumerate() {
        if space.dim() == 1 {
            let (a, b) = (
                space.point_of(el.vertices[0])[0],
                space.point_of(el.vertices[1])[0],
            );
            for (x, w) in g.mapped(a, b) {
                out.push(make_point(space, e, [x, 0.0], w));
            }
        } else {
            let t = tri_points(space, el);
            for &(xi, eta, w) in &tri {
                let x = [
                    t[0][0] + xi * (t[1][0] - t[0][0]) + eta * (t[2][0] - t[0][0]),
                    t[0][1] + xi * (t[1][1] - t[0][1]) + eta * (t[2][1] - t[0][1]),
                ];
                out.push(make_point(space, e, x, 2.0 * el.measure * w));
            }
        }
    }
    out
}

/// Element quadrature refined toward boundary nodes, for integrands that blow
/// up like `δ^{-2s}` at `∂Ω`. In 1D boundary elements are graded
/// geometrically toward the boundary vertex; in 2D they are subdivided twice.
pub fn boundary_graded_quadrature(space: &FeSpace, order: usize) -> Vec<QuadPoint> {
    let mut out = Vec::new();
    let g = GaussRule::new(order);
    let tri = triangle_rule(order);
    let delta = space.node_delta();
    for (e, el) in space.elements().iter().enumerate() {
        let on_boundary: Vec<usize> = el.verts().iter().filter(|&&v| delta[v] == 0.0).cloned().collect();
        if space.dim() == 1 {
            let (a, b) = (
                space.point_of(el.vertices[0])[0],
                space.point_of(el.vertices[1])[0],
            );
            let mut panels = vec![(a, b)];
            if !on_boundary.is_empty() {
                panels.clear();
                let ends = on_boundary.iter().map(|&v| space.point_of(v)[0]).collect::<Vec<_>>();
                if ends.len() == 2 {
                    let m = 0.5 * (a + b);
                    for &end in &ends {
                        let other = m;
                        graded_panels(end, other, &mut panels);
                    }
                } else {
                    let other = if (ends[0] - a).abs() < (ends[0] - b).abs() { b } else { a };
                    graded_panels(ends[0], other, &mut panels);
                }
            }
            for (lo, hi) in panels {
                for (x, w) in g.mapped(lo, hi) {
                    out.push(make_point(space, e, [x, 0.0], w));
                }
            }
        } else {
            let t = tri_points(space, el);
            let mut pieces = vec![t];
            if !on_boundary.is_empty() {
                for _ in 0..2 {
                    pieces = pieces.iter().flat_map(red_children).collect();
                }
            }
            for p in pieces {
                let area = 0.5 * (sub(p[1], p[0])[0] * sub(p[2], p[0])[1] - sub(p[1], p[0])[1] * sub(p[2], p[0])[0]).abs();
                for &(xi, eta, w) in &tri {
                    let x = [
                        p[0][0] + xi * (p[1][0] - p[0][0]) + eta * (p[2][0] - p[0][0]),
                        p[0][1] + xi * (p[1][1] - p[0][1]) + eta * (p[2][1] - p[0][1]),
                    ];
                    out.push(make_point(space, e, x, 2.0 * area * w));
                }
            }
        }
    }
    out
}

/// Geometric panels from `end` (singular) to `other`, ratio 1/2, 40 levels.
fn graded_panels(end: f64, other: f64, out: &mut Vec<(f64, f64)>) {
    let len = other - end;
    let mut outer = 1.0;
    for _ in 0..40 {
        let inner = 0.5 * outer;
        let (p, q) = (end + inner * len, end + outer * len);
        out.push((p.min(q), p.max(q)));
        outer = inner;
    }
}

/// Complement-term matrix `C_ij = 2 ∫_Ω φ_i φ_j Φ`.
fn complement_matrix(space: &FeSpace, spec: &KernelSpec, quad: &AssemblyQuadrature) -> DMatrix<f64> {
    let nd = space.num_dofs();
    let mut c = DMatrix::zeros(nd, nd);
    if space.dim() == 1 {
        complement_1d(space, spec, quad, &mut c);
    } else {
        let pts = boundary_graded_quadrature(space, 8);
        let phi: Vec<f64> = pts
            .par_iter()
            .map(|q| complement_weight(space, spec, &q.x, quad.angular))
            .collect();
        for (q, ph) in pts.iter().zip(&phi) {
            for a in 0..3 {
                let Some(i) = q.dofs[a] else { continue };
                for b in 0..3 {
                    let Some(j) = q.dofs[b] else { continue };
                    c[(i, j)] += 2.0 * q.weight * q.shape[a] * q.shape[b] * ph;
                }
            }
        }
    }
    c
}

/// 1D complement term: moments `∫ w^{k-2s}` exactly at boundary elements,
/// Gauss elsewhere.
fn complement_1d(space: &FeSpace, spec: &KernelSpec, quad: &AssemblyQuadrature, c: &mut DMatrix<f64>) {
    let Domain::Interval { lo, hi } = *space.domain() else { unreachable!() };
    let s = spec.s();
    let a = spec.symmetric_density(0.0);
    let rule = GaussRule::new(quad.touching);
    for el in space.elements() {
        let (x0, x1) = (
            space.point_of(el.vertices[0])[0],
            space.point_of(el.vertices[1])[0],
        );
        let locals: Vec<(usize, Affine)> = el
            .verts()
            .iter()
            .filter_map(|&v| space.dof_of_node(v).map(|k| (k, local_affine(el, v))))
            .collect();
        for &(i, fi) in &locals {
            for &(j, fj) in &locals {
                let mut total = 0.0;
                // each endpoint term (x - lo)^{-2s} and (hi - x)^{-2s}
                for (end, sign) in [(lo, 1.0), (hi, -1.0)] {
                    let touches = (x0 - end).abs() < 1e-14 || (x1 - end).abs() < 1e-14;
                    if touches {
                        // w = sign (x - end) in [0, h]
                        let h = x1 - x0;
                        let q = |w: f64| fi.at([end + sign * w, 0.0]) * fj.at([end + sign * w, 0.0]);
                        // exact quadratic fit from three samples
                        let (q0, q1, q2) = (q(0.0), q(0.5 * h), q(h));
                        let c2 = 2.0 * (q2 - 2.0 * q1 + q0) / (h * h);
                        let c1 = (q2 - q0) / h - c2 * h;
                        let c0 = q0;
                        let e = 1.0 - 2.0 * s;
                        total += c0 * h.powf(e) / e + c1 * h.powf(e + 1.0) / (e + 1.0) + c2 * h.powf(e + 2.0) / (e + 2.0);
                    } else {
                        total += rule.integrate(x0, x1, |x| {
                            fi.at([x, 0.0]) * fj.at([x, 0.0]) * (sign * (x - end)).powf(-2.0 * s)
                        });
                    }
                }
                c[(i, j)] += 2.0 * a * total / (2.0 * s);
            }
        }
    }
}

/// Assembles the Gram matrix of `⟨u, v⟩ = ∫∫_{ℝ^{2n}} (u(x)-u(y))(v(x)-v(y)) K(x-y)`.
pub fn assemble_gram(space: &FeSpace, spec: &KernelSpec, quad: &AssemblyQuadrature) -> Result<GramMatrix> {
    quad.validate()?;
    if space.dim() != spec.n() {
        return Err(Error::DimensionMismatch {
            expected: spec.n(),
            found: space.dim(),
        });
    }
    let cap = quad.touching.max(quad.disjoint).max(quad.angular);
    let ctx = Ctx {
        space,
        spec,
        kern: KernelEval::new(spec),
        quad: *quad,
        rules: Rules::new(cap),
    };
    let ne = space.num_elements();
    let nd = space.num_dofs();
    let mut g = complement_matrix(space, spec, quad);
    const BATCH: usize = 32;
    let mut start = 0;
    while start < ne {
        let end = (start + BATCH).min(ne);
        let batch: Vec<Vec<(Vec<usize>, Local, f64)>> = (start..end)
            .into_par_iter()
            .map(|e| {
                (e..ne)
                    .filter_map(|f| {
                        ctx.pair(e, f)
                            .map(|(dofs, loc)| (dofs, loc, if e == f { 1.0 } else { 2.0 }))
                    })
                    .collect()
            })
            .collect();
        for row in batch {
            for (dofs, loc, w) in row {
                for p in 0..dofs.len() {
                    for q in p..dofs.len() {
                        let v = w * loc.a[p][q];
                        let (i, j) = (dofs[p], dofs[q]);
                        if i == j {
                            g[(i, i)] += v;
                        } else if p == q {
                            unreachable!()
                        } else {
                            g[(i, j)] += v;
                            g[(j, i)] += v;
                        }
                    }
                }
            }
        }
        start = end;
    }
    for i in 0..nd {
        for j in 0..i {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        matrix: g,
        quadrature: *quad,
        tail_method: "exact radial tail R^{-2s}/(2s), angular Gauss panels",
    })
}

fn p1_mass(space: &FeSpace, interior_only: bool) -> DMatrix<f64> {
    let n = if interior_only { space.num_dofs() } else { space.num_nodes() };
    let mut m = DMatrix::zeros(n, n);
    let dim = space.dim();
    for el in space.elements() {
        let v = el.verts();
        let scale = el.measure / ((dim + 1) * (dim + 2)) as f64;
        for &a in v {
            for &b in v {
                let (i, j) = if interior_only {
                    match (space.dof_of_node(a), space.dof_of_node(b)) {
                        (Some(i), Some(j)) => (i, j),
                        _ => continue,
                    }
                } else {
                    (a, b)
                };
                m[(i, j)] += if a == b { 2.0 * scale } else { scale };
            }
        }
    }
    m
}

/// P1 mass matrix over the interior nodes.
pub fn assemble_mass(space: &FeSpace) -> DMatrix<f64> {
    p1_mass(space, true)
}

/// P1 mass matrix over all nodes, boundary included.
pub fn assemble_mass_all_nodes(space: &FeSpace) -> DMatrix<f64> {
    p1_mass(space, false)
}

/// Load vector `∫ g φ_i` by element Gauss quadrature of the given order (at least 2).
pub fn assemble_load<G: Fn(&[f64]) -> f64>(space: &FeSpace, g: G, order: usize) -> Vec<f64> {
    let mut b = vec![0.0; space.num_dofs()];
    for q in element_quadrature(space, order.max(2)) {
        let gv = g(&q.x[..space.dim()]);
        for k in 0..3 {
            if let Some(i) = q.dofs[k] {
                b[i] += q.weight * gv * q.shape[k];
            }
        }
    }
    b
}

/// Prescribed values on `ℝⁿ∖Ω`, supported in the collar `{0 < dist(y, Ω) < collar}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExteriorTrace {
    #[default]
    Zero,
    Constant { value: f64, collar: f64 },
    RadialGaussian {
        center: Vec<f64>,
        amplitude: f64,
        width: f64,
        collar: f64,
    },
    /// Piecewise linear in `dist(y, Ω)` through `(distances[k], values[k])`.
    Sampled {
        collar: f64,
        distances: Vec<f64>,
        values: Vec<f64>,
    },
}

impl ExteriorTrace {
    pub fn collar(&self) -> Option<f64> {
        match self {
            ExteriorTrace::Zero => None,
            ExteriorTrace::Constant { collar, .. }
            | ExteriorTrace::RadialGaussian { collar, .. }
            | ExteriorTrace::Sampled { collar, .. } => Some(*collar),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ExteriorTrace::Zero)
    }

    /// `h(y)`; zero inside `Ω` and beyond the collar.
    pub fn eval(&self, domain: &Domain, y: &[f64]) -> f64 {
        let d = domain.exterior_distance(y);
        if d <= 0.0 {
            return 0.0;
        }
        match self {
            ExteriorTrace::Zero => 0.0,
            ExteriorTrace::Constant { value, collar } => {
                if d < *collar {
                    *value
                } else {
                    0.0
                }
            }
            ExteriorTrace::RadialGaussian {
                center,
                amplitude,
                width,
                collar,
            } => {
                if d >= *collar {
                    return 0.0;
                }
                let r2: f64 = y.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                amplitude * (-r2 / (width * width)).exp()
            }
            ExteriorTrace::Sampled {
                collar,
                distances,
                values,
            } => {
                if d >= *collar {
                    return 0.0;
                }
                interp(distances, values, d)
            }
        }
    }

    /// Minimum of `h` over a sample of the collar, or of the data table.
    pub fn min_value(&self) -> f64 {
        match self {
            ExteriorTrace::Zero => 0.0,
            ExteriorTrace::Constant { value, .. } => *value,
            ExteriorTrace::RadialGaussian { amplitude, .. } => amplitude.min(0.0),
            ExteriorTrace::Sampled { values, .. } => values.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn validate(&self, space: &FeSpace) -> Result<()> {
        let Some(collar) = self.collar() else { return Ok(()) };
        if !(collar >= space.mesh_size()) {
            return Err(Error::InvalidParameter(format!(
                "exterior collar radius {collar} is smaller than the element diameter {}",
                space.mesh_size()
            )));
        }
        match self {
            ExteriorTrace::RadialGaussian { center, width, .. } => {
                if center.len() != space.dim() || !(*width > 0.0) {
                    return Err(Error::InvalidParameter(
                        "radial gaussian trace needs a center of the domain dimension and width > 0".into(),
                    ));
                }
            }
            ExteriorTrace::Sampled {
                distances, values, ..
            } => {
                if distances.len() != values.len()
                    || distances.is_empty()
                    || distances.windows(2).any(|w| w[1] <= w[0])
                {
                    return Err(Error::InvalidParameter(
                        "sampled trace needs increasing distances matching the values".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let k = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    (1.0 - t) * ys[k] + t * ys[k + 1]
}

/// `Ψ(x) = ∫_{ℝⁿ∖Ω} h(y) K_sym(x - y) dy` for interior `x`.
pub fn exterior_weight(space: &FeSpace, spec: &KernelSpec, trace: &ExteriorTrace, x: &[f64], angular: usize) -> f64 {
    let Some(collar) = trace.collar() else { return 0.0 };
    let s = spec.s();
    let domain = space.domain();
    let radial = |dir: &[f64]| -> f64 {
        let r0 = domain.ray_exit_distance(x, dir);
        let rc = domain.collar_exit_distance(x, dir, collar);
        if let ExteriorTrace::Constant { value, .. } = trace {
            return value * (r0.powf(-2.0 * s) - rc.powf(-2.0 * s)) / (2.0 * s);
        }
        // r = r0 e^t turns r^{-1-2s} dr into r0^{-2s} e^{-2st} dt
        let tmax = (rc / r0).ln();
        let panels = (tmax / 0.25).ceil().max(1.0) as usize;
        let g = GaussRule::new(10);
        let mut sum = 0.0;
        for k in 0..panels {
            let (a, b) = (tmax * k as f64 / panels as f64, tmax * (k + 1) as f64 / panels as f64);
            sum += g.integrate(a, b, |t| {
                let r = r0 * t.exp();
                let y: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + r * di).collect();
                // stay inside the open collar at the far end
                let hy = if t >= tmax { 0.0 } else { trace.eval(domain, &y) };
                hy * (-2.0 * s * t).exp()
            });
        }
        sum * r0.powf(-2.0 * s)
    };
    match domain {
        Domain::Interval { .. } => spec.symmetric_density(0.0) * (radial(&[1.0]) + radial(&[-1.0])),
        Domain::Polygon { .. } => {
            let rule = GaussRule::new(angular);
            angular_integral(spec, domain, x, &rule, |theta, dir| spec.symmetric_density(theta) * radial(&dir))
        }
    }
}

/// Exterior coupling `b_i = 2 ∫_Ω φ_i Ψ`, so that nonhomogeneous problems read
/// `G u = load + b`.
pub fn assemble_exterior_coupling(
    space: &FeSpace,
    spec: &KernelSpec,
    trace: &ExteriorTrace,
    angular: usize,
) -> Result<Vec<f64>> {
    trace.validate(space)?;
    let mut b = vec![0.0; space.num_dofs()];
    if trace.is_zero() {
        return Ok(b);
    }
    let pts = boundary_graded_quadrature(space, 8);
    let psi: Vec<f64> = pts
        .par_iter()
        .map(|q| exterior_weight(space, spec, trace, &q.x[..space.dim()], angular))
        .collect();
    for (q, ps) in pts.iter().zip(&psi) {
        for k in 0..3 {
            if let Some(i) = q.dofs[k] {
                b[i] += 2.0 * q.weight * q.shape[k] * ps;
            }
        }
    }
    Ok(b)
}

/// Vector as CSV `index,value` with a header line.
pub fn vector_csv(header: &str, v: &[f64]) -> String {
    let mut out = format!("index,{header}\n");
    for (i, x) in v.iter().enumerate() {
        let _ = writeln!(out, "{i},{x:.16e}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_mesh;
    use crate::kernel::AngularDensity;
    use crate::quadrature::{tanh_sinh, TanhSinh};
    use approx::assert_relative_eq;

    fn interval(h: f64) -> FeSpace {
        build_mesh(&Domain::interval(-1.0, 1.0).unwrap(), h).unwrap()
    }

    /// Brute-force value of `∫∫_{ℝ²} |φ(x)-φ(y)|² |x-y|^{-1-2s}` for the hat
    /// of half-width `h`, through `D(z) = ∫ (φ(x)-φ(x+z))² dx`.
    fn hat_energy_oracle(h: f64, s: f64) -> f64 {
        let hat = |x: f64| (1.0 - x.abs() / h).max(0.0);
        let g = GaussRule::new(20);
        let d = |z: f64| {
            let mut brk = vec![-h, 0.0, h, -h - z, -z, h - z];
            brk.sort_by(|a, b| a.partial_cmp(b).unwrap());
            g.integrate_panels(&brk, |x| (hat(x) - hat(x + z)).powi(2))
        };
        let opts = TanhSinh {
            rel_tol: 1e-14,
            abs_tol: 0.0,
            max_level: 12,
        };
        let f = |z: f64| d(z) * z.powf(-1.0 - 2.0 * s);
        let inner = tanh_sinh(f, 0.0, h, opts).value + tanh_sinh(f, h, 2.0 * h, opts).value;
        let tail = 2.0 * (2.0 * h / 3.0) * (2.0 * h).powf(-2.0 * s) / (2.0 * s);
        2.0 * (inner + tail)
    }

    #[test]
    fn single_hat_diagonal_matches_oracle() {
        let oracle = hat_energy_oracle(0.5, 0.25);
        assert_relative_eq!(oracle, 4.9987109344162555, max_relative = 1e-12);
        let space = interval(0.5);
        let spec = KernelSpec::isotropic(1, 0.25).unwrap();
        let g = assemble_gram(&space, &spec, &AssemblyQuadrature::default()).unwrap();
        assert_relative_eq!(g.matrix[(1, 1)], oracle, max_relative = 1e-10);
    }

    #[test]
    fn rejects_low_touching_order() {
        let q = AssemblyQuadrature {
            touching: 2,
            ..Default::default()
        };
        let spec = KernelSpec::isotropic(1, 0.25).unwrap();
        assert!(matches!(
            assemble_gram(&interval(0.5), &spec, &q),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn gram_is_linear_in_the_density() {
        let spec = KernelSpec::isotropic(2, 0.4).unwrap();
        let space = build_mesh(&Domain::unit_square(), 0.25).unwrap();
        let q = AssemblyQuadrature::default();
        let g1 = assemble_gram(&space, &spec, &q).unwrap();
        let g2 = assemble_gram(&space, &spec.scaled(2.0).unwrap(), &q).unwrap();
        assert!((&g2.matrix - 2.0 * &g1.matrix).amax() <= 1e-13 * g1.matrix.amax());
    }

    #[test]
    fn gram_is_spd_with_negative_far_entries() {
        for (space, spec) in [
            (interval(0.125), KernelSpec::isotropic(1, 0.25).unwrap()),
            (
                build_mesh(&Domain::unit_square(), 0.25).unwrap(),
                KernelSpec::new(2, 0.3, AngularDensity::sampled(16, true, |t| 1.0 + 0.5 * (2.0 * t).cos()).unwrap())
                    .unwrap(),
            ),
        ] {
            let g = assemble_gram(&space, &spec, &AssemblyQuadrature::default()).unwrap();
            let m = &g.matrix;
            assert_eq!(m, &m.transpose());
            assert!(m.clone().cholesky().is_some());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    let (a, b) = (space.node_of_dof(i), space.node_of_dof(j));
                    let apart = space.elements().iter().all(|e| !(e.verts().contains(&a) && e.verts().contains(&b)));
                    if i != j && apart {
                        assert!(m[(i, j)] < 0.0, "entry ({i},{j}) = {}", m[(i, j)]);
                    }
                }
            }
        }
    }

    #[test]
    fn diagonal_grows_with_s() {
        let space = interval(0.125);
        let q = AssemblyQuadrature::default();
        let a = assemble_gram(&space, &KernelSpec::isotropic(1, 0.2).unwrap(), &q).unwrap();
        let b = assemble_gram(&space, &KernelSpec::isotropic(1, 0.4).unwrap(), &q).unwrap();
        for i in 0..space.num_dofs() {
            assert!(b.matrix[(i, i)] > a.matrix[(i, i)]);
        }
    }

    #[test]
    fn two_dimensional_hat_energy_is_consistent_under_scaling() {
        // [u(·/L)]² = L^{n-2s} [u]² for the scaled domain and mesh
        let s = 0.35;
        let spec = KernelSpec::isotropic(2, s).unwrap();
        let q = AssemblyQuadrature::default();
        let small = build_mesh(&Domain::unit_square(), 0.5).unwrap();
        let big_dom = Domain::polygon(vec![[0.0, 0.0], [3.0, 0.0], [3.0, 3.0], [0.0, 3.0]]).unwrap();
        let big = build_mesh(&big_dom, 1.5).unwrap();
        let a = assemble_gram(&small, &spec, &q).unwrap().matrix[(0, 0)];
        let b = assemble_gram(&big, &spec, &q).unwrap().matrix[(0, 0)];
        assert_relative_eq!(b, 3f64.powf(2.0 - 2.0 * s) * a, max_relative = 1e-10);
    }

    #[test]
    fn two_dimensional_energy_converges_under_refinement() {
        // interpolants of a smooth bump: energies settle as h shrinks
        let spec = KernelSpec::isotropic(2, 0.25).unwrap();
        let q = AssemblyQuadrature::default();
        let mut space = build_mesh(&Domain::unit_square(), 0.5).unwrap();
        let bump = |x: &[f64]| (x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])) * 16.0;
        let mut vals = Vec::new();
        for _ in 0..3 {
            space = space.refine().unwrap();
            let g = assemble_gram(&space, &spec, &q).unwrap();
            let u = space.interpolate(bump);
            vals.push(g.inner(&u, &u));
        }
        let d1 = (vals[1] - vals[0]).abs();
        let d2 = (vals[2] - vals[1]).abs();
        assert!(d2 < 0.6 * d1, "{vals:?}");
    }

    #[test]
    fn mass_matrix() {
        let space = interval(0.5);
        let m = assemble_mass(&space);
        assert_relative_eq!(m[(1, 1)], 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(m[(0, 1)], 1.0 / 12.0, max_relative = 1e-15);
        assert_relative_eq!(assemble_mass_all_nodes(&space).sum(), 2.0, max_relative = 1e-14);
        let sq = build_mesh(&Domain::unit_square(), 0.25).unwrap();
        assert_relative_eq!(assemble_mass_all_nodes(&sq).sum(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn loads() {
        let space = interval(0.25);
        assert!(assemble_load(&space, |_| 0.0, 2).iter().all(|v| *v == 0.0));
        for v in assemble_load(&space, |_| 1.0, 2) {
            assert_relative_eq!(v, 0.25, max_relative = 1e-14);
        }
        let b = assemble_load(&space, |x| x[0], 3);
        let n = b.len();
        for i in 0..n {
            assert!((b[i] + b[n - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn exterior_coupling() {
        let space = interval(0.25);
        let spec = KernelSpec::isotropic(1, 0.25).unwrap();
        let zero = assemble_exterior_coupling(&space, &spec, &ExteriorTrace::Zero, 16).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let thin = ExteriorTrace::Constant {
            value: 1.0,
            collar: 0.1,
        };
        assert!(assemble_exterior_coupling(&space, &spec, &thin, 16).is_err());

        // brute force: 2 ∫_Ω φ_i(x) ∫_{collar} c |x-y|^{-1.5} dy dx
        let (c, collar) = (0.7, 0.5);
        let trace = ExteriorTrace::Constant { value: c, collar };
        let b = assemble_exterior_coupling(&space, &spec, &trace, 16).unwrap();
        let opts = TanhSinh::default();
        for i in [0, 3] {
            let xi = space.dof_point(i)[0];
            let phi = |x: f64| (1.0 - (x - xi).abs() / 0.25).max(0.0);
            let inner = |x: f64| {
                let right = tanh_sinh(|y| (y - x).powf(-1.5), 1.0, 1.0 + collar, opts).value;
                let left = tanh_sinh(|y| (x - y).powf(-1.5), -1.0 - collar, -1.0, opts).value;
                c * (right + left)
            };
            let oracle = 2.0
                * (tanh_sinh(|x| phi(x) * inner(x), xi - 0.25, xi, opts).value
                    + tanh_sinh(|x| phi(x) * inner(x), xi, xi + 0.25, opts).value);
            assert_relative_eq!(b[i], oracle, max_relative = 1e-8);
            assert!(b[i] > 0.0);
        }

        let gauss = ExteriorTrace::RadialGaussian {
            center: vec![1.2],
            amplitude: 2.0,
            width: 0.3,
            collar: 0.5,
        };
        let b = assemble_exterior_coupling(&space, &spec, &gauss, 16).unwrap();
        assert!(b.iter().all(|v| *v > 0.0));
        assert!(b[6] > b[0]);
    }
}
