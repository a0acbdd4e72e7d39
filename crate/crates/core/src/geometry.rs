//! Convex domains, conforming P1 meshes, boundary distance and ray exits.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assembly::ExteriorTrace;
use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Bounded convex domain: an interval in 1D or a convex polygon in 2D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub enum Domain {
    Interval { lo: f64, hi: f64 },
    /// Counterclockwise vertices.
    Polygon { vertices: Vec<Point> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
enum DomainRepr {
    Interval([f64; 2]),
    Polygon(Vec<Point>),
}

impl TryFrom<DomainRepr> for Domain {
    type Error = Error;
    fn try_from(r: DomainRepr) -> Result<Self> {
        match r {
            DomainRepr::Interval([lo, hi]) => Domain::interval(lo, hi),
            DomainRepr::Polygon(v) => Domain::polygon(v),
        }
    }
}

impl From<Domain> for DomainRepr {
    fn from(d: Domain) -> Self {
        match d {
            Domain::Interval { lo, hi } => DomainRepr::Interval([lo, hi]),
            Domain::Polygon { vertices } => DomainRepr::Polygon(vertices),
        }
    }
}

#[inline]
fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

impl Domain {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Geometry(format!(
                "interval needs lo < hi, got ({lo}, {hi})"
            )));
        }
        Ok(Domain::Interval { lo, hi })
    }

    pub fn polygon(vertices: Vec<Point>) -> Result<Self> {
        let m = vertices.len();
        if m < 3 {
            return Err(Error::Geometry("polygon needs at least 3 vertices".into()));
        }
        for i in 0..m {
            let a = vertices[i];
            let b = vertices[(i + 1) % m];
            let c = vertices[(i + 2) % m];
            if dist(a, b) == 0.0 {
                return Err(Error::Geometry(format!("degenerate edge at vertex {i}")));
            }
            if cross(sub(b, a), sub(c, b)) <= 0.0 {
                return Err(Error::Geometry(format!(
                    "polygon must be convex and counterclockwise (turn at vertex {})",
                    (i + 1) % m
                )));
            }
        }
        Ok(Domain::Polygon { vertices })
    }

    pub fn unit_square() -> Self {
        Domain::Polygon {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        }
    }

    /// Regular polygon inscribed in the circle of given radius about the origin.
    pub fn regular_polygon(sides: usize, radius: f64) -> Result<Self> {
        let v = (0..sides)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / sides as f64;
                [radius * t.cos(), radius * t.sin()]
            })
            .collect();
        Domain::polygon(v)
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Polygon { .. } => 2,
        }
    }

    pub fn measure(&self) -> f64 {
        match self {
            Domain::Interval { lo, hi } => hi - lo,
            Domain::Polygon { vertices } => {
                let m = vertices.len();
                0.5 * (0..m)
                    .map(|i| cross(vertices[i], vertices[(i + 1) % m]))
                    .sum::<f64>()
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Interval { lo, hi } => hi - lo,
            Domain::Polygon { vertices } => {
                let mut d: f64 = 0.0;
                for a in vertices {
                    for b in vertices {
                        d = d.max(dist(*a, *b));
                    }
                }
                d
            }
        }
    }

    /// Polygon corners; empty for intervals.
    pub fn corners(&self) -> Vec<Point> {
        match self {
            Domain::Interval { .. } => Vec::new(),
            Domain::Polygon { vertices } => vertices.clone(),
        }
    }

    /// Signed distances to the edge lines (positive inside) and outward unit normals.
    fn edge_lines(vertices: &[Point]) -> impl Iterator<Item = (Point, Point, Point)> + '_ {
        let m = vertices.len();
        (0..m).map(move |i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % m];
            let e = sub(b, a);
            let l = (e[0] * e[0] + e[1] * e[1]).sqrt();
            (a, b, [e[1] / l, -e[0] / l])
        })
    }

    /// `δ(x) = dist(x, ℝⁿ∖Ω)`; zero outside the closure.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Interval { lo, hi } => (x[0] - lo).min(hi - x[0]).max(0.0),
            Domain::Polygon { vertices } => {
                let p = [x[0], x[1]];
                Self::edge_lines(vertices)
                    .map(|(a, _, nrm)| -(sub(p, a)[0] * nrm[0] + sub(p, a)[1] * nrm[1]))
                    .fold(f64::INFINITY, f64::min)
                    .max(0.0)
            }
        }
    }

    /// Distance from a point outside the domain to the domain; zero inside.
    pub fn exterior_distance(&self, y: &[f64]) -> f64 {
        match self {
            Domain::Interval { lo, hi } => (lo - y[0]).max(y[0] - hi).max(0.0),
            Domain::Polygon { vertices } => {
                let p = [y[0], y[1]];
                let inside = Self::edge_lines(vertices)
                    .all(|(a, _, nrm)| sub(p, a)[0] * nrm[0] + sub(p, a)[1] * nrm[1] <= 0.0);
                if inside {
                    return 0.0;
                }
                Self::edge_lines(vertices)
                    .map(|(a, b, _)| segment_distance(p, a, b))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// `R(x, θ) = sup{t > 0 : x + tθ ∈ Ω}` for interior `x` and unit `θ`.
    pub fn ray_exit_distance(&self, x: &[f64], theta: &[f64]) -> f64 {
        match self {
            Domain::Interval { lo, hi } => {
                if theta[0] > 0.0 {
                    hi - x[0]
                } else {
                    x[0] - lo
                }
            }
            Domain::Polygon { vertices } => {
                let p = [x[0], x[1]];
                let mut best = f64::INFINITY;
                for (a, _, nrm) in Self::edge_lines(vertices) {
                    let c = nrm[0] * theta[0] + nrm[1] * theta[1];
                    if c > 1e-300 {
                        let d = -(sub(p, a)[0] * nrm[0] + sub(p, a)[1] * nrm[1]);
                        best = best.min(d.max(0.0) / c);
                    }
                }
                best
            }
        }
    }

    /// Exit distance along the ray from the collar `{y : dist(y, Ω) < width}`.
    pub fn collar_exit_distance(&self, x: &[f64], theta: &[f64], width: f64) -> f64 {
        match self {
            Domain::Interval { .. } => self.ray_exit_distance(x, theta) + width,
            Domain::Polygon { .. } => {
                let r0 = self.ray_exit_distance(x, theta);
                let mut lo = r0;
                let mut hi = r0 + width + self.diameter();
                let at = |t: f64| self.exterior_distance(&[x[0] + t * theta[0], x[1] + t * theta[1]]);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if at(mid) < width {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// Polar angles of the corners as seen from `x`; kinks of `θ ↦ R(x, θ)`.
    pub fn corner_angles(&self, x: &[f64]) -> Vec<f64> {
        self.corners()
            .iter()
            .map(|c| (c[1] - x[1]).atan2(c[0] - x[0]).rem_euclid(std::f64::consts::TAU))
            .collect()
    }
}

/// Pair classification used to select quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Identical,
    SharedFacet,
    SharedVertex,
    Disjoint,
}

/// Per-element affine data: barycentric `λ_k(x) = c_k + g_k · x`.
#[derive(Debug, Clone)]
pub struct ElementGeom {
    pub vertices: [usize; 3],
    pub nv: usize,
    pub measure: f64,
    pub diameter: f64,
    pub bary_const: [f64; 3],
    pub bary_grad: [Point; 3],
}

impl ElementGeom {
    pub fn verts(&self) -> &[usize] {
        &self.vertices[..self.nv]
    }

    #[inline]
    pub fn barycentric(&self, x: &[f64]) -> [f64; 3] {
        let mut l = [0.0; 3];
        for k in 0..self.nv {
            let g = self.bary_grad[k];
            l[k] = self.bary_const[k] + g[0] * x[0] + if x.len() > 1 { g[1] * x[1] } else { 0.0 };
        }
        l
    }
}

/// P1 finite-element space on a conforming simplicial mesh of a convex domain.
///
/// Degrees of freedom are the interior nodes only, so every basis function
/// vanishes on the boundary and outside the domain.
#[derive(Debug, Clone)]
pub struct FeSpace {
    domain: Domain,
    nodes: Vec<Point>,
    elements: Vec<ElementGeom>,
    dof_of_node: Vec<Option<usize>>,
    node_of_dof: Vec<usize>,
    delta: Vec<f64>,
}

impl FeSpace {
    fn from_parts(domain: Domain, nodes: Vec<Point>, cells: Vec<[usize; 3]>) -> Result<Self> {
        let dim = domain.dim();
        let mut elements = Vec::with_capacity(cells.len());
        for (e, mut c) in cells.into_iter().enumerate() {
            let geom = if dim == 1 {
                let (x0, x1) = (nodes[c[0]][0], nodes[c[1]][0]);
                let (x0, x1, c) = if x1 < x0 { (x1, x0, [c[1], c[0], 0]) } else { (x0, x1, c) };
                let h = x1 - x0;
                if h <= 0.0 {
                    return Err(Error::Geometry(format!("element {e} has zero length")));
                }
                ElementGeom {
                    vertices: [c[0], c[1], usize::MAX],
                    nv: 2,
                    measure: h,
                    diameter: h,
                    bary_const: [x1 / h, -x0 / h, 0.0],
                    bary_grad: [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0, 0.0]],
                }
            } else {
                let mut p = [nodes[c[0]], nodes[c[1]], nodes[c[2]]];
                let mut area2 = cross(sub(p[1], p[0]), sub(p[2], p[0]));
                if area2 < 0.0 {
                    c.swap(1, 2);
                    p.swap(1, 2);
                    area2 = -area2;
                }
                if area2 <= 1e-300 {
                    return Err(Error::Geometry(format!("element {e} is degenerate")));
                }
                let mut grad = [[0.0; 2]; 3];
                let mut cst = [0.0; 3];
                for k in 0..3 {
                    let a = p[(k + 1) % 3];
                    let b = p[(k + 2) % 3];
                    grad[k] = [(a[1] - b[1]) / area2, (b[0] - a[0]) / area2];
                    cst[k] = 1.0 - grad[k][0] * p[k][0] - grad[k][1] * p[k][1];
                }
                let diameter = dist(p[0], p[1]).max(dist(p[1], p[2])).max(dist(p[0], p[2]));
                ElementGeom {
                    vertices: c,
                    nv: 3,
                    measure: 0.5 * area2,
                    diameter,
                    bary_const: cst,
                    bary_grad: grad,
                }
            };
            elements.push(geom);
        }
        let tol = 1e-12 * domain.diameter();
        let delta: Vec<f64> = nodes
            .iter()
            .map(|p| {
                let d = domain.boundary_distance(&p[..dim]);
                if d <= tol {
                    0.0
                } else {
                    d
                }
            })
            .collect();
        let mut dof_of_node = vec![None; nodes.len()];
        let mut node_of_dof = Vec::new();
        for (i, d) in delta.iter().enumerate() {
            if *d > 0.0 {
                dof_of_node[i] = Some(node_of_dof.len());
                node_of_dof.push(i);
            }
        }
        Ok(FeSpace {
            domain,
            nodes,
            elements,
            dof_of_node,
            node_of_dof,
            delta,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_dofs(&self) -> usize {
        self.node_of_dof.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i][..self.dim()]
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn elements(&self) -> &[ElementGeom] {
        &self.elements
    }

    pub fn dof_of_node(&self, i: usize) -> Option<usize> {
        self.dof_of_node[i]
    }

    pub fn node_of_dof(&self, k: usize) -> usize {
        self.node_of_dof[k]
    }

    /// Node coordinates of degree of freedom `k`.
    pub fn dof_point(&self, k: usize) -> &[f64] {
        self.node(self.node_of_dof[k])
    }

    /// δ at every node (zero on boundary nodes).
    pub fn node_delta(&self) -> &[f64] {
        &self.delta
    }

    /// δ at each degree of freedom.
    pub fn dof_delta(&self) -> Vec<f64> {
        self.node_of_dof.iter().map(|&i| self.delta[i]).collect()
    }

    /// Largest element diameter.
    pub fn mesh_size(&self) -> f64 {
        self.elements.iter().map(|e| e.diameter).fold(0.0, f64::max)
    }

    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        self.domain.boundary_distance(x)
    }

    pub fn ray_exit_distance(&self, x: &[f64], theta: &[f64]) -> f64 {
        self.domain.ray_exit_distance(x, theta)
    }

    pub fn pair_kind(&self, e: usize, f: usize) -> PairKind {
        if e == f {
            return PairKind::Identical;
        }
        let a = self.elements[e].verts();
        let b = self.elements[f].verts();
        let shared = a.iter().filter(|v| b.contains(v)).count();
        match (shared, self.dim()) {
            (0, _) => PairKind::Disjoint,
            (1, 1) => PairKind::SharedFacet,
            (1, _) => PairKind::SharedVertex,
            _ => PairKind::SharedFacet,
        }
    }

    /// Point coordinates padded to two components.
    pub fn point_of(&self, i: usize) -> Point {
        self.nodes[i]
    }

    /// Nodal values of a field, zero on boundary nodes.
    pub fn node_values(&self, coeffs: &[f64]) -> Vec<f64> {
        self.dof_of_node
            .iter()
            .map(|d| d.map_or(0.0, |k| coeffs[k]))
            .collect()
    }

    /// Nodal interpolant of `f` on the degrees of freedom.
    pub fn interpolate<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.num_dofs()).map(|k| f(self.dof_point(k))).collect()
    }

    /// Uniform refinement: bisection in 1D, red refinement in 2D. Existing
    /// nodes keep their indices.
    pub fn refine(&self) -> Result<FeSpace> {
        let mut nodes = self.nodes.clone();
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, nodes: &mut Vec<Point>| -> usize {
            let key = (a.min(b), a.max(b));
            *mids.entry(key).or_insert_with(|| {
                let (p, q) = (nodes[a], nodes[b]);
                nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                nodes.len() - 1
            })
        };
        let mut cells = Vec::new();
        for el in &self.elements {
            if el.nv == 2 {
                let [a, b, _] = el.vertices;
                let m = midpoint(a, b, &mut nodes);
                cells.push([a, m, 0]);
                cells.push([m, b, 0]);
            } else {
                let [a, b, c] = el.vertices;
                let ab = midpoint(a, b, &mut nodes);
                let bc = midpoint(b, c, &mut nodes);
                let ca = midpoint(c, a, &mut nodes);
                cells.push([a, ab, ca]);
                cells.push([ab, b, bc]);
                cells.push([ca, bc, c]);
                cells.push([ab, bc, ca]);
            }
        }
        FeSpace::from_parts(self.domain.clone(), nodes, cells)
    }

    /// Node table as CSV: `node,x[,y],delta,dof`.
    pub fn nodes_csv(&self) -> String {
        let mut out = String::new();
        let dim = self.dim();
        out.push_str(if dim == 1 { "node,x,delta,dof\n" } else { "node,x,y,delta,dof\n" });
        for (i, p) in self.nodes.iter().enumerate() {
            let dof = self.dof_of_node[i].map_or(-1, |k| k as i64);
            if dim == 1 {
                let _ = writeln!(out, "{i},{:.16e},{:.16e},{dof}", p[0], self.delta[i]);
            } else {
                let _ = writeln!(out, "{i},{:.16e},{:.16e},{:.16e},{dof}", p[0], p[1], self.delta[i]);
            }
        }
        out
    }

    /// Element table as CSV: `element,v0,v1[,v2]`.
    pub fn elements_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(if self.dim() == 1 { "element,v0,v1\n" } else { "element,v0,v1,v2\n" });
        for (e, el) in self.elements.iter().enumerate() {
            let v: Vec<String> = el.verts().iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{e},{}", v.join(","));
        }
        out
    }
}

/// Builds a conforming mesh with element diameters at most `1.5 * target_h`.
///
/// Intervals are subdivided uniformly and axis-aligned rectangles get a
/// structured grid with one diagonal per cell. Other convex polygons start
/// from a fan about the vertex centroid and are red-refined until fine enough.
pub fn build_mesh(domain: &Domain, target_h: f64) -> Result<FeSpace> {
    if !(target_h > 0.0) || target_h >= domain.diameter() {
        return Err(Error::InvalidParameter(format!(
            "target_h must lie in (0, diameter = {}), got {target_h}",
            domain.diameter()
        )));
    }
    match domain {
        Domain::Interval { lo, hi } => {
            let n = ((hi - lo) / target_h - 1e-9).ceil().max(1.0) as usize;
            let nodes: Vec<Point> = (0..=n)
                .map(|i| [lo + (hi - lo) * i as f64 / n as f64, 0.0])
                .collect();
            let cells = (0..n).map(|i| [i, i + 1, 0]).collect();
            FeSpace::from_parts(domain.clone(), nodes, cells)
        }
        Domain::Polygon { vertices } => {
            if let Some((x0, y0, x1, y1)) = axis_rectangle(vertices) {
                let nx = ((x1 - x0) / target_h - 1e-9).ceil().max(1.0) as usize;
                let ny = ((y1 - y0) / target_h - 1e-9).ceil().max(1.0) as usize;
                let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
                for j in 0..=ny {
                    for i in 0..=nx {
                        nodes.push([
                            x0 + (x1 - x0) * i as f64 / nx as f64,
                            y0 + (y1 - y0) * j as f64 / ny as f64,
                        ]);
                    }
                }
                let id = |i: usize, j: usize| j * (nx + 1) + i;
                let mut cells = Vec::with_capacity(2 * nx * ny);
                for j in 0..ny {
                    for i in 0..nx {
                        cells.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                        cells.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
                    }
                }
                return FeSpace::from_parts(domain.clone(), nodes, cells);
            }
            let m = vertices.len();
            let c = [
                vertices.iter().map(|v| v[0]).sum::<f64>() / m as f64,
                vertices.iter().map(|v| v[1]).sum::<f64>() / m as f64,
            ];
            let mut nodes = vertices.clone();
            nodes.push(c);
            let cells = (0..m).map(|i| [m, i, (i + 1) % m]).collect();
            let mut space = FeSpace::from_parts(domain.clone(), nodes, cells)?;
            while space.mesh_size() > 1.5 * target_h {
                space = space.refine()?;
            }
            Ok(space)
        }
    }
}

fn axis_rectangle(v: &[Point]) -> Option<(f64, f64, f64, f64)> {
    if v.len() != 4 {
        return None;
    }
    let xs: Vec<f64> = v.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = v.iter().map(|p| p[1]).collect();
    let (x0, x1) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = (ys.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let corner = |p: &Point| (p[0] == x0 || p[0] == x1) && (p[1] == y0 || p[1] == y1);
    if v.iter().all(corner) {
        Some((x0, y0, x1, y1))
    } else {
        None
    }
}

/// Coefficients on the interior nodes of a space, plus optional exterior data.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub coeffs: Vec<f64>,
    pub exterior: Option<ExteriorTrace>,
}

impl Field {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Field {
            coeffs,
            exterior: None,
        }
    }

    pub fn zeros(space: &FeSpace) -> Self {
        Field::new(vec![0.0; space.num_dofs()])
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn check(&self, space: &FeSpace) -> Result<()> {
        if self.coeffs.len() != space.num_dofs() {
            return Err(Error::DimensionMismatch {
                expected: space.num_dofs(),
                found: self.coeffs.len(),
            });
        }
        Ok(())
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field::new(self.coeffs.iter().map(|v| a * v).collect())
    }
}
