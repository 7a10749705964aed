//! Surface meshes and tangent-plane transition probabilities.
//!
//! The geodesic sphere is the standard icosahedron (vertices at cyclic
//! permutations of `(0, ±1, ±φ)`) subdivided twice at edge midpoints and
//! then pushed out to the unit sphere. In this orientation both poles land
//! on first-level midpoints, so they are always mesh vertices.

use std::collections::HashMap;

use log::warn;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dtmc::{finish_row, Matrix, Row, StateId, TransitionModel};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, gauss_legendre, normal_interval_mass, normal_tail};
use crate::par::{map_range, ExecMode};

/// Largest probability of leaving the allowed neighborhood in one step.
pub const OFF_NEIGHBOR_LIMIT: f64 = 0.05;

const GL_ORDER: usize = 12;
const QUAD_TOL: f64 = 1e-13;
const QUAD_DEPTH: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementKind {
    /// Triangle touching one of the 12 icosahedron vertices.
    PentagonTriangle,
    HexagonTriangle,
    Rectangle,
    /// Abstract torus cell.
    Cell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub vertices: Vec<usize>,
    pub kind: ElementKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<[f64; 3]>,
    pub elements: Vec<Element>,
    /// One state per element: centroid pushed to the surface.
    pub states: Vec<[f64; 3]>,
    /// Elements sharing at least one vertex, self excluded, sorted.
    pub adjacency: Vec<Vec<StateId>>,
    pub areas: Vec<f64>,
}

impl SurfaceMesh {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// `state_id,x,y,z` rows.
    pub fn write_states_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "state_id,x,y,z")?;
        for (i, s) in self.states.iter().enumerate() {
            writeln!(w, "{i},{},{},{}", s[0], s[1], s[2])?;
        }
        Ok(())
    }

    fn positions(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.to_vec()).collect()
    }
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn arr(v: Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Vertex-sharing adjacency of a polygon soup.
fn vertex_adjacency(elements: &[Element], n_vertices: usize) -> Vec<Vec<StateId>> {
    let mut touching = vec![Vec::new(); n_vertices];
    for (e, el) in elements.iter().enumerate() {
        for &v in &el.vertices {
            touching[v].push(e as StateId);
        }
    }
    elements
        .iter()
        .enumerate()
        .map(|(e, el)| {
            let mut adj: Vec<StateId> = el.vertices.iter().flat_map(|&v| touching[v].iter().copied()).filter(|&o| o as usize != e).collect();
            adj.sort_unstable();
            adj.dedup();
            adj
        })
        .collect()
}

/// `n × n` torus; state `r·n + c` is connected to its four wraparound
/// neighbors (fewer distinct ones when `n = 2`).
pub fn build_torus_mesh(n: usize) -> Result<SurfaceMesh> {
    if n < 2 {
        return Err(Error::Domain(format!("torus side must be at least 2, got {n}")));
    }
    let id = |r: usize, c: usize| ((r % n) * n + c % n) as StateId;
    let mut states = Vec::with_capacity(n * n);
    let mut adjacency = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            states.push([r as f64, c as f64, 0.0]);
            let mut adj = vec![id(r + n - 1, c), id(r + 1, c), id(r, c + n - 1), id(r, c + 1)];
            adj.sort_unstable();
            adj.dedup();
            adjacency.push(adj);
        }
    }
    let elements = (0..n * n).map(|_| Element { vertices: vec![], kind: ElementKind::Cell }).collect();
    Ok(SurfaceMesh { vertices: vec![], elements, states, adjacency, areas: vec![1.0; n * n] })
}

/// Area of the spherical triangle `abc` on the unit sphere.
pub fn spherical_triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let num = a.dot(&b.cross(c)).abs();
    let den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * num.atan2(den)
}

struct UnitSphere {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[usize; 3]>,
    /// True for the 12 icosahedron vertices.
    original: Vec<bool>,
}

fn icosahedron() -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v = Vec::with_capacity(12);
    for a in [1.0, -1.0] {
        for b in [1.0, -1.0] {
            v.push(Vector3::new(0.0, a, b * phi));
            v.push(Vector3::new(a, b * phi, 0.0));
            v.push(Vector3::new(b * phi, 0.0, a));
        }
    }
    // faces are the vertex triples at mutual distance 2
    let edge = |i: usize, j: usize| ((v[i] - v[j]).norm() - 2.0).abs() < 1e-9;
    let mut faces = Vec::with_capacity(20);
    for i in 0..12 {
        for j in i + 1..12 {
            for k in j + 1..12 {
                if edge(i, j) && edge(j, k) && edge(i, k) {
                    faces.push(outward([i, j, k], &v));
                }
            }
        }
    }
    (v, faces)
}

fn outward(t: [usize; 3], v: &[Vector3<f64>]) -> [usize; 3] {
    let n = (v[t[1]] - v[t[0]]).cross(&(v[t[2]] - v[t[0]]));
    if n.dot(&v[t[0]]) < 0.0 {
        [t[0], t[2], t[1]]
    } else {
        t
    }
}

fn unit_sphere(subdivisions: u32) -> UnitSphere {
    let (mut vertices, mut triangles) = icosahedron();
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vs: &mut Vec<Vector3<f64>>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vs.push((vs[a] + vs[b]) / 2.0);
                vs.len() - 1
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for [a, b, c] in triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        triangles = next;
    }
    let original = (0..vertices.len()).map(|i| i < 12).collect();
    for v in &mut vertices {
        *v = v.normalize();
    }
    UnitSphere { vertices, triangles, original }
}

/// Geodesic sphere with `20·4²` triangles.
pub fn build_geodesic_sphere(subdivisions: u32) -> Result<SurfaceMesh> {
    if subdivisions != 2 {
        return Err(Error::Domain(format!("only 2 subdivisions are supported, got {subdivisions}")));
    }
    let s = unit_sphere(subdivisions);
    let elements: Vec<Element> = s
        .triangles
        .iter()
        .map(|t| Element {
            vertices: t.to_vec(),
            kind: if t.iter().any(|&v| s.original[v]) { ElementKind::PentagonTriangle } else { ElementKind::HexagonTriangle },
        })
        .collect();
    let states = s.triangles.iter().map(|t| arr((s.vertices[t[0]] + s.vertices[t[1]] + s.vertices[t[2]]).normalize())).collect();
    let areas = s.triangles.iter().map(|t| spherical_triangle_area(&s.vertices[t[0]], &s.vertices[t[1]], &s.vertices[t[2]])).collect();
    let adjacency = vertex_adjacency(&elements, s.vertices.len());
    Ok(SurfaceMesh { vertices: s.vertices.into_iter().map(arr).collect(), elements, states, adjacency, areas })
}

/// Tangent-plane frame at a unit vector `r`: rows `e1, e2, r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionFrame {
    pub center: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl ProjectionFrame {
    pub fn new(center: Vector3<f64>) -> Result<Self> {
        let norm = center.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("frame center must be a unit vector, |r| = {norm}")));
        }
        let (x, y, z) = (center.x, center.y, center.z);
        let rho2 = x * x + y * y;
        let (e1, e2) = if rho2 == 0.0 {
            (Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0))
        } else {
            let rho = rho2.sqrt();
            (Vector3::new(z * x, z * y, -rho2) / rho, Vector3::new(-y, x, 0.0) / rho)
        };
        Ok(ProjectionFrame { center, rotation: Matrix3::from_rows(&[e1.transpose(), e2.transpose(), center.transpose()]) })
    }

    /// Inverse of [`gnomonic_project`].
    pub fn unproject(&self, q: [f64; 2]) -> Vector3<f64> {
        let (e1, e2) = (self.rotation.row(0).transpose(), self.rotation.row(1).transpose());
        (self.center + q[0] * e1 + q[1] * e2).normalize()
    }
}

/// Rotates the frame center to the north pole and projects `p` onto the
/// tangent plane there. Great-circle arcs map to straight segments.
pub fn gnomonic_project(frame: &ProjectionFrame, p: &Vector3<f64>) -> Result<[f64; 2]> {
    let r = &frame.center;
    let dot = r.dot(p);
    if dot <= 0.0 {
        return Err(Error::Hemisphere { dot });
    }
    let (xi, yi, zi) = (r.x, r.y, r.z);
    let rho2 = xi * xi + yi * yi;
    if rho2 == 0.0 {
        return Ok([p.x / p.z, p.y / p.z]);
    }
    let d = rho2.sqrt() * dot;
    Ok([(zi * (xi * p.x + yi * p.y) - p.z * rho2) / d, (xi * p.y - yi * p.x) / d])
}

fn density(x: f64, y: f64, variance: f64) -> f64 {
    (-(x * x + y * y) / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance)
}

type Tri = [[f64; 2]; 3];

fn gl_unit() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: std::sync::OnceLock<(Vec<f64>, Vec<f64>)> = std::sync::OnceLock::new();
    RULE.get_or_init(|| {
        let (x, w) = gauss_legendre(GL_ORDER);
        (x.iter().map(|x| (x + 1.0) / 2.0).collect(), w.iter().map(|w| w / 2.0).collect())
    })
}

/// Tensor Gauss–Legendre on the square collapsed onto the triangle.
fn triangle_rule(t: &Tri, variance: f64) -> f64 {
    let (x, w) = gl_unit();
    let [a, b, c] = *t;
    let ba = [b[0] - a[0], b[1] - a[1]];
    let cb = [c[0] - b[0], c[1] - b[1]];
    let det = (ba[0] * cb[1] - ba[1] * cb[0]).abs();
    let mut sum = 0.0;
    for (u, wu) in x.iter().zip(w) {
        let mut inner = 0.0;
        for (v, wv) in x.iter().zip(w) {
            let px = a[0] + u * ba[0] + u * v * cb[0];
            let py = a[1] + u * ba[1] + u * v * cb[1];
            inner += wv * density(px, py, variance);
        }
        sum += wu * u * inner;
    }
    sum * det
}

fn split(t: &Tri) -> [Tri; 4] {
    let m = |p: [f64; 2], q: [f64; 2]| [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
    let [a, b, c] = *t;
    let (ab, bc, ca) = (m(a, b), m(b, c), m(c, a));
    [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
}

fn adaptive(t: &Tri, variance: f64, whole: f64, depth: u32) -> f64 {
    let parts = split(t);
    let q: [f64; 4] = parts.map(|p| triangle_rule(&p, variance));
    let refined = q.iter().sum::<f64>();
    if depth == 0 || (refined - whole).abs() <= QUAD_TOL {
        return refined;
    }
    parts.iter().zip(q).map(|(p, qi)| adaptive(p, variance, qi, depth - 1)).sum()
}

fn triangle_mass(t: &Tri, variance: f64) -> f64 {
    adaptive(t, variance, triangle_rule(t, variance), QUAD_DEPTH)
}

fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i][0] * poly[(i + 1) % n][1] - poly[(i + 1) % n][0] * poly[i][1]).sum::<f64>() / 2.0
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Ear-clipping triangulation of a simple polygon.
pub fn triangulate(poly: &[[f64; 2]]) -> Vec<[[f64; 2]; 3]> {
    let mut pts: Vec<[f64; 2]> = poly.to_vec();
    if signed_area(&pts) < 0.0 {
        pts.reverse();
    }
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    let mut out = Vec::with_capacity(pts.len().saturating_sub(2));
    while idx.len() > 3 {
        let n = idx.len();
        let ear = (0..n).find(|&i| {
            let (a, b, c) = (pts[idx[(i + n - 1) % n]], pts[idx[i]], pts[idx[(i + 1) % n]]);
            cross(a, b, c) > 0.0
                && idx.iter().all(|&k| {
                    let p = pts[k];
                    p == a || p == b || p == c || !(cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0)
                })
        });
        // no convex ear only happens for degenerate input
        let i = ear.unwrap_or(0);
        out.push([pts[idx[(i + n - 1) % n]], pts[idx[i]], pts[idx[(i + 1) % n]]]);
        idx.remove(i);
    }
    if idx.len() == 3 {
        out.push([pts[idx[0]], pts[idx[1]], pts[idx[2]]]);
    }
    out
}

/// Mass of the centered isotropic normal with per-axis `variance` inside a
/// simple polygon.
pub fn gaussian_polygon_mass(poly: &[[f64; 2]], variance: f64) -> f64 {
    assert!(variance > 0.0, "variance must be positive");
    if poly.len() < 3 || signed_area(poly).abs() < 1e-300 {
        return 0.0;
    }
    compensated_sum(triangulate(poly).iter().map(|t| triangle_mass(t, variance)))
}

/// Mass of the axis-aligned box `[x0, x1] × [y0, y1]` (closed form).
pub fn gaussian_box_mass(x0: f64, x1: f64, y0: f64, y1: f64, variance: f64) -> f64 {
    let s = variance.sqrt();
    normal_interval_mass(0.0, s, x0, x1) * normal_interval_mass(0.0, s, y0, y1)
}

/// Mass of the quadrant `{sx·x > sx·cx, sy·y > sy·cy}` with `sx, sy = ±1`.
pub fn gaussian_quadrant_mass(corner: [f64; 2], sx: f64, sy: f64, variance: f64) -> f64 {
    let s = variance.sqrt();
    normal_tail(sx * corner[0] / s) * normal_tail(sy * corner[1] / s)
}

/// Transition rows plus, per state, the mass falling outside the allowed
/// neighborhood and the state's own element.
#[derive(Clone, Debug)]
pub struct GeometricChain {
    pub model: TransitionModel,
    pub off_neighbor: Vec<f64>,
}

impl GeometricChain {
    pub fn max_off_neighbor(&self) -> f64 {
        self.off_neighbor.iter().cloned().fold(0.0, f64::max)
    }

    fn warn_if_loose(&self, what: &str) {
        let worst = self.max_off_neighbor();
        if worst >= OFF_NEIGHBOR_LIMIT {
            warn!("{what}: off-neighbor mass {worst:.4} reaches the {OFF_NEIGHBOR_LIMIT} limit; reduce dt");
        }
    }
}

fn project_polygon(frame: &ProjectionFrame, pts: &[Vector3<f64>]) -> Result<Vec<[f64; 2]>> {
    pts.iter().map(|p| gnomonic_project(frame, p)).collect()
}

fn finish_state(i: usize, mut out: Vec<(StateId, f64)>, own: f64) -> Result<(Row, f64)> {
    let moved = compensated_sum(out.iter().map(|e| e.1));
    let off = 1.0 - moved - own;
    if moved > 1.0 {
        return Err(Error::Construction(format!("state {i}: neighbor mass {moved} exceeds 1")));
    }
    out.push((i as StateId, 1.0 - moved));
    Ok((finish_row(out)?, off.max(0.0)))
}

fn collect(rows: Vec<Result<(Row, f64)>>, dt: f64, positions: Vec<Vec<f64>>) -> Result<GeometricChain> {
    let (rows, off): (Vec<Row>, Vec<f64>) = rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let mut model = TransitionModel::from_matrix(dt, Matrix { rows });
    model.positions = positions;
    Ok(GeometricChain { model, off_neighbor: off })
}

/// Sphere chain with off-neighbor diagnostics.
pub fn sphere_chain(mesh: &SurfaceMesh, alpha: f64, dt: f64) -> Result<GeometricChain> {
    if !(alpha > 0.0 && dt > 0.0) {
        return Err(Error::Domain(format!("alpha and dt must be positive, got {alpha}, {dt}")));
    }
    if mesh.elements.iter().any(|e| e.vertices.len() != 3) {
        return Err(Error::Domain("sphere chain needs a triangle mesh".into()));
    }
    let variance = 2.0 * alpha * dt;
    let verts: Vec<Vector3<f64>> = mesh.vertices.iter().map(|&v| v3(v)).collect();
    let tri = |e: usize| mesh.elements[e].vertices.iter().map(|&v| verts[v]).collect::<Vec<_>>();
    let rows = map_range(ExecMode::default(), mesh.n_states(), |i| {
        let frame = ProjectionFrame::new(v3(mesh.states[i]).normalize())?;
        let mut out = Vec::with_capacity(mesh.adjacency[i].len() + 1);
        for &j in &mesh.adjacency[i] {
            out.push((j, gaussian_polygon_mass(&project_polygon(&frame, &tri(j as usize))?, variance)));
        }
        let own = gaussian_polygon_mass(&project_polygon(&frame, &tri(i))?, variance);
        finish_state(i, out, own)
    });
    let chain = collect(rows, dt, mesh.positions())?;
    chain.warn_if_loose("sphere");
    Ok(chain)
}

/// Tangent-plane Gaussian chain on the geodesic sphere; the leftover mass
/// stays put.
pub fn sphere_transition_matrix(mesh: &SurfaceMesh, alpha: f64, dt: f64) -> Result<TransitionModel> {
    sphere_chain(mesh, alpha, dt).map(|c| c.model)
}

/// Barbell surface plus the prism bookkeeping needed for its chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarbellMesh {
    pub mesh: SurfaceMesh,
    /// Triangles per sphere; left sphere states come first, then right.
    pub triangles_per_sphere: usize,
    pub rows: usize,
    /// Chord length of each hexagon side (prism face width).
    pub widths: [f64; 6],
    pub row_height: f64,
    /// Hexagon ring vertices (barbell vertex ids), left then right.
    pub ring: [[usize; 6]; 2],
    /// Removed triangles of each sphere, as vertex ids, face `f` being
    /// `(center, ring[f], ring[f+1])`.
    pub replaced: [[[usize; 3]; 6]; 2],
    pub sphere_centers: [[f64; 3]; 2],
}

pub const PRISM_FACES: usize = 6;
const SPHERE_OFFSET: f64 = 2.0;

impl BarbellMesh {
    pub fn n_states(&self) -> usize {
        self.mesh.n_states()
    }

    /// State id of prism rectangle `(face, row)`.
    pub fn rect(&self, face: usize, row: usize) -> StateId {
        (2 * self.triangles_per_sphere + row * PRISM_FACES + face) as StateId
    }

    /// `(face, row)` of a rectangle state.
    pub fn rect_index(&self, s: StateId) -> Option<(usize, usize)> {
        let k = (s as usize).checked_sub(2 * self.triangles_per_sphere)?;
        (k < self.rows * PRISM_FACES).then_some((k % PRISM_FACES, k / PRISM_FACES))
    }

    /// 0 for the left sphere, 1 for the right, `None` on the prism.
    pub fn sphere_of(&self, s: StateId) -> Option<usize> {
        let s = s as usize;
        (s < 2 * self.triangles_per_sphere).then_some(s / self.triangles_per_sphere)
    }

    /// State permutation induced by reflecting `y → -y`.
    pub fn mirror(&self, s: StateId) -> StateId {
        let t = self.triangles_per_sphere as StateId;
        match self.rect_index(s) {
            Some((f, r)) => self.rect(f, self.rows - 1 - r),
            None if s < t => s + t,
            None => s - t,
        }
    }
}

/// Two unit spheres centered at `y = ±2` joined by a hexagonal prism that
/// replaces the six triangles around each sphere's innermost vertex.
pub fn build_barbell_mesh() -> Result<BarbellMesh> {
    let s = unit_sphere(2);
    let nv = s.vertices.len();
    // innermost vertex of the left sphere is the unit sphere's +y point
    let m = (0..nv).max_by(|&a, &b| s.vertices[a].y.total_cmp(&s.vertices[b].y)).unwrap();
    let removed: Vec<usize> = (0..s.triangles.len()).filter(|&t| s.triangles[t].contains(&m)).collect();
    if removed.len() != PRISM_FACES {
        return Err(Error::Construction(format!("innermost vertex touches {} triangles", removed.len())));
    }
    let mut ring: Vec<usize> = removed.iter().flat_map(|&t| s.triangles[t]).filter(|&v| v != m).collect();
    ring.sort_unstable();
    ring.dedup();
    ring.sort_by(|&a, &b| {
        let ang = |v: usize| s.vertices[v].z.atan2(s.vertices[v].x);
        ang(a).total_cmp(&ang(b))
    });
    let ring: [usize; 6] = ring.try_into().map_err(|_| Error::Construction("hexagon ring is not six vertices".into()))?;
    let kept: Vec<[usize; 3]> = s.triangles.iter().enumerate().filter(|(t, _)| !removed.contains(t)).map(|(_, t)| *t).collect();
    let tps = kept.len();

    let left = Vector3::new(0.0, -SPHERE_OFFSET, 0.0);
    let right = Vector3::new(0.0, SPHERE_OFFSET, 0.0);
    let reflect = |v: Vector3<f64>| Vector3::new(v.x, -v.y, v.z);
    let mut vertices: Vec<Vector3<f64>> = s.vertices.iter().map(|v| v + left).collect();
    vertices.extend(s.vertices.iter().map(|v| reflect(*v) + right));

    let widths: [f64; 6] = std::array::from_fn(|f| (s.vertices[ring[f]] - s.vertices[ring[(f + 1) % 6]]).norm());
    let mean_width = widths.iter().sum::<f64>() / 6.0;
    let min_area = kept.iter().map(|t| spherical_triangle_area(&s.vertices[t[0]], &s.vertices[t[1]], &s.vertices[t[2]])).fold(f64::INFINITY, f64::min);
    // rectangle side along the prism chosen to match the smallest triangle
    // area, then rounded to a whole number of rows over the sphere gap
    let gap = 2.0 * (SPHERE_OFFSET - 1.0);
    let rows = (gap * mean_width / min_area).round().max(1.0) as usize;
    let length = ring.iter().map(|&v| (vertices[v] - vertices[nv + v]).norm()).sum::<f64>() / 6.0;
    let row_height = length / rows as f64;

    // prism grid vertices, row boundary r in 1..rows
    let grid0 = vertices.len();
    for r in 1..rows {
        let t = r as f64 / rows as f64;
        for &v in &ring {
            vertices.push(vertices[v] * (1.0 - t) + vertices[nv + v] * t);
        }
    }
    let grid = |f: usize, r: usize| -> usize {
        let f = f % 6;
        match r {
            0 => ring[f],
            r if r == rows => nv + ring[f],
            r => grid0 + (r - 1) * 6 + f,
        }
    };

    let kind = |t: &[usize; 3]| if t.iter().any(|&v| s.original[v]) { ElementKind::PentagonTriangle } else { ElementKind::HexagonTriangle };
    let mut elements = Vec::with_capacity(2 * tps + rows * 6);
    let mut states = Vec::with_capacity(elements.capacity());
    let mut areas = Vec::with_capacity(elements.capacity());
    for (side, center) in [(0usize, left), (1, right)] {
        for t in &kept {
            // reflection flips orientation
            let vs = if side == 0 { t.to_vec() } else { vec![nv + t[0], nv + t[2], nv + t[1]] };
            let local: Vec<Vector3<f64>> = vs.iter().map(|&v| vertices[v] - center).collect();
            states.push(arr((local[0] + local[1] + local[2]).normalize() + center));
            areas.push(spherical_triangle_area(&local[0], &local[1], &local[2]));
            elements.push(Element { vertices: vs, kind: kind(t) });
        }
    }
    for r in 0..rows {
        for f in 0..6 {
            let vs = vec![grid(f, r), grid(f + 1, r), grid(f + 1, r + 1), grid(f, r + 1)];
            let c = vs.iter().map(|&v| vertices[v]).sum::<Vector3<f64>>() / 4.0;
            states.push(arr(c));
            areas.push(widths[f] * row_height);
            elements.push(Element { vertices: vs, kind: ElementKind::Rectangle });
        }
    }
    let adjacency = vertex_adjacency(&elements, vertices.len());
    let replaced_left: [[usize; 3]; 6] = std::array::from_fn(|f| [m, ring[f], ring[(f + 1) % 6]]);
    let replaced_right = replaced_left.map(|t| t.map(|v| nv + v));
    let ring_right = ring.map(|v| nv + v);
    Ok(BarbellMesh {
        mesh: SurfaceMesh { vertices: vertices.into_iter().map(arr).collect(), elements, states, adjacency, areas },
        triangles_per_sphere: tps,
        rows,
        widths,
        row_height,
        ring: [ring, ring_right],
        replaced: [replaced_left, replaced_right],
        sphere_centers: [arr(left), arr(right)],
    })
}

/// Barbell chain with off-neighbor diagnostics.
pub fn barbell_chain(bar: &BarbellMesh, alpha: f64, dt: f64) -> Result<GeometricChain> {
    if !(alpha > 0.0 && dt > 0.0) {
        return Err(Error::Domain(format!("alpha and dt must be positive, got {alpha}, {dt}")));
    }
    let variance = 2.0 * alpha * dt;
    let mesh = &bar.mesh;
    let verts: Vec<Vector3<f64>> = mesh.vertices.iter().map(|&v| v3(v)).collect();
    let (h, rows) = (bar.row_height, bar.rows);
    let rows_out = map_range(ExecMode::default(), mesh.n_states(), |i| {
        let mut out = Vec::with_capacity(mesh.adjacency[i].len() + 1);
        if let Some(side) = bar.sphere_of(i as StateId) {
            let c = v3(bar.sphere_centers[side]);
            let frame = ProjectionFrame::new((v3(mesh.states[i]) - c).normalize())?;
            let poly = |vs: &[usize]| project_polygon(&frame, &vs.iter().map(|&v| verts[v] - c).collect::<Vec<_>>());
            for &j in &mesh.adjacency[i] {
                let target = match bar.rect_index(j) {
                    // a rectangle inherits the mass of the triangle it replaces
                    Some((f, _)) => poly(&bar.replaced[side][f])?,
                    None => poly(&mesh.elements[j as usize].vertices)?,
                };
                out.push((j, gaussian_polygon_mass(&target, variance)));
            }
            let own = gaussian_polygon_mass(&poly(&mesh.elements[i].vertices)?, variance);
            return finish_state(i, out, own);
        }
        let (f, r) = bar.rect_index(i as StateId).unwrap();
        let w = bar.widths;
        let wf = w[f];
        for &j in &mesh.adjacency[i] {
            let p = match bar.rect_index(j) {
                Some((g, q)) => {
                    let (x0, x1) = match (g + 6 - f) % 6 {
                        0 => (-wf / 2.0, wf / 2.0),
                        1 => (wf / 2.0, wf / 2.0 + w[g]),
                        5 => (-wf / 2.0 - w[g], -wf / 2.0),
                        _ => return Err(Error::Construction(format!("rectangles {i} and {j} are not adjacent"))),
                    };
                    let dy = (q as f64 - r as f64) * h;
                    gaussian_box_mass(x0, x1, dy - h / 2.0, dy + h / 2.0, variance)
                }
                None => {
                    let side = bar.sphere_of(j).unwrap();
                    // sign of the sphere side along the unfolded prism axis
                    let sy = if side == 0 { -1.0 } else { 1.0 };
                    let (a, b) = (bar.ring[side][f], bar.ring[side][(f + 1) % 6]);
                    let tri = &mesh.elements[j as usize].vertices;
                    let (has_a, has_b) = (tri.contains(&a), tri.contains(&b));
                    let edge_y = sy * h / 2.0;
                    if has_a && has_b {
                        let apex = *tri.iter().find(|&&v| v != a && v != b).unwrap();
                        let da = (verts[apex] - verts[a]).norm();
                        let db = (verts[apex] - verts[b]).norm();
                        let along = (da * da - db * db + wf * wf) / (2.0 * wf);
                        let out_of = (da * da - along * along).max(0.0).sqrt();
                        let poly = [[-wf / 2.0, edge_y], [wf / 2.0, edge_y], [-wf / 2.0 + along, edge_y + sy * out_of]];
                        gaussian_polygon_mass(&poly, variance)
                    } else {
                        let (corner_x, sx) = if has_a { (-wf / 2.0, -1.0) } else { (wf / 2.0, 1.0) };
                        gaussian_quadrant_mass([corner_x, edge_y], sx, sy, variance) / 3.0
                    }
                }
            };
            out.push((j, p));
        }
        let own = gaussian_box_mass(-wf / 2.0, wf / 2.0, -h / 2.0, h / 2.0, variance);
        finish_state(i, out, own)
    });
    let chain = collect(rows_out, dt, mesh.positions())?;
    // every prism end corner must see exactly three extra triangles
    for f in 0..6 {
        for (side, r) in [(0usize, 0usize), (1, rows - 1)] {
            let i = bar.rect(f, r) as usize;
            for v in [bar.ring[side][f], bar.ring[side][(f + 1) % 6]] {
                let other = if v == bar.ring[side][f] { bar.ring[side][(f + 1) % 6] } else { bar.ring[side][f] };
                let k = mesh.adjacency[i]
                    .iter()
                    .filter(|&&j| bar.sphere_of(j).is_some() && mesh.elements[j as usize].vertices.contains(&v) && !mesh.elements[j as usize].vertices.contains(&other))
                    .count();
                if k != 3 {
                    return Err(Error::Construction(format!("prism corner of rectangle {i} touches {k} triangles, expected 3")));
                }
            }
        }
    }
    chain.warn_if_loose("barbell");
    Ok(chain)
}

/// Tangent-plane chain on the barbell; see [`barbell_chain`].
pub fn barbell_transition_matrix(bar: &BarbellMesh, alpha: f64, dt: f64) -> Result<TransitionModel> {
    barbell_chain(bar, alpha, dt).map(|c| c.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn torus_counts() {
        assert_eq!(build_torus_mesh(21).unwrap().n_states(), 441);
        assert_eq!(build_torus_mesh(30).unwrap().n_states(), 900);
        let t = build_torus_mesh(2).unwrap();
        assert!(t.adjacency.iter().all(|a| a.len() == 2));
        assert!(build_torus_mesh(1).is_err());
    }

    #[test]
    fn geodesic_sphere_counts() {
        let m = build_geodesic_sphere(2).unwrap();
        assert_eq!(m.elements.len(), 320);
        let mut degree5 = 0;
        let mut touching = vec![0; m.vertices.len()];
        for e in &m.elements {
            for &v in &e.vertices {
                touching[v] += 1;
            }
        }
        for &t in &touching {
            if t == 5 {
                degree5 += 1;
            }
        }
        assert_eq!(degree5, 12);
        let twelve = m.adjacency.iter().filter(|a| a.len() + 1 == 12).count();
        let thirteen = m.adjacency.iter().filter(|a| a.len() + 1 == 13).count();
        assert_eq!((twelve, thirteen), (60, 260));
        for (a, e) in m.adjacency.iter().zip(&m.elements) {
            assert_eq!(a.len() == 11, e.kind == ElementKind::PentagonTriangle);
        }
        assert!(m.states.iter().all(|s| (v3(*s).norm() - 1.0).abs() < 1e-12));
        assert_relative_eq!(m.areas.iter().sum::<f64>(), 4.0 * std::f64::consts::PI, epsilon = 1e-12);
        assert!(build_geodesic_sphere(3).is_err());
    }

    #[test]
    fn poles_are_vertices_not_centers() {
        let m = build_geodesic_sphere(2).unwrap();
        for pole in [1.0, -1.0] {
            assert!(m.vertices.iter().any(|v| (v[2] - pole).abs() < 1e-15));
            assert!(m.states.iter().all(|s| (s[2] - pole).abs() > 1e-3));
        }
    }

    #[test]
    fn north_pole_frame_is_plain_division() {
        let f = ProjectionFrame::new(Vector3::z()).unwrap();
        let p = Vector3::new(0.3, -0.2, 0.5f64.sqrt()).normalize();
        let q = gnomonic_project(&f, &p).unwrap();
        assert_relative_eq!(q[0], p.x / p.z, epsilon = 1e-15);
        assert_relative_eq!(q[1], p.y / p.z, epsilon = 1e-15);
    }

    #[test]
    fn center_maps_to_origin() {
        let r = Vector3::new(0.3, -0.5, 0.7).normalize();
        let f = ProjectionFrame::new(r).unwrap();
        let q = gnomonic_project(&f, &r).unwrap();
        assert!(q[0].abs() < 1e-15 && q[1].abs() < 1e-15);
        let rt = f.rotation * f.rotation.transpose();
        assert!((rt - Matrix3::identity()).norm() < 1e-14);
        assert!((f.rotation * r - Vector3::z()).norm() < 1e-14);
    }

    #[test]
    fn opposite_hemisphere_is_rejected() {
        let f = ProjectionFrame::new(Vector3::x()).unwrap();
        assert!(matches!(gnomonic_project(&f, &Vector3::new(-0.5, 0.5, 0.0).normalize()), Err(Error::Hemisphere { .. })));
        assert!(gnomonic_project(&f, &Vector3::y()).is_err());
    }

    proptest! {
        #[test]
        fn great_circles_project_to_lines(
            c in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            n in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            ts in proptest::collection::vec(-0.6f64..0.6, 3),
        ) {
            let center = Vector3::new(c.0, c.1, c.2);
            prop_assume!(center.norm() > 0.1);
            let center = center.normalize();
            // great circle through the center's neighborhood, orthogonal to n
            let axis = Vector3::new(n.0, n.1, n.2).cross(&center);
            prop_assume!(axis.norm() > 0.1);
            let u = center.cross(&axis.normalize()).normalize();
            let w = center - center.dot(&u) * u;
            let w = w.normalize();
            let frame = ProjectionFrame::new(center).unwrap();
            let pts: Vec<[f64; 2]> = ts.iter().map(|t| gnomonic_project(&frame, &(w * t.cos() + u * t.sin())).unwrap()).collect();
            let area = cross(pts[0], pts[1], pts[2]);
            prop_assert!(area.abs() < 1e-10, "area {area}");
        }

        #[test]
        fn projection_round_trips(c in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), d in (-0.5f64..0.5, -0.5f64..0.5, -0.5f64..0.5)) {
            let center = Vector3::new(c.0, c.1, c.2);
            prop_assume!(center.norm() > 0.1);
            let center = center.normalize();
            let p = (center + Vector3::new(d.0, d.1, d.2)).normalize();
            let frame = ProjectionFrame::new(center).unwrap();
            let q = gnomonic_project(&frame, &p).unwrap();
            prop_assert!((frame.unproject(q) - p).norm() < 1e-10);
        }

        #[test]
        fn polygon_mass_is_additive(
            pts in proptest::collection::vec((-0.5f64..0.5, -0.5f64..0.5), 3),
            t in 0.1f64..0.9,
        ) {
            let [a, b, c]: [[f64; 2]; 3] = [[pts[0].0, pts[0].1], [pts[1].0, pts[1].1], [pts[2].0, pts[2].1]];
            prop_assume!(cross(a, b, c).abs() > 1e-3);
            let m = [b[0] + t * (c[0] - b[0]), b[1] + t * (c[1] - b[1])];
            let var = 0.01;
            let whole = gaussian_polygon_mass(&[a, b, c], var);
            let parts = gaussian_polygon_mass(&[a, b, m], var) + gaussian_polygon_mass(&[a, m, c], var);
            prop_assert!((whole - parts).abs() < 1e-8);
        }
    }

    #[test]
    fn whole_plane_and_quarter_plane() {
        let var: f64 = 0.004;
        let l = 10.0 * var.sqrt();
        let square = [[-l, -l], [l, -l], [l, l], [-l, l]];
        assert!((gaussian_polygon_mass(&square, var) - 1.0).abs() < 1e-6);
        let quarter = [[0.0, 0.0], [l, 0.0], [l, l], [0.0, l]];
        assert!((gaussian_polygon_mass(&quarter, var) - 0.25).abs() < 1e-6);
        assert_relative_eq!(gaussian_quadrant_mass([0.0, 0.0], 1.0, -1.0, var), 0.25, epsilon = 1e-15);
        assert_eq!(gaussian_polygon_mass(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], var), 0.0);
    }

    #[test]
    fn polygon_matches_closed_form_box() {
        let var = 0.01;
        let poly = [[-0.05, 0.02], [0.13, 0.02], [0.13, 0.2], [-0.05, 0.2]];
        assert_relative_eq!(gaussian_polygon_mass(&poly, var), gaussian_box_mass(-0.05, 0.13, 0.02, 0.2, var), epsilon = 1e-12);
    }

    #[test]
    fn nonconvex_polygon_is_triangulated() {
        // an L shape is the square minus its upper right quarter
        let var = 0.02;
        let l_shape = [[-0.3, -0.3], [0.3, -0.3], [0.3, 0.0], [0.0, 0.0], [0.0, 0.3], [-0.3, 0.3]];
        assert_eq!(triangulate(&l_shape).len(), 4);
        let full = gaussian_box_mass(-0.3, 0.3, -0.3, 0.3, var);
        let corner = gaussian_box_mass(0.0, 0.3, 0.0, 0.3, var);
        assert_relative_eq!(gaussian_polygon_mass(&l_shape, var), full - corner, epsilon = 1e-12);
    }

    #[test]
    fn triangle_mass_against_rejection_sampling() {
        let tri = [[-0.02, -0.05], [0.12, 0.01], [0.0, 0.09]];
        let var = 0.005;
        let p = gaussian_polygon_mass(&tri, var);
        let n = 10_000_000u64;
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let normal = rand_distr::Normal::new(0.0, var.sqrt()).unwrap();
        let hits = (0..n)
            .filter(|_| {
                let q = [rng.sample(normal), rng.sample(normal)];
                cross(tri[0], tri[1], q) >= 0.0 && cross(tri[1], tri[2], q) >= 0.0 && cross(tri[2], tri[0], q) >= 0.0
            })
            .count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits - n as f64 * p).abs() < 4.0 * sigma, "hits {hits} expected {}", n as f64 * p);
    }

    #[test]
    fn sphere_chain_at_paper_step() {
        let m = build_geodesic_sphere(2).unwrap();
        let c = sphere_chain(&m, 1.0 / 42.0, 0.1).unwrap();
        c.model.validate().unwrap();
        assert!(c.max_off_neighbor() < OFF_NEIGHBOR_LIMIT, "{}", c.max_off_neighbor());
        let mat = c.model.at(0);
        for (i, row) in mat.rows.iter().enumerate() {
            let own = row.iter().find(|e| e.0 as usize == i).unwrap().1;
            assert!(own > 0.0 && own < 1.0);
        }
        // icosahedral symmetry: pentagon-class rows agree as multisets
        let sorted = |i: usize| {
            let mut v: Vec<f64> = mat.rows[i].iter().map(|e| e.1).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let pent: Vec<usize> = (0..320).filter(|&i| m.elements[i].kind == ElementKind::PentagonTriangle).collect();
        let first = sorted(pent[0]);
        for &i in &pent[1..] {
            for (a, b) in sorted(i).iter().zip(&first) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn barbell_counts() {
        let b = build_barbell_mesh().unwrap();
        assert_eq!(b.triangles_per_sphere, 314);
        assert_eq!(b.rows * PRISM_FACES, 120);
        assert_eq!(b.n_states(), 748);
        assert_eq!(b.mesh.elements.iter().filter(|e| e.kind == ElementKind::Rectangle).count(), 120);
        for s in 0..748u32 {
            assert_eq!(b.mirror(b.mirror(s)), s);
        }
    }

    #[test]
    fn barbell_chain_is_mirror_symmetric() {
        let b = build_barbell_mesh().unwrap();
        let c = barbell_chain(&b, 0.5, 0.005).unwrap();
        c.model.validate().unwrap();
        assert!(c.max_off_neighbor() < OFF_NEIGHBOR_LIMIT, "{}", c.max_off_neighbor());
        let d = c.model.at(0).dense();
        for i in 0..748 {
            for j in 0..748 {
                let (mi, mj) = (b.mirror(i as StateId) as usize, b.mirror(j as StateId) as usize);
                assert!((d[i][j] - d[mi][mj]).abs() < 1e-9, "({i},{j})");
            }
        }
    }

    #[test]
    fn prism_corners_split_in_thirds() {
        let b = build_barbell_mesh().unwrap();
        let d = barbell_transition_matrix(&b, 0.5, 0.005).unwrap().at(0).dense();
        let i = b.rect(2, 0) as usize;
        let v = b.ring[0][2];
        let other = b.ring[0][3];
        let corner: Vec<f64> = b.mesh.adjacency[i]
            .iter()
            .map(|&j| j as usize)
            .filter(|&j| b.sphere_of(j as StateId).is_some() && b.mesh.elements[j].vertices.contains(&v) && !b.mesh.elements[j].vertices.contains(&other))
            .map(|j| d[i][j])
            .collect();
        assert_eq!(corner.len(), 3);
        assert!(corner[0] > 0.0);
        assert!(corner.iter().all(|&p| p == corner[0]));
    }
}
