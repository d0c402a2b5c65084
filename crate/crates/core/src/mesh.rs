//! Polygonal domains and conforming triangulations.
//!
//! Domains are simple polygons (possibly nonconvex, e.g. the L-shape with its
//! reentrant corner). The mesher produces conforming P1 triangle meshes:
//! rectilinear polygons get a structured split into right isosceles triangles
//! (always nonobtuse), general polygons are ear-clipped and refined. Optional
//! grading shrinks elements toward selected corners via longest-edge bisection,
//! which preserves both conformity and the nonobtuse property of structured
//! meshes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Tolerance for angle classification, in radians.
pub const ANGLE_TOL: f64 = 1e-9;

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

fn sub(a: Point, b: Point) -> Point {
    Point::new(a.x - b.x, a.y - b.y)
}

/// Signed doubled area of triangle (a, b, c); positive for CCW.
fn orient2d(a: Point, b: Point, c: Point) -> f64 {
    cross(sub(b, a), sub(c, a))
}

/// Distance from `p` to the segment [a, b].
fn point_segment_dist(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let len2 = ab.x * ab.x + ab.y * ab.y;
    if len2 == 0.0 {
        return p.dist(&a);
    }
    let t = ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2;
    let t = t.clamp(0.0, 1.0);
    p.dist(&Point::new(a.x + t * ab.x, a.y + t * ab.y))
}

/// Proper or improper intersection test for segments [p1,p2] and [q1,q2].
fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient2d(q1, q2, p1);
    let d2 = orient2d(q1, q2, p2);
    let d3 = orient2d(p1, p2, q1);
    let d4 = orient2d(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on_seg = |a: Point, b: Point, c: Point, d: f64| -> bool {
        d == 0.0
            && c.x >= a.x.min(b.x)
            && c.x <= a.x.max(b.x)
            && c.y >= a.y.min(b.y)
            && c.y <= a.y.max(b.y)
    };
    on_seg(q1, q2, p1, d1)
        || on_seg(q1, q2, p2, d2)
        || on_seg(p1, p2, q1, d3)
        || on_seg(p1, p2, q2, d4)
}

/// Built-in domain shapes.
#[derive(Clone, Debug)]
pub enum DomainPreset {
    UnitSquare,
    /// Unit square minus the closed quadrant [0.5,1]x[0.5,1]; reentrant angle
    /// 3*pi/2 at (0.5, 0.5).
    LShape,
    Custom(Vec<Point>),
}

/// A simple, counterclockwise polygon with all interior angles in (0, 2*pi).
#[derive(Clone, Debug)]
pub struct PolygonalDomain {
    vertices: Vec<Point>,
    name: String,
}

impl PolygonalDomain {
    pub fn new(vertices: Vec<Point>, name: &str) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::Domain(format!("need at least 3 vertices, got {n}")));
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.x.is_finite() || !v.y.is_finite() {
                return Err(Error::Domain(format!("vertex {i} is not finite")));
            }
        }
        // Degenerate edges (repeated consecutive vertices).
        for i in 0..n {
            let j = (i + 1) % n;
            if vertices[i] == vertices[j] {
                return Err(Error::Domain(format!(
                    "degenerate edge {i}-{j}: repeated vertex ({}, {})",
                    vertices[i].x, vertices[i].y
                )));
            }
        }
        // Simplicity: no two non-adjacent edges may intersect.
        for i in 0..n {
            for j in (i + 1)..n {
                // Adjacent edges share a vertex; skip them (including the wrap pair).
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (p1, p2) = (vertices[i], vertices[(i + 1) % n]);
                let (q1, q2) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(p1, p2, q1, q2) {
                    return Err(Error::Domain(format!(
                        "self-intersection between edge {i}-{} and edge {j}-{}",
                        (i + 1) % n,
                        (j + 1) % n
                    )));
                }
            }
        }
        let domain = PolygonalDomain {
            vertices,
            name: name.to_string(),
        };
        if domain.signed_area() <= 0.0 {
            return Err(Error::Domain(
                "polygon must be counterclockwise with positive area".into(),
            ));
        }
        for (i, angle) in domain.interior_angles().iter().enumerate() {
            if *angle < ANGLE_TOL || *angle > 2.0 * std::f64::consts::PI - ANGLE_TOL {
                return Err(Error::Domain(format!(
                    "interior angle at vertex {i} is {angle} rad, outside (0, 2*pi)"
                )));
            }
        }
        Ok(domain)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let mut s = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            s += a.x * b.y - b.x * a.y;
        }
        0.5 * s
    }

    /// Polygon area (positive, by the CCW invariant).
    pub fn area(&self) -> f64 {
        self.signed_area()
    }

    /// Interior angle at each vertex, in (0, 2*pi).
    pub fn interior_angles(&self) -> Vec<f64> {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let v = self.vertices[i];
                let a = sub(self.vertices[(i + n - 1) % n], v);
                let b = sub(self.vertices[(i + 1) % n], v);
                // CCW angle from the outgoing edge b to the incoming edge a.
                let mut theta = cross(b, a).atan2(a.x * b.x + a.y * b.y);
                if theta < 0.0 {
                    theta += 2.0 * std::f64::consts::PI;
                }
                theta
            })
            .collect()
    }

    /// Indices of vertices with interior angle > pi (reentrant corners).
    pub fn reentrant_corners(&self) -> Vec<usize> {
        self.interior_angles()
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > std::f64::consts::PI + ANGLE_TOL)
            .map(|(i, _)| i)
            .collect()
    }

    /// True if every edge is axis-parallel.
    pub fn is_rectilinear(&self) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            a.x == b.x || a.y == b.y
        })
    }

    /// Point-in-polygon test by ray casting. Points on the boundary are not
    /// classified reliably; the meshers only query cell centers that stay
    /// clear of edges.
    pub fn contains(&self, p: Point) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

pub fn make_domain(preset: DomainPreset) -> Result<PolygonalDomain> {
    match preset {
        DomainPreset::UnitSquare => PolygonalDomain::new(
            vec![
                Point::new(0.0, 0.0),
                Point::new(1.0, 0.0),
                Point::new(1.0, 1.0),
                Point::new(0.0, 1.0),
            ],
            "unit_square",
        ),
        DomainPreset::LShape => PolygonalDomain::new(
            vec![
                Point::new(0.0, 0.0),
                Point::new(1.0, 0.0),
                Point::new(1.0, 0.5),
                Point::new(0.5, 0.5),
                Point::new(0.5, 1.0),
                Point::new(0.0, 1.0),
            ],
            "l_shape",
        ),
        DomainPreset::Custom(vertices) => PolygonalDomain::new(vertices, "custom"),
    }
}

/// Grading request: shrink elements toward the listed polygon vertices.
///
/// An element at distance d from a listed corner ends up with diameter at most
/// `ratio * h * max(d / h, ratio)`.
#[derive(Clone, Debug)]
pub struct Grading {
    /// Indices into the domain's vertex list.
    pub corners: Vec<usize>,
    /// Size reduction factor in (0, 1].
    pub ratio: f64,
}

/// Conforming triangle mesh with consistently oriented (CCW) elements.
#[derive(Clone, Debug)]
pub struct TriMesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<[usize; 2]>,
    corner_nodes: Vec<usize>,
    nonobtuse: bool,
    id: u64,
}

fn canon(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

impl TriMesh {
    /// Build a mesh from raw arrays, validating conformity:
    /// indices in range, positive triangle areas, every node referenced, each
    /// edge in one or two triangles, and the once-used edges matching
    /// `boundary_edges` exactly.
    pub fn from_parts(
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<[usize; 2]>,
        corner_nodes: Vec<usize>,
    ) -> Result<Self> {
        let n = nodes.len();
        if n < 3 || triangles.is_empty() {
            return Err(Error::NonConforming(
                "mesh needs at least 3 nodes and 1 triangle".into(),
            ));
        }
        for (i, p) in nodes.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::NonConforming(format!("node {i} is not finite")));
            }
        }
        let mut used = vec![false; n];
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(Error::NonConforming(format!(
                        "triangle {t} references node {v} out of range (node count {n})"
                    )));
                }
                used[v] = true;
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::NonConforming(format!(
                    "triangle {t} has repeated nodes"
                )));
            }
            let area = 0.5 * orient2d(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if area.is_nan() || area <= 0.0 {
                return Err(Error::NonConforming(format!(
                    "triangle {t} has nonpositive signed area {area}"
                )));
            }
            for k in 0..3 {
                *edge_count
                    .entry(canon(tri[k], tri[(k + 1) % 3]))
                    .or_insert(0) += 1;
            }
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(Error::NonConforming(format!(
                "node {i} is not referenced by any triangle"
            )));
        }
        let mut boundary_set: HashMap<(usize, usize), usize> = HashMap::new();
        for (b, e) in boundary_edges.iter().enumerate() {
            if e[0] >= n || e[1] >= n {
                return Err(Error::NonConforming(format!(
                    "boundary edge {b} references node out of range"
                )));
            }
            if boundary_set.insert(canon(e[0], e[1]), b).is_some() {
                return Err(Error::NonConforming(format!("duplicate boundary edge {b}")));
            }
        }
        for (&e, &c) in &edge_count {
            match c {
                1 => {
                    if !boundary_set.contains_key(&e) {
                        return Err(Error::NonConforming(format!(
                            "edge {}-{} belongs to one triangle but is not listed as boundary (hole or hanging node)",
                            e.0, e.1
                        )));
                    }
                }
                2 => {
                    if boundary_set.contains_key(&e) {
                        return Err(Error::NonConforming(format!(
                            "interior edge {}-{} listed as boundary",
                            e.0, e.1
                        )));
                    }
                }
                c => {
                    return Err(Error::NonConforming(format!(
                        "edge {}-{} shared by {c} triangles",
                        e.0, e.1
                    )));
                }
            }
        }
        for &e in boundary_set.keys() {
            if !edge_count.contains_key(&e) {
                return Err(Error::NonConforming(format!(
                    "boundary edge {}-{} not an edge of any triangle",
                    e.0, e.1
                )));
            }
        }
        for &c in &corner_nodes {
            if c >= n {
                return Err(Error::NonConforming(format!(
                    "corner node {c} out of range"
                )));
            }
        }
        let nonobtuse = compute_nonobtuse(&nodes, &triangles);
        Ok(TriMesh {
            nodes,
            triangles,
            boundary_edges,
            corner_nodes,
            nonobtuse,
            id: NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed),
        })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn corner_nodes(&self) -> &[usize] {
        &self.corner_nodes
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// True if no triangle has an angle exceeding pi/2 (up to [`ANGLE_TOL`]).
    pub fn is_nonobtuse(&self) -> bool {
        self.nonobtuse
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * orient2d(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    /// Longest edge length of triangle `t`.
    pub fn triangle_diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        pa.dist(&pb).max(pb.dist(&pc)).max(pc.dist(&pa))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_diameter(t))
            .fold(0.0, f64::max)
    }

    /// Distance from a point to the nearest point of triangle `t` (zero when
    /// the point is a vertex of `t`).
    pub fn triangle_distance(&self, t: usize, p: Point) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        point_segment_dist(p, pa, pb)
            .min(point_segment_dist(p, pb, pc))
            .min(point_segment_dist(p, pc, pa))
    }
}

fn compute_nonobtuse(nodes: &[Point], triangles: &[[usize; 3]]) -> bool {
    triangles.iter().all(|tri| {
        (0..3).all(|k| {
            let v = nodes[tri[k]];
            let a = sub(nodes[tri[(k + 1) % 3]], v);
            let b = sub(nodes[tri[(k + 2) % 3]], v);
            // Angle at v is <= pi/2 iff the edge vectors have nonnegative dot.
            let scale = (a.x * a.x + a.y * a.y).max(b.x * b.x + b.y * b.y);
            a.x * b.x + a.y * b.y >= -ANGLE_TOL * scale
        })
    })
}

/// Triangulate a polygonal domain with target element diameter `h_target`.
///
/// Rectilinear polygons get a structured split (right isosceles triangles,
/// nonobtuse, diameter <= sqrt(2) * h_target). Other polygons are ear-clipped
/// and uniformly refined to the same diameter bound. Grading bisects elements
/// toward the listed corners until every element satisfies the [`Grading`]
/// size bound. With `require_nonobtuse` the call fails if the produced mesh
/// contains an obtuse triangle.
pub fn triangulate(
    domain: &PolygonalDomain,
    h_target: f64,
    grading: Option<&Grading>,
    require_nonobtuse: bool,
) -> Result<TriMesh> {
    if !h_target.is_finite() || h_target <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "h_target must be positive and finite, got {h_target}"
        )));
    }
    if let Some(g) = grading {
        if g.ratio.is_nan() || g.ratio <= 0.0 || g.ratio > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "grading ratio must be in (0, 1], got {}",
                g.ratio
            )));
        }
        for &c in &g.corners {
            if c >= domain.vertices().len() {
                return Err(Error::InvalidParameter(format!(
                    "grading corner index {c} out of range"
                )));
            }
        }
    }

    let (nodes, triangles) = if domain.is_rectilinear() {
        structured_rectilinear(domain, h_target)
    } else {
        let (nodes, tris) = ear_clip(domain)?;
        refine_to_size(nodes, tris, std::f64::consts::SQRT_2 * h_target)
    };

    let (nodes, triangles) = match grading {
        Some(g) if g.ratio < 1.0 && !g.corners.is_empty() => {
            let corners: Vec<Point> = g.corners.iter().map(|&i| domain.vertices()[i]).collect();
            grade_toward_corners(nodes, triangles, &corners, g.ratio, h_target)?
        }
        _ => (nodes, triangles),
    };

    let boundary = derive_boundary_edges(&triangles);
    let corner_nodes = locate_corner_nodes(&nodes, domain);
    let mesh = TriMesh::from_parts(nodes, triangles, boundary, corner_nodes)?;
    if require_nonobtuse && !mesh.is_nonobtuse() {
        return Err(Error::Domain(
            "mesh contains obtuse triangles but require_nonobtuse was set".into(),
        ));
    }
    Ok(mesh)
}

/// Once-used edges in first-encounter order, oriented as they appear in their
/// triangle (CCW along the boundary).
fn derive_boundary_edges(triangles: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in triangles {
        for k in 0..3 {
            *count.entry(canon(tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    let mut out = Vec::new();
    for tri in triangles {
        for k in 0..3 {
            let (i, j) = (tri[k], tri[(k + 1) % 3]);
            if count[&canon(i, j)] == 1 {
                out.push([i, j]);
            }
        }
    }
    out
}

fn locate_corner_nodes(nodes: &[Point], domain: &PolygonalDomain) -> Vec<usize> {
    domain
        .vertices()
        .iter()
        .filter_map(|v| {
            nodes
                .iter()
                .position(|p| (p.x - v.x).abs() <= 1e-12 && (p.y - v.y).abs() <= 1e-12)
        })
        .collect()
}

/// Structured mesh for rectilinear polygons. The distinct vertex coordinates
/// partition the bounding box into coarse rectangles that are each fully
/// inside or outside; every coarse interval is subdivided into ceil(len/h)
/// cells so the subdivision matches across coarse boundaries.
fn structured_rectilinear(domain: &PolygonalDomain, h: f64) -> (Vec<Point>, Vec<[usize; 3]>) {
    let ticks = |coords: Vec<f64>| -> Vec<f64> {
        let mut cs = coords;
        cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        let mut t = vec![cs[0]];
        for w in cs.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let m = ((hi - lo) / h).ceil().max(1.0) as usize;
            for k in 1..=m {
                t.push(lo + (hi - lo) * k as f64 / m as f64);
            }
        }
        t
    };
    let tx = ticks(domain.vertices().iter().map(|p| p.x).collect());
    let ty = ticks(domain.vertices().iter().map(|p| p.y).collect());

    let mut node_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut nodes: Vec<Point> = Vec::new();
    let mut tris: Vec<[usize; 3]> = Vec::new();
    let mut get_node = |a: usize, b: usize, nodes: &mut Vec<Point>| -> usize {
        *node_of.entry((a, b)).or_insert_with(|| {
            nodes.push(Point::new(tx[a], ty[b]));
            nodes.len() - 1
        })
    };
    for b in 0..ty.len() - 1 {
        for a in 0..tx.len() - 1 {
            let center = Point::new(0.5 * (tx[a] + tx[a + 1]), 0.5 * (ty[b] + ty[b + 1]));
            if !domain.contains(center) {
                continue;
            }
            let n00 = get_node(a, b, &mut nodes);
            let n10 = get_node(a + 1, b, &mut nodes);
            let n11 = get_node(a + 1, b + 1, &mut nodes);
            let n01 = get_node(a, b + 1, &mut nodes);
            tris.push([n00, n10, n11]);
            tris.push([n00, n11, n01]);
        }
    }
    (nodes, tris)
}

/// Ear-clipping triangulation of a simple CCW polygon.
fn ear_clip(domain: &PolygonalDomain) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
    let nodes: Vec<Point> = domain.vertices().to_vec();
    let scale: f64 = nodes
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()))
        .fold(0.0, f64::max)
        .max(1.0);
    let eps = 1e-12 * scale * scale;

    let mut ring: Vec<usize> = (0..nodes.len()).collect();
    let mut tris = Vec::new();
    while ring.len() > 3 {
        let m = ring.len();
        let mut clipped = false;
        for k in 0..m {
            let (ip, ic, inx) = (ring[(k + m - 1) % m], ring[k], ring[(k + 1) % m]);
            let (a, b, c) = (nodes[ip], nodes[ic], nodes[inx]);
            if orient2d(a, b, c) <= eps {
                continue; // reflex or flat corner, not an ear
            }
            let blocked = ring.iter().any(|&other| {
                if other == ip || other == ic || other == inx {
                    return false;
                }
                let p = nodes[other];
                orient2d(a, b, p) >= -eps && orient2d(b, c, p) >= -eps && orient2d(c, a, p) >= -eps
            });
            if !blocked {
                tris.push([ip, ic, inx]);
                ring.remove(k);
                clipped = true;
                break;
            }
        }
        if !clipped {
            return Err(Error::Domain(
                "ear clipping failed; polygon may be degenerate".into(),
            ));
        }
    }
    let [a, b, c] = [ring[0], ring[1], ring[2]];
    if orient2d(nodes[a], nodes[b], nodes[c]) <= eps {
        return Err(Error::Domain("final ear is degenerate".into()));
    }
    tris.push([a, b, c]);
    Ok((nodes, tris))
}

/// Uniformly refine (4-way midpoint split) until every diameter <= max_diam.
fn refine_to_size(
    mut nodes: Vec<Point>,
    mut tris: Vec<[usize; 3]>,
    max_diam: f64,
) -> (Vec<Point>, Vec<[usize; 3]>) {
    loop {
        let diam = tris
            .iter()
            .map(|t| {
                let (a, b, c) = (nodes[t[0]], nodes[t[1]], nodes[t[2]]);
                a.dist(&b).max(b.dist(&c)).max(c.dist(&a))
            })
            .fold(0.0, f64::max);
        if diam <= max_diam {
            return (nodes, tris);
        }
        let (n2, t2, _) = midpoint_split(&nodes, &tris);
        nodes = n2;
        tris = t2;
    }
}

type MidpointMap = HashMap<(usize, usize), usize>;

fn midpoint_split(
    nodes: &[Point],
    tris: &[[usize; 3]],
) -> (Vec<Point>, Vec<[usize; 3]>, MidpointMap) {
    let mut nodes = nodes.to_vec();
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut out = Vec::with_capacity(4 * tris.len());
    for tri in tris {
        let mut m = [0usize; 3];
        for k in 0..3 {
            let (i, j) = (tri[k], tri[(k + 1) % 3]);
            m[k] = *mid.entry(canon(i, j)).or_insert_with(|| {
                nodes.push(Point::new(
                    0.5 * (nodes[i].x + nodes[j].x),
                    0.5 * (nodes[i].y + nodes[j].y),
                ));
                nodes.len() - 1
            });
        }
        let [a, b, c] = *tri;
        out.push([a, m[0], m[2]]);
        out.push([b, m[1], m[0]]);
        out.push([c, m[2], m[1]]);
        out.push([m[0], m[1], m[2]]);
    }
    (nodes, out, mid)
}

/// Split every triangle into four by its edge midpoints. Node coordinates of
/// the input are preserved as a prefix, so corner node indices stay valid.
pub fn refine_uniform(mesh: &TriMesh) -> TriMesh {
    let (nodes, tris, mid) = midpoint_split(&mesh.nodes, &mesh.triangles);
    let mut boundary = Vec::with_capacity(2 * mesh.boundary_edges.len());
    for e in &mesh.boundary_edges {
        let m = mid[&canon(e[0], e[1])];
        boundary.push([e[0], m]);
        boundary.push([m, e[1]]);
    }
    TriMesh::from_parts(nodes, tris, boundary, mesh.corner_nodes.clone())
        .expect("uniform refinement preserves conformity")
}

// ---------------------------------------------------------------------------
// Longest-edge (Rivara) bisection, used for corner grading.
// ---------------------------------------------------------------------------

struct Bisector {
    nodes: Vec<Point>,
    tris: Vec<[usize; 3]>,
    alive: Vec<bool>,
    edge_tris: HashMap<(usize, usize), Vec<usize>>,
    midpoints: HashMap<(usize, usize), usize>,
}

impl Bisector {
    fn new(nodes: Vec<Point>, tris: Vec<[usize; 3]>) -> Self {
        let mut edge_tris: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in tris.iter().enumerate() {
            for k in 0..3 {
                edge_tris
                    .entry(canon(tri[k], tri[(k + 1) % 3]))
                    .or_default()
                    .push(t);
            }
        }
        let alive = vec![true; tris.len()];
        Bisector {
            nodes,
            tris,
            alive,
            edge_tris,
            midpoints: HashMap::new(),
        }
    }

    fn edge_len2(&self, e: (usize, usize)) -> f64 {
        let (a, b) = (self.nodes[e.0], self.nodes[e.1]);
        (a.x - b.x).powi(2) + (a.y - b.y).powi(2)
    }

    /// Longest edge of triangle `t`, ties broken by the smaller canonical pair.
    fn longest_edge(&self, t: usize) -> (usize, usize) {
        let tri = self.tris[t];
        let mut best = canon(tri[0], tri[1]);
        let mut best_len = self.edge_len2(best);
        for k in 1..3 {
            let e = canon(tri[k], tri[(k + 1) % 3]);
            let l = self.edge_len2(e);
            if l > best_len || (l == best_len && e < best) {
                best = e;
                best_len = l;
            }
        }
        best
    }

    fn neighbor(&self, t: usize, e: (usize, usize)) -> Option<usize> {
        self.edge_tris
            .get(&e)?
            .iter()
            .copied()
            .find(|&s| s != t && self.alive[s])
    }

    fn detach(&mut self, t: usize) {
        let tri = self.tris[t];
        for k in 0..3 {
            if let Some(list) = self.edge_tris.get_mut(&canon(tri[k], tri[(k + 1) % 3])) {
                list.retain(|&s| s != t);
            }
        }
        self.alive[t] = false;
    }

    fn attach(&mut self, tri: [usize; 3]) -> usize {
        let t = self.tris.len();
        self.tris.push(tri);
        self.alive.push(true);
        for k in 0..3 {
            self.edge_tris
                .entry(canon(tri[k], tri[(k + 1) % 3]))
                .or_default()
                .push(t);
        }
        t
    }

    fn midpoint(&mut self, e: (usize, usize)) -> usize {
        if let Some(&m) = self.midpoints.get(&e) {
            return m;
        }
        let (a, b) = (self.nodes[e.0], self.nodes[e.1]);
        self.nodes
            .push(Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y)));
        let m = self.nodes.len() - 1;
        self.midpoints.insert(e, m);
        m
    }

    /// Split every alive triangle incident to `e` at the edge midpoint.
    fn bisect_edge(&mut self, e: (usize, usize)) {
        let owners: Vec<usize> = self
            .edge_tris
            .get(&e)
            .map(|l| l.iter().copied().filter(|&t| self.alive[t]).collect())
            .unwrap_or_default();
        let m = self.midpoint(e);
        for t in owners {
            let tri = self.tris[t];
            // Rotate so the split edge is (tri[i], tri[i+1]).
            let i = (0..3)
                .find(|&k| canon(tri[k], tri[(k + 1) % 3]) == e)
                .expect("edge must belong to triangle");
            let (vi, vj, vk) = (tri[i], tri[(i + 1) % 3], tri[(i + 2) % 3]);
            self.detach(t);
            self.attach([vi, m, vk]);
            self.attach([m, vj, vk]);
        }
    }

    /// Conforming refinement of triangle `t` by longest-edge propagation.
    fn refine(&mut self, t: usize) -> Result<()> {
        let mut stack = vec![t];
        let mut guard = 0usize;
        while let Some(&top) = stack.last() {
            guard += 1;
            if guard > 1_000_000 {
                return Err(Error::Domain(
                    "bisection propagation did not terminate".into(),
                ));
            }
            if !self.alive[top] {
                stack.pop();
                continue;
            }
            let e = self.longest_edge(top);
            match self.neighbor(top, e) {
                None => {
                    self.bisect_edge(e);
                    stack.pop();
                }
                Some(n) => {
                    if self.longest_edge(n) == e {
                        self.bisect_edge(e);
                        stack.pop();
                    } else {
                        stack.push(n);
                    }
                }
            }
        }
        Ok(())
    }

    fn into_compact(self) -> (Vec<Point>, Vec<[usize; 3]>) {
        let tris = self
            .tris
            .into_iter()
            .zip(self.alive)
            .filter(|(_, a)| *a)
            .map(|(t, _)| t)
            .collect();
        (self.nodes, tris)
    }
}

/// Bisect until every element satisfies the grading size bound
/// `diam <= ratio * h * max(d / h, ratio)` with d the distance to the nearest
/// listed corner.
fn grade_toward_corners(
    nodes: Vec<Point>,
    tris: Vec<[usize; 3]>,
    corners: &[Point],
    ratio: f64,
    h: f64,
) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
    let mut bis = Bisector::new(nodes, tris);
    loop {
        let victims: Vec<usize> = (0..bis.tris.len())
            .filter(|&t| {
                if !bis.alive[t] {
                    return false;
                }
                let tri = bis.tris[t];
                let (a, b, c) = (bis.nodes[tri[0]], bis.nodes[tri[1]], bis.nodes[tri[2]]);
                let diam = a.dist(&b).max(b.dist(&c)).max(c.dist(&a));
                let d = corners
                    .iter()
                    .map(|&q| {
                        point_segment_dist(q, a, b)
                            .min(point_segment_dist(q, b, c))
                            .min(point_segment_dist(q, c, a))
                    })
                    .fold(f64::INFINITY, f64::min);
                diam > ratio * h * (d / h).max(ratio)
            })
            .collect();
        if victims.is_empty() {
            return Ok(bis.into_compact());
        }
        for t in victims {
            if bis.alive[t] {
                bis.refine(t)?;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Plain-text mesh format.
// ---------------------------------------------------------------------------

/// Serialize a mesh in the plain-text format:
/// `nodes N` then N lines `x y`, `triangles M` then M lines `i j k` (0-based),
/// `boundary B` then B lines `i j`. `#` starts a comment line.
pub fn format_mesh(mesh: &TriMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "nodes {}", mesh.nodes.len());
    for p in &mesh.nodes {
        let _ = writeln!(s, "{} {}", p.x, p.y);
    }
    let _ = writeln!(s, "triangles {}", mesh.triangles.len());
    for t in &mesh.triangles {
        let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "boundary {}", mesh.boundary_edges.len());
    for e in &mesh.boundary_edges {
        let _ = writeln!(s, "{} {}", e[0], e[1]);
    }
    s
}

pub fn save_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    std::fs::write(path, format_mesh(mesh))?;
    Ok(())
}

fn take_line<'a>(
    lines: &[(usize, &'a str)],
    cursor: &mut usize,
    what: &str,
) -> Result<(usize, &'a str)> {
    let item = lines.get(*cursor).copied().ok_or_else(|| Error::Parse {
        line: 0,
        msg: format!("unexpected end of file in {what}"),
    })?;
    *cursor += 1;
    Ok(item)
}

fn take_header(lines: &[(usize, &str)], cursor: &mut usize, name: &str) -> Result<usize> {
    let (ln, line) = take_line(lines, cursor, name)?;
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(w), Some(count), None) if w == name => {
            count.parse::<usize>().map_err(|_| Error::Parse {
                line: ln,
                msg: format!("invalid count in '{name}' header"),
            })
        }
        _ => Err(Error::Parse {
            line: ln,
            msg: format!("expected '{name} <count>'"),
        }),
    }
}

fn take_indices<const K: usize>(
    lines: &[(usize, &str)],
    cursor: &mut usize,
    what: &str,
    node_count: usize,
) -> Result<[usize; K]> {
    let (ln, line) = take_line(lines, cursor, what)?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != K {
        return Err(Error::Parse {
            line: ln,
            msg: format!("expected {K} fields in {what}, got {}", parts.len()),
        });
    }
    let mut out = [0usize; K];
    for (k, s) in parts.iter().enumerate() {
        let idx: usize = s.parse().map_err(|_| Error::Parse {
            line: ln,
            msg: format!("bad node index `{s}`"),
        })?;
        if idx >= node_count {
            return Err(Error::Parse {
                line: ln,
                msg: format!("{what} node index {idx} out of range (node count {node_count})"),
            });
        }
        out[k] = idx;
    }
    Ok(out)
}

pub fn parse_mesh(text: &str) -> Result<TriMesh> {
    // Non-comment, non-blank lines with their 1-based line numbers.
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let mut cursor = 0usize;

    let n = take_header(&lines, &mut cursor, "nodes")?;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, line) = take_line(&lines, &mut cursor, "node line")?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::Parse {
                line: ln,
                msg: format!("expected 2 coordinates, got {}", parts.len()),
            });
        }
        let x: f64 = parts[0].parse().map_err(|_| Error::Parse {
            line: ln,
            msg: "bad x coordinate".into(),
        })?;
        let y: f64 = parts[1].parse().map_err(|_| Error::Parse {
            line: ln,
            msg: "bad y coordinate".into(),
        })?;
        nodes.push(Point::new(x, y));
    }

    let m = take_header(&lines, &mut cursor, "triangles")?;
    let mut triangles = Vec::with_capacity(m);
    for _ in 0..m {
        triangles.push(take_indices::<3>(&lines, &mut cursor, "triangle", n)?);
    }

    let b = take_header(&lines, &mut cursor, "boundary")?;
    let mut boundary = Vec::with_capacity(b);
    for _ in 0..b {
        boundary.push(take_indices::<2>(&lines, &mut cursor, "boundary", n)?);
    }

    if let Some(&(ln, _)) = lines.get(cursor) {
        return Err(Error::Parse {
            line: ln,
            msg: "trailing content after boundary section".into(),
        });
    }

    // Corner nodes are not stored in the file format.
    TriMesh::from_parts(nodes, triangles, boundary, Vec::new())
}

pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    parse_mesh(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_square_preset() {
        let d = make_domain(DomainPreset::UnitSquare).unwrap();
        assert_eq!(d.vertices().len(), 4);
        for a in d.interior_angles() {
            assert!((a - PI / 2.0).abs() < ANGLE_TOL);
        }
        assert!((d.area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn l_shape_has_one_reentrant_corner() {
        let d = make_domain(DomainPreset::LShape).unwrap();
        assert_eq!(d.vertices().len(), 6);
        let angles = d.interior_angles();
        let reentrant: Vec<_> = angles.iter().filter(|&&a| a > PI + ANGLE_TOL).collect();
        assert_eq!(reentrant.len(), 1);
        assert!((reentrant[0] - 3.0 * PI / 2.0).abs() < ANGLE_TOL);
        assert_eq!(d.reentrant_corners(), vec![3]);
        assert!((d.area() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn degenerate_polygon_rejected() {
        let r = make_domain(DomainPreset::Custom(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 0.0),
        ]));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn self_intersecting_polygon_names_edges() {
        // Bowtie.
        let r = make_domain(DomainPreset::Custom(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ]));
        match r {
            Err(Error::Domain(msg)) => assert!(msg.contains("edge"), "message: {msg}"),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn clockwise_polygon_rejected() {
        let r = make_domain(DomainPreset::Custom(vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
        ]));
        assert!(r.is_err());
    }

    #[test]
    fn coarsest_square_mesh_is_two_triangles() {
        let d = make_domain(DomainPreset::UnitSquare).unwrap();
        let m = triangulate(&d, 1.0, None, false).unwrap();
        assert_eq!(m.triangles().len(), 2);
        assert_eq!(m.node_count(), 4);
        assert!(m.is_nonobtuse());
        assert!((m.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn square_mesh_quarter_h() {
        let d = make_domain(DomainPreset::UnitSquare).unwrap();
        let m = triangulate(&d, 0.25, None, false).unwrap();
        assert!(m.node_count() >= 25);
        for t in 0..m.triangles().len() {
            assert!(m.triangle_diameter(t) <= 0.5);
        }
        // Structured 4x4 split.
        assert_eq!(m.node_count(), 25);
        assert_eq!(m.triangles().len(), 32);
    }

    #[test]
    fn mesh_invariants_on_presets() {
        for (preset, area) in [
            (DomainPreset::UnitSquare, 1.0),
            (DomainPreset::LShape, 0.75),
        ] {
            let d = make_domain(preset).unwrap();
            for h in [0.5, 0.21, 0.1] {
                let m = triangulate(&d, h, None, true).unwrap();
                assert!((m.total_area() - area).abs() <= 1e-12 * area);
                assert!(m.is_nonobtuse());
                assert!(m.max_diameter() <= std::f64::consts::SQRT_2 * h + 1e-12);
                for t in 0..m.triangles().len() {
                    assert!(m.triangle_area(t) > 0.0);
                }
                // Corner nodes found for every polygon vertex.
                assert_eq!(m.corner_nodes().len(), d.vertices().len());
            }
        }
    }

    #[test]
    fn graded_l_shape_small_elements_at_reentrant_corner() {
        let d = make_domain(DomainPreset::LShape).unwrap();
        let grading = Grading {
            corners: vec![3],
            ratio: 0.25,
        };
        let m = triangulate(&d, 0.25, Some(&grading), true).unwrap();
        assert!(m.is_nonobtuse());
        assert!((m.total_area() - 0.75).abs() < 1e-12);
        let corner = Point::new(0.5, 0.5);
        let near_min = (0..m.triangles().len())
            .filter(|&t| m.triangle_distance(t, corner) < 1e-12)
            .map(|t| m.triangle_diameter(t))
            .fold(f64::INFINITY, f64::min);
        // Spec bound: ratio * h * ratio = 0.015625, times implementation constant.
        assert!(
            near_min <= 0.0625 * 2.0,
            "min diameter near corner {near_min}"
        );
        // Every element satisfies the grading bound.
        for t in 0..m.triangles().len() {
            let dcorner = m.triangle_distance(t, corner);
            let bound = 0.25 * 0.25 * (dcorner / 0.25).max(0.25);
            assert!(
                m.triangle_diameter(t) <= bound + 1e-12,
                "triangle {t}: diam {} > bound {bound} at distance {dcorner}",
                m.triangle_diameter(t)
            );
        }
    }

    #[test]
    fn ear_clip_pentagon() {
        // Nonconvex, non-rectilinear pentagon.
        let d = make_domain(DomainPreset::Custom(vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 1.5),
            Point::new(1.0, 0.5),
            Point::new(0.0, 1.5),
        ]))
        .unwrap();
        let m = triangulate(&d, 0.4, None, false).unwrap();
        assert!((m.total_area() - d.area()).abs() <= 1e-12 * d.area());
        assert!(m.max_diameter() <= std::f64::consts::SQRT_2 * 0.4 + 1e-12);
    }

    #[test]
    fn huge_h_falls_back_to_coarsest_mesh() {
        // Never errors on a valid domain; the coarsest conforming
        // triangulation of the pentagon has exactly n - 2 triangles.
        let d = make_domain(DomainPreset::Custom(vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 1.5),
            Point::new(1.0, 0.5),
            Point::new(0.0, 1.5),
        ]))
        .unwrap();
        let m = triangulate(&d, 1e6, None, false).unwrap();
        assert_eq!(m.triangles().len(), 3);
        assert!((m.total_area() - d.area()).abs() <= 1e-12 * d.area());
    }

    #[test]
    fn grading_on_irregular_mesh_stays_conforming() {
        let d = make_domain(DomainPreset::Custom(vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 1.5),
            Point::new(1.0, 0.5),
            Point::new(0.0, 1.5),
        ]))
        .unwrap();
        // Grade toward the reflex vertex (index 3).
        let grading = Grading { corners: vec![3], ratio: 0.3 };
        let h = 0.5;
        let m = triangulate(&d, h, Some(&grading), false).unwrap();
        assert!((m.total_area() - d.area()).abs() <= 1e-12 * d.area());
        let corner = Point::new(1.0, 0.5);
        for t in 0..m.triangles().len() {
            let dist = m.triangle_distance(t, corner);
            let bound = 0.3 * h * (dist / h).max(0.3);
            assert!(
                m.triangle_diameter(t) <= bound + 1e-12,
                "triangle {t} violates the grading bound"
            );
        }
    }

    #[test]
    fn refine_uniform_counts() {
        let d = make_domain(DomainPreset::UnitSquare).unwrap();
        let m = triangulate(&d, 1.0, None, false).unwrap();
        let r1 = refine_uniform(&m);
        assert_eq!(r1.triangles().len(), 8);
        assert_eq!(r1.node_count(), 9);
        assert_eq!(r1.boundary_edges().len(), 2 * m.boundary_edges().len());
        let r2 = refine_uniform(&r1);
        assert_eq!(r2.triangles().len(), 32);
        assert_eq!(r2.boundary_edges().len(), 4 * m.boundary_edges().len());
        assert!((r2.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn save_load_round_trip_is_identical() {
        let d = make_domain(DomainPreset::LShape).unwrap();
        let m = triangulate(&d, 0.37, None, false).unwrap();
        let text = format_mesh(&m);
        let loaded = parse_mesh(&text).unwrap();
        assert_eq!(loaded.node_count(), m.node_count());
        for (a, b) in loaded.nodes().iter().zip(m.nodes()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
        assert_eq!(loaded.triangles(), m.triangles());
        assert_eq!(loaded.boundary_edges(), m.boundary_edges());
    }

    #[test]
    fn load_rejects_out_of_range_index_with_line() {
        let text = "nodes 3\n0 0\n1 0\n0 1\ntriangles 1\n0 1 7\nboundary 3\n0 1\n1 2\n2 0\n";
        match parse_mesh(text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 6, "the bad triangle is on line 6");
                assert!(msg.contains("out of range"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_detects_hole() {
        let d = make_domain(DomainPreset::UnitSquare).unwrap();
        let m = refine_uniform(&triangulate(&d, 1.0, None, false).unwrap());
        assert_eq!(m.triangles().len(), 8);
        // Drop one triangle: its interior edges become once-used but unlisted.
        let tris: Vec<[usize; 3]> = m.triangles()[1..].to_vec();
        let mut text = format!("nodes {}\n", m.node_count());
        for p in m.nodes() {
            text += &format!("{} {}\n", p.x, p.y);
        }
        text += &format!("triangles {}\n", tris.len());
        for t in &tris {
            text += &format!("{} {} {}\n", t[0], t[1], t[2]);
        }
        text += &format!("boundary {}\n", m.boundary_edges().len());
        for e in m.boundary_edges() {
            text += &format!("{} {}\n", e[0], e[1]);
        }
        match parse_mesh(&text) {
            Err(Error::NonConforming(msg)) => {
                assert!(msg.contains("hole") || msg.contains("boundary"))
            }
            other => panic!("expected conformity error, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_accepted() {
        let text = "# a mesh\nnodes 3\n\n0 0\n1 0\n0 1\n# connectivity\ntriangles 1\n0 1 2\nboundary 3\n0 1\n1 2\n2 0\n";
        let m = parse_mesh(text).unwrap();
        assert_eq!(m.triangles().len(), 1);
    }
}
