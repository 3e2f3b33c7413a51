//! Spatial domain, triangulated mesh and projection of point locations onto
//! the piecewise-linear mesh basis.
//!
//! Meshes are built from a triangular lattice of points (spacing below
//! `max_edge` inside the domain, coarser in the extension band), densified
//! boundary vertices and an outer ring at the extension distance, then
//! Delaunay-triangulated.
//!
//! # Text format
//!
//! ```text
//! # stfusion mesh v1
//! vertices 4
//! 0,0,0,1
//! 1,1,0,1
//! ...
//! triangles 2
//! 0,1,2
//! ...
//! ```
//!
//! Vertex lines are `id,x,y,interior` (interior is `1` inside the domain,
//! `0` in the extension band); triangle lines list three vertex ids in
//! counter-clockwise order.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

/// Degrees-to-kilometres factor along a meridian.
pub const KM_PER_DEGREE: f64 = 111.32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist(&Point::new(a.x + t * dx, a.y + t * dy))
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Km,
    #[default]
    Degrees,
}

/// Study region: a simple closed polygon, stored counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    boundary: Vec<Point>,
    unit: Unit,
}

impl Domain {
    pub fn new(mut boundary: Vec<Point>, unit: Unit) -> Result<Self> {
        if boundary.len() > 1 && boundary.first() == boundary.last() {
            boundary.pop();
        }
        if boundary.len() < 3 {
            return Err(Error::DegenerateDomain(format!(
                "polygon needs at least 3 vertices, got {}",
                boundary.len()
            )));
        }
        if boundary.iter().any(|p| !p.is_finite()) {
            return Err(Error::DegenerateDomain("non-finite coordinate".into()));
        }
        let n = boundary.len();
        for i in 0..n {
            let (a, b) = (boundary[i], boundary[(i + 1) % n]);
            if a.dist(&b) == 0.0 {
                return Err(Error::DegenerateDomain(format!("repeated vertex {i}")));
            }
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (c, d) = (boundary[j], boundary[(j + 1) % n]);
                if segments_cross(a, b, c, d) {
                    return Err(Error::DegenerateDomain(format!("edges {i} and {j} intersect")));
                }
            }
        }
        let signed = signed_area(&boundary);
        if signed.abs() < 1e-14 {
            return Err(Error::DegenerateDomain("polygon has zero area".into()));
        }
        if signed < 0.0 {
            boundary.reverse();
        }
        Ok(Self { boundary, unit })
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64, unit: Unit) -> Result<Self> {
        Self::new(
            vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ],
            unit,
        )
    }

    pub fn boundary(&self) -> &[Point] {
        &self.boundary
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.boundary)
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.boundary.len();
        (0..n).map(move |i| (self.boundary[i], self.boundary[(i + 1) % n]))
    }

    /// Even-odd point-in-polygon test; boundary points count as inside.
    pub fn contains(&self, p: Point) -> bool {
        if self.distance_to_boundary(p) <= 1e-12 {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let xi = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < xi {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn distance_to_boundary(&self, p: Point) -> f64 {
        self.edges()
            .map(|(a, b)| segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance to the region: zero inside.
    pub fn distance(&self, p: Point) -> f64 {
        if self.contains(p) {
            0.0
        } else {
            self.distance_to_boundary(p)
        }
    }

    pub fn bbox(&self) -> (Point, Point) {
        bbox(&self.boundary)
    }

    /// Largest distance between two boundary vertices.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for a in &self.boundary {
            for b in &self.boundary {
                d = d.max(a.dist(b));
            }
        }
        d
    }

    /// Planar degree-to-kilometre map at the domain's mean latitude, for
    /// domains given in degrees.
    pub fn km_projection(&self) -> Option<KmProjection> {
        match self.unit {
            Unit::Km => None,
            Unit::Degrees => {
                let mean_lat = self.boundary.iter().map(|p| p.y).sum::<f64>() / self.boundary.len() as f64;
                Some(KmProjection { mean_lat })
            }
        }
    }
}

/// Equirectangular projection `x·111.32·cos(lat₀)`, `y·111.32`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmProjection {
    pub mean_lat: f64,
}

impl KmProjection {
    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            p.x * KM_PER_DEGREE * self.mean_lat.to_radians().cos(),
            p.y * KM_PER_DEGREE,
        )
    }
}

fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
}

fn bbox(points: &[Point]) -> (Point, Point) {
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

/// Mesh construction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshOptions {
    /// Longest edge allowed inside the domain.
    pub max_edge: f64,
    /// Longest edge in the extension band; defaults to `2 * max_edge`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_max_edge: Option<f64>,
    /// Width of the band added around the domain.
    #[serde(default)]
    pub extension: f64,
    #[serde(default = "default_max_vertices")]
    pub max_vertices: usize,
}

fn default_max_vertices() -> usize {
    100_000
}

impl MeshOptions {
    pub fn new(max_edge: f64, extension: f64) -> Self {
        Self {
            max_edge,
            outer_max_edge: None,
            extension,
            max_vertices: default_max_vertices(),
        }
    }

    /// Defaults tied to the smallest prior median range of the model fields:
    /// edges of a fifth of that range, and an extension band of one range.
    pub fn from_prior_range(median_range: f64) -> Self {
        Self::new(median_range / 5.0, median_range)
    }
}

// Lattice spacing relative to the requested maximum edge; the slack absorbs
// the longer edges formed between boundary vertices and the first lattice row.
const LATTICE_FRACTION: f64 = 0.8;

/// Triangulated mesh with piecewise-linear basis functions on its vertices.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    interior: Vec<bool>,
    locator: Locator,
}

impl Mesh {
    /// Wraps explicit vertices and triangles, orienting triangles
    /// counter-clockwise and rejecting degenerate ones.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, interior: Vec<bool>) -> Result<Self> {
        if interior.len() != vertices.len() {
            return Err(Error::invalid("interior flags must match vertex count"));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("mesh vertex with non-finite coordinate"));
        }
        let mut tris = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::invalid(format!("triangle {t} references a missing vertex")));
            }
            let [a, b, c] = *tri;
            let area = cross(vertices[a], vertices[b], vertices[c]);
            if area.abs() <= 1e-14 {
                return Err(Error::invalid(format!("triangle {t} is degenerate")));
            }
            tris.push(if area > 0.0 { [a, b, c] } else { [a, c, b] });
        }
        if tris.is_empty() {
            return Err(Error::invalid("mesh has no triangles"));
        }
        let locator = Locator::new(&vertices, &tris);
        Ok(Self {
            vertices,
            triangles: tris,
            interior,
            locator,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn interior(&self) -> &[bool] {
        &self.interior
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * cross(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// All distinct edges as vertex pairs `(lo, hi)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Barycentric weights of `p` in its containing triangle, if any.
    pub fn locate(&self, p: Point) -> Option<[(usize, f64); 3]> {
        self.locator.locate(&self.vertices, &self.triangles, p)
    }

    /// Index of the vertex nearest to `p`.
    pub fn nearest_vertex(&self, p: Point) -> usize {
        self.vertices
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.dist(&p).total_cmp(&b.1.dist(&p)))
            .map(|(i, _)| i)
            .unwrap()
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# stfusion mesh v1")?;
        writeln!(w, "vertices {}", self.vertices.len())?;
        for (i, (p, inside)) in self.vertices.iter().zip(&self.interior).enumerate() {
            writeln!(w, "{i},{},{},{}", p.x, p.y, u8::from(*inside))?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for [a, b, c] in &self.triangles {
            writeln!(w, "{a},{b},{c}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::invalid(format!("mesh line {line}: {msg}"));
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| match l {
            Ok(s) => !s.trim().is_empty() && !s.trim_start().starts_with('#'),
            Err(_) => true,
        });
        let mut header = |what: &str| -> Result<usize> {
            let (ln, l) = lines.next().ok_or_else(|| bad(0, "unexpected end of file"))?;
            let l = l.map_err(|e| Error::invalid(e.to_string()))?;
            let mut parts = l.split_whitespace();
            if parts.next() != Some(what) {
                return Err(bad(ln, &format!("expected `{what} <count>`")));
            }
            parts
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| bad(ln, "missing count"))
        };
        let nv = header("vertices")?;
        let mut raw = Vec::new();
        let mut collect = |n: usize, width: usize, raw: &mut Vec<(usize, Vec<String>)>| -> Result<()> {
            for _ in 0..n {
                let (ln, l) = lines.next().ok_or_else(|| bad(0, "unexpected end of file"))?;
                let l = l.map_err(|e| Error::invalid(e.to_string()))?;
                let fields: Vec<String> = l.split(',').map(|s| s.trim().to_string()).collect();
                if fields.len() != width {
                    return Err(bad(ln, &format!("expected {width} fields")));
                }
                raw.push((ln, fields));
            }
            Ok(())
        };
        collect(nv, 4, &mut raw)?;
        let mut vertices = vec![Point::new(0.0, 0.0); nv];
        let mut interior = vec![false; nv];
        let mut seen = vec![false; nv];
        for (ln, f) in raw.drain(..) {
            let id: usize = f[0].parse().map_err(|_| bad(ln, "bad vertex id"))?;
            if id >= nv || seen[id] {
                return Err(bad(ln, "vertex id out of range or repeated"));
            }
            seen[id] = true;
            let x = f[1].parse().map_err(|_| bad(ln, "bad x"))?;
            let y = f[2].parse().map_err(|_| bad(ln, "bad y"))?;
            vertices[id] = Point::new(x, y);
            interior[id] = f[3] == "1";
        }
        drop(collect);
        let nt = header_after(&mut lines, "triangles", &bad)?;
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (ln, l) = lines.next().ok_or_else(|| bad(0, "unexpected end of file"))?;
            let l = l.map_err(|e| Error::invalid(e.to_string()))?;
            let ids: Vec<usize> = l
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(ln, "bad triangle"))?;
            if ids.len() != 3 {
                return Err(bad(ln, "expected 3 vertex ids"));
            }
            triangles.push([ids[0], ids[1], ids[2]]);
        }
        Mesh::new(vertices, triangles, interior)
    }
}

fn header_after<I>(lines: &mut I, what: &str, bad: &dyn Fn(usize, &str) -> Error) -> Result<usize>
where
    I: Iterator<Item = (usize, std::io::Result<String>)>,
{
    let (ln, l) = lines.next().ok_or_else(|| bad(0, "unexpected end of file"))?;
    let l = l.map_err(|e| Error::invalid(e.to_string()))?;
    let mut parts = l.split_whitespace();
    if parts.next() != Some(what) {
        return Err(bad(ln, &format!("expected `{what} <count>`")));
    }
    parts
        .next()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| bad(ln, "missing count"))
}

/// Uniform bucket grid over triangle bounding boxes.
#[derive(Debug, Clone)]
struct Locator {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn new(vertices: &[Point], triangles: &[[usize; 3]]) -> Self {
        let (lo, hi) = bbox(vertices);
        let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-12);
        let side = ((triangles.len() as f64).sqrt().ceil() as usize).clamp(1, 512);
        let cell = span / side as f64 * (1.0 + 1e-9);
        let nx = (((hi.x - lo.x) / cell).floor() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / cell).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for (t, tri) in triangles.iter().enumerate() {
            let pts: Vec<Point> = tri.iter().map(|&v| vertices[v]).collect();
            let (a, b) = bbox(&pts);
            let (i0, j0) = Self::cell_of(lo, cell, nx, ny, a);
            let (i1, j1) = Self::cell_of(lo, cell, nx, ny, b);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        Self {
            origin: lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    fn cell_of(origin: Point, cell: f64, nx: usize, ny: usize, p: Point) -> (usize, usize) {
        let i = ((p.x - origin.x) / cell).floor().clamp(0.0, (nx - 1) as f64) as usize;
        let j = ((p.y - origin.y) / cell).floor().clamp(0.0, (ny - 1) as f64) as usize;
        (i, j)
    }

    fn locate(&self, vertices: &[Point], triangles: &[[usize; 3]], p: Point) -> Option<[(usize, f64); 3]> {
        let eps = 1e-9 * self.cell.max(1e-300);
        if p.x < self.origin.x - eps
            || p.y < self.origin.y - eps
            || p.x > self.origin.x + self.nx as f64 * self.cell + eps
            || p.y > self.origin.y + self.ny as f64 * self.cell + eps
        {
            return None;
        }
        let (i, j) = Self::cell_of(self.origin, self.cell, self.nx, self.ny, p);
        let mut best: Option<([(usize, f64); 3], f64)> = None;
        for &t in &self.buckets[j * self.nx + i] {
            let [a, b, c] = triangles[t];
            let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
            let det = cross(pa, pb, pc);
            let wa = cross(p, pb, pc) / det;
            let wb = cross(pa, p, pc) / det;
            let wc = 1.0 - wa - wb;
            let worst = wa.min(wb).min(wc);
            if worst >= -1e-10 && best.as_ref().map_or(true, |(_, w)| worst > *w) {
                best = Some(([(a, wa), (b, wb), (c, wc)], worst));
                if worst >= 0.0 {
                    break;
                }
            }
        }
        best.map(|(mut w, _)| {
            for e in w.iter_mut() {
                if e.1 < 1e-13 {
                    e.1 = 0.0;
                }
            }
            let s: f64 = w.iter().map(|e| e.1).sum();
            for e in w.iter_mut() {
                e.1 /= s;
            }
            w
        })
    }
}

/// Builds a mesh with default extension-band spacing and vertex cap.
pub fn build_mesh(domain: &Domain, max_edge: f64, extension: f64) -> Result<Mesh> {
    build_mesh_with(domain, &MeshOptions::new(max_edge, extension))
}

pub fn build_mesh_with(domain: &Domain, opts: &MeshOptions) -> Result<Mesh> {
    let h = opts.max_edge;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid("max_edge must be positive"));
    }
    if !(opts.extension >= 0.0) {
        return Err(Error::invalid("extension must be non-negative"));
    }
    let outer = opts.outer_max_edge.unwrap_or(2.0 * h);
    if !(outer > 0.0) {
        return Err(Error::invalid("outer_max_edge must be positive"));
    }
    let ext = opts.extension;
    let s_in = LATTICE_FRACTION * h;
    let s_out = LATTICE_FRACTION * outer;

    // Cheap size estimate before generating anything.
    let lattice_density = |s: f64| 2.0 / (3f64.sqrt() * s * s);
    let perimeter: f64 = domain.edges().map(|(a, b)| a.dist(&b)).sum();
    let band_area = perimeter * ext + std::f64::consts::PI * ext * ext;
    let estimate = domain.area() * lattice_density(s_in)
        + band_area * lattice_density(s_out)
        + perimeter / s_in
        + (perimeter + 2.0 * std::f64::consts::PI * ext) / s_out;
    if estimate > opts.max_vertices as f64 {
        return Err(Error::MeshTooLarge {
            requested: estimate.ceil() as usize,
            cap: opts.max_vertices,
        });
    }

    let mut points: Vec<Point> = Vec::new();

    // Densified boundary.
    for (a, b) in domain.edges() {
        let k = (a.dist(&b) / s_in).ceil().max(1.0) as usize;
        for i in 0..k {
            let t = i as f64 / k as f64;
            points.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
        }
    }

    let (lo, hi) = domain.bbox();
    // Interior lattice.
    for p in triangular_lattice(lo, hi, s_in) {
        if domain.contains(p) && domain.distance_to_boundary(p) >= 0.5 * s_in {
            points.push(p);
        }
    }

    if ext > 0.0 {
        let elo = Point::new(lo.x - ext, lo.y - ext);
        let ehi = Point::new(hi.x + ext, hi.y + ext);
        for p in triangular_lattice(elo, ehi, s_out) {
            if domain.contains(p) {
                continue;
            }
            let d = domain.distance_to_boundary(p);
            if d >= 0.5 * s_out.max(s_in) && d <= ext - 0.5 * s_out {
                points.push(p);
            }
        }
        for p in offset_ring(domain, ext, s_out) {
            if domain.distance_to_boundary(p) >= ext * (1.0 - 1e-9) {
                points.push(p);
            }
        }
    }

    let points = dedup_points(points, 1e-9 * s_in);
    if points.len() > opts.max_vertices {
        return Err(Error::MeshTooLarge {
            requested: points.len(),
            cap: opts.max_vertices,
        });
    }

    let area_floor = 1e-10 * s_in * s_in;
    let (mut verts, mut tris) = triangulate(points, domain, ext, area_floor, s_in)?;

    // Split edges that exceed their length bound at the midpoint until none do.
    for _ in 0..8 {
        let mut extra = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for t in &tris {
            for k in 0..3 {
                let (a, b) = (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]));
                if !seen.insert((a, b)) {
                    continue;
                }
                let (pa, pb) = (verts[a], verts[b]);
                let bound = if domain.contains(pa) && domain.contains(pb) {
                    h
                } else {
                    outer
                };
                if pa.dist(&pb) > bound {
                    extra.push(Point::new(0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y)));
                }
            }
        }
        if extra.is_empty() {
            break;
        }
        let mut pts = verts.clone();
        pts.extend(extra);
        if pts.len() > opts.max_vertices {
            return Err(Error::MeshTooLarge {
                requested: pts.len(),
                cap: opts.max_vertices,
            });
        }
        (verts, tris) = triangulate(pts, domain, ext, area_floor, s_in)?;
    }

    // Drop vertices no triangle uses, then reindex.
    let mut used = vec![false; verts.len()];
    for t in &tris {
        for &v in t {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; verts.len()];
    let mut vertices = Vec::new();
    for (i, p) in verts.iter().enumerate() {
        if used[i] {
            remap[i] = vertices.len();
            vertices.push(*p);
        }
    }
    for t in tris.iter_mut() {
        for v in t.iter_mut() {
            *v = remap[*v];
        }
    }
    let interior = vertices.iter().map(|p| domain.contains(*p)).collect();
    Mesh::new(vertices, tris, interior)
}

fn triangulate(
    points: Vec<Point>,
    domain: &Domain,
    ext: f64,
    area_floor: f64,
    scale: f64,
) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
    let dt = DelaunayTriangulation::<Point2<f64>>::bulk_load(points.iter().map(|p| Point2::new(p.x, p.y)).collect())
        .map_err(|e| Error::DegenerateDomain(format!("triangulation failed: {e:?}")))?;
    let verts: Vec<Point> = dt
        .vertices()
        .map(|v| {
            let q = v.position();
            Point::new(q.x, q.y)
        })
        .collect();
    let mut tris = Vec::new();
    for face in dt.inner_faces() {
        let vs = face.vertices();
        let ids = [vs[0].fix().index(), vs[1].fix().index(), vs[2].fix().index()];
        let (a, b, c) = (verts[ids[0]], verts[ids[1]], verts[ids[2]]);
        if cross(a, b, c).abs() * 0.5 <= area_floor {
            continue;
        }
        let centroid = Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
        if domain.distance(centroid) > ext + 1e-9 * scale {
            continue;
        }
        tris.push(ids);
    }
    Ok((verts, tris))
}

fn triangular_lattice(lo: Point, hi: Point, s: f64) -> Vec<Point> {
    let dy = s * 3f64.sqrt() / 2.0;
    let rows = ((hi.y - lo.y) / dy).floor() as usize + 1;
    let mut out = Vec::new();
    for r in 0..=rows {
        let y = lo.y + r as f64 * dy;
        if y > hi.y + 1e-12 * s {
            break;
        }
        let shift = if r % 2 == 1 { 0.5 * s } else { 0.0 };
        let mut x = lo.x + shift;
        while x <= hi.x + 1e-12 * s {
            out.push(Point::new(x, y));
            x += s;
        }
    }
    out
}

/// Points on the outward offset of the polygon at distance `ext`.
fn offset_ring(domain: &Domain, ext: f64, spacing: f64) -> Vec<Point> {
    let b = domain.boundary();
    let n = b.len();
    let normal = |a: Point, c: Point| {
        let (dx, dy) = (c.x - a.x, c.y - a.y);
        let l = dx.hypot(dy);
        (dy / l, -dx / l)
    };
    let mut out = Vec::new();
    for i in 0..n {
        let (a, c) = (b[i], b[(i + 1) % n]);
        let (nx, ny) = normal(a, c);
        let k = (a.dist(&c) / spacing).ceil().max(1.0) as usize;
        for j in 0..=k {
            let t = j as f64 / k as f64;
            out.push(Point::new(
                a.x + t * (c.x - a.x) + ext * nx,
                a.y + t * (c.y - a.y) + ext * ny,
            ));
        }
        // Arc around the vertex shared with the next edge.
        let d = b[(i + 2) % n];
        if cross(a, c, d) > 0.0 {
            let (mx, my) = normal(c, d);
            let t0 = ny.atan2(nx);
            let mut t1 = my.atan2(mx);
            while t1 < t0 {
                t1 += 2.0 * std::f64::consts::PI;
            }
            let k = ((t1 - t0) * ext / spacing).ceil() as usize;
            for j in 1..k {
                let th = t0 + (t1 - t0) * j as f64 / k as f64;
                out.push(Point::new(c.x + ext * th.cos(), c.y + ext * th.sin()));
            }
        }
    }
    out
}

fn dedup_points(mut pts: Vec<Point>, tol: f64) -> Vec<Point> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let mut out: Vec<Point> = Vec::with_capacity(pts.len());
    for p in pts {
        let dup = out
            .iter()
            .rev()
            .take_while(|q| p.x - q.x <= tol)
            .any(|q| q.dist(&p) <= tol);
        if !dup {
            out.push(p);
        }
    }
    out
}

/// Sparse observation operator: rows are locations, columns mesh vertices,
/// entries barycentric weights.
#[derive(Debug, Clone)]
pub struct ProjectionMatrix {
    matrix: CsMat<f64>,
}

impl ProjectionMatrix {
    pub fn matrix(&self) -> &CsMat<f64> {
        &self.matrix
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.rows()
    }

    /// Non-zero `(vertex, weight)` pairs of row `i`.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        self.matrix
            .outer_view(i)
            .map(|r| r.iter().map(|(c, v)| (c, *v)).collect())
            .unwrap_or_default()
    }

    /// Interpolates vertex values at the projected locations.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        crate::linalg::matvec(&self.matrix, values)
    }
}

/// Projects points onto the mesh basis. Fails on the first point outside
/// the mesh, naming its index.
pub fn project(mesh: &Mesh, points: &[Point]) -> Result<ProjectionMatrix> {
    let mut tri = TriMat::new((points.len(), mesh.n_vertices()));
    for (i, p) in points.iter().enumerate() {
        let w = mesh.locate(*p).ok_or(Error::OutOfDomain {
            index: i,
            x: p.x,
            y: p.y,
        })?;
        for (v, wv) in w {
            if wv > 0.0 {
                tri.add_triplet(i, v, wv);
            }
        }
    }
    Ok(ProjectionMatrix { matrix: tri.to_csr() })
}

/// Short human-readable mesh summary.
pub fn describe(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{} vertices ({} interior), {} triangles, area {:.4}",
        mesh.n_vertices(),
        mesh.interior().iter().filter(|f| **f).count(),
        mesh.triangles().len(),
        mesh.total_area()
    );
    s
}
