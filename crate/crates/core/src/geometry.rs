//! Mesh and point-cloud evaluation: OBJ/XYZ loading, normalization, surface
//! sampling, voxel IoU, Chamfer and Hausdorff distances, and the reward
//! predicate.

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub type Point = [f64; 3];

pub const DEFAULT_POINTS: usize = 2048;
pub const DEFAULT_RESOLUTION: usize = 64;
/// Triangles with area at or below this are dropped on load.
pub const DEGENERATE_AREA: f64 = 1e-12;
/// Fraction of rays allowed an odd crossing count before a mesh is rejected.
pub const PARITY_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Mesh(TriangleMesh),
    Cloud(PointCloud),
}

/// Counts gathered while loading a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub vertices: usize,
    pub triangles: usize,
    pub dropped_degenerate: usize,
}

/// Per-episode verification flags. Every field must be present when
/// deserialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationChecklist {
    pub script_executed: bool,
    pub entity_generated: bool,
    pub topology_valid: bool,
    pub dimensions_within_tolerance: bool,
    pub stats_in_range: bool,
}

/// 1 iff every check passed.
pub fn binary_reward(c: &VerificationChecklist) -> u8 {
    (c.script_executed && c.entity_generated && c.topology_valid && c.dimensions_within_tolerance && c.stats_in_range)
        as u8
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point, b: Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn dist2(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

impl TriangleMesh {
    /// Validates indices and drops degenerate triangles, returning how many
    /// were dropped.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<(Self, usize)> {
        if vertices.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite vertex coordinate"));
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::invalid(format!("triangle {t:?} indexes past {} vertices", vertices.len())));
        }
        let before = triangles.len();
        let mut mesh = TriangleMesh { vertices, triangles };
        mesh.triangles.retain(|t| {
            let [a, b, c] = t.map(|i| mesh.vertices[i]);
            triangle_area(a, b, c) > DEGENERATE_AREA
        });
        let dropped = before - mesh.triangles.len();
        Ok((mesh, dropped))
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| {
            let [a, b, c] = self.corners(t);
            triangle_area(a, b, c)
        }).sum()
    }

    pub fn translate(&self, by: Point) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| [v[0] + by[0], v[1] + by[1], v[2] + by[2]]).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn normalize(&self) -> Result<Self> {
        Ok(Self {
            vertices: normalize_points(&self.vertices)?,
            triangles: self.triangles.clone(),
        })
    }
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.points.iter().map(|p| p.map(|x| x * s)).collect())
    }

    pub fn normalize(&self) -> Result<Self> {
        Ok(Self::new(normalize_points(&self.points)?))
    }
}

impl Geometry {
    pub fn normalize(&self) -> Result<Self> {
        Ok(match self {
            Geometry::Mesh(m) => Geometry::Mesh(m.normalize()?),
            Geometry::Cloud(c) => Geometry::Cloud(c.normalize()?),
        })
    }
}

/// Centroid to the origin, longest bounding-box edge to 1.
fn normalize_points(points: &[Point]) -> Result<Vec<Point>> {
    if points.is_empty() {
        return Err(Error::invalid("empty geometry"));
    }
    let n = points.len() as f64;
    let mut centroid = [0.0; 3];
    for p in points {
        for k in 0..3 {
            centroid[k] += p[k];
        }
    }
    let centroid = centroid.map(|c| c / n);
    let (lo, hi) = bounds(points);
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if extent <= 0.0 || !extent.is_finite() {
        return Err(Error::DegenerateGeometry("all points coincide".into()));
    }
    Ok(points
        .iter()
        .map(|p| [(p[0] - centroid[0]) / extent, (p[1] - centroid[1]) / extent, (p[2] - centroid[2]) / extent])
        .collect())
}

fn bounds(points: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Loads `.obj` as a mesh or `.xyz` as a point cloud.
pub fn load_geometry(path: impl AsRef<Path>) -> Result<(Geometry, LoadReport)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("obj") => {
            let (mesh, report) = parse_obj(&text, path)?;
            Ok((Geometry::Mesh(mesh), report))
        }
        Some("xyz") => {
            let cloud = parse_xyz(&text, path)?;
            let report = LoadReport {
                vertices: cloud.len(),
                ..LoadReport::default()
            };
            Ok((Geometry::Cloud(cloud), report))
        }
        _ => Err(Error::invalid(format!("{}: expected a .obj or .xyz file", path.display()))),
    }
}

fn parse_coords<'a>(mut fields: impl Iterator<Item = &'a str>, path: &Path, line: usize) -> Result<Point> {
    let mut p = [0.0; 3];
    for slot in &mut p {
        let tok = fields.next().ok_or_else(|| Error::parse(path, line, "expected three coordinates"))?;
        *slot = tok
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::parse(path, line, format!("bad coordinate {tok:?}")))?;
    }
    Ok(p)
}

/// ASCII OBJ subset: `v x y z [w]`, `f i j k ...` with optional `/vt/vn`
/// suffixes and negative indices; everything else is ignored.
pub fn parse_obj(text: &str, path: &Path) -> Result<(TriangleMesh, LoadReport)> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut fields = content.split_whitespace();
        match fields.next() {
            Some("v") => vertices.push(parse_coords(fields, path, line)?),
            Some("f") => {
                let idx = fields
                    .map(|tok| {
                        let head = tok.split('/').next().unwrap_or("");
                        let k: i64 = head
                            .parse()
                            .map_err(|_| Error::parse(path, line, format!("bad face index {tok:?}")))?;
                        let n = vertices.len() as i64;
                        let resolved = if k > 0 { k - 1 } else { n + k };
                        if k == 0 || resolved < 0 || resolved >= n {
                            return Err(Error::parse(path, line, format!("face index {k} out of range (1..={n})")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(path, line, "face needs at least three vertices"));
                }
                for w in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[w], idx[w + 1]]);
                }
            }
            _ => {}
        }
    }
    if vertices.is_empty() || triangles.is_empty() {
        return Err(Error::invalid(format!("{}: no vertices or faces", path.display())));
    }
    let n_vertices = vertices.len();
    let (mesh, dropped) = TriangleMesh::new(vertices, triangles)?;
    if mesh.triangles.is_empty() {
        return Err(Error::invalid(format!("{}: every face is degenerate", path.display())));
    }
    let report = LoadReport {
        vertices: n_vertices,
        triangles: mesh.triangles.len(),
        dropped_degenerate: dropped,
    };
    Ok((mesh, report))
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields = content.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
        let tokens: Vec<&str> = fields.collect();
        if tokens.len() != 3 {
            return Err(Error::parse(path, i + 1, format!("expected 3 values, found {}", tokens.len())));
        }
        points.push(parse_coords(tokens.into_iter(), path, i + 1)?);
    }
    if points.is_empty() {
        return Err(Error::invalid(format!("{}: no points", path.display())));
    }
    Ok(PointCloud::new(points))
}

pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {:?} {:?} {:?}\n", v[0], v[1], v[2]));
    }
    for t in &mesh.triangles {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    out
}

/// Area-weighted triangle choice then uniform barycentric sampling. Also
/// returns the triangle each point came from.
pub fn sample_surface_indexed(mesh: &TriangleMesh, n: usize, rng: &mut Rng) -> Result<(PointCloud, Vec<usize>)> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let areas: Vec<f64> = (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            triangle_area(a, b, c)
        })
        .collect();
    if areas.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateGeometry("mesh has zero surface area".into()));
    }
    let pick = WeightedIndex::new(&areas).map_err(|e| Error::DegenerateGeometry(e.to_string()))?;
    let mut points = Vec::with_capacity(n);
    let mut origin = Vec::with_capacity(n);
    for _ in 0..n {
        let t = pick.sample(rng);
        let [a, b, c] = mesh.corners(t);
        let s = rng.gen::<f64>().sqrt();
        let r = rng.gen::<f64>();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r), s * r);
        points.push([0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k]));
        origin.push(t);
    }
    Ok((PointCloud::new(points), origin))
}

pub fn sample_surface(mesh: &TriangleMesh, n: usize, rng: &mut Rng) -> Result<PointCloud> {
    sample_surface_indexed(mesh, n, rng).map(|(c, _)| c)
}

/// For each point of `from`, the distance to its nearest point in `to`.
fn directed(from: &PointCloud, to: &PointCloud) -> Vec<f64> {
    from.points
        .iter()
        .map(|&a| to.points.iter().map(|&b| dist2(a, b)).fold(f64::INFINITY, f64::min).sqrt())
        .collect()
}

fn check_clouds(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("point cloud is empty"));
    }
    Ok(())
}

/// Mean of the two directed mean nearest-neighbour distances (Euclidean).
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_clouds(a, b)?;
    let mean = |d: Vec<f64>| d.iter().sum::<f64>() / d.len() as f64;
    Ok(0.5 * (mean(directed(a, b)) + mean(directed(b, a))))
}

pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_clouds(a, b)?;
    let max = |d: Vec<f64>| d.into_iter().fold(0.0, f64::max);
    Ok(max(directed(a, b)).max(max(directed(b, a))))
}

/// The cube both meshes are voxelized in: centred on the union bounding
/// box, side 1.1 times its longest edge. For meshes normalized into the
/// unit box this is the cube of half-width 0.55.
pub fn common_cube(a: &TriangleMesh, b: &TriangleMesh) -> (Point, f64) {
    let (la, ha) = bounds(&a.vertices);
    let (lb, hb) = bounds(&b.vertices);
    let lo = [0, 1, 2].map(|k| la[k].min(lb[k]));
    let hi = [0, 1, 2].map(|k| ha[k].max(hb[k]));
    let centre = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    (centre, 1.1 * extent)
}

/// Occupancy of a `res`³ grid, x fastest, over the cube at `centre` with
/// side `side`.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    pub res: usize,
    pub cells: Vec<bool>,
    pub inconsistent_rays: usize,
}

/// A signed edge function that is bitwise antisymmetric in the edge
/// direction, so a shared edge is evaluated identically by both triangles.
fn edge_fn(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let (u, v, sign) = if (a[0], a[1]) <= (b[0], b[1]) { (a, b, 1.0) } else { (b, a, -1.0) };
    sign * ((v[0] - u[0]) * (p[1] - u[1]) - (v[1] - u[1]) * (p[0] - u[0]))
}

/// Whether a counter-clockwise edge owns points lying exactly on it.
fn owns(a: [f64; 2], b: [f64; 2]) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    d[1] > 0.0 || (d[1] == 0.0 && d[0] < 0.0)
}

/// Voxelizes by casting one ray along +x through each (y, z) voxel centre
/// and counting crossings.
pub fn voxelize(mesh: &TriangleMesh, centre: Point, side: f64, res: usize) -> Occupancy {
    let h = side / res as f64;
    let axis = |k: usize, i: usize| centre[k] - 0.5 * side + (i as f64 + 0.5) * h;
    let mut rays: Vec<Vec<f64>> = vec![Vec::new(); res * res];

    for t in 0..mesh.triangles.len() {
        let tri = mesh.corners(t);
        let mut q = tri.map(|v| [v[1], v[2]]);
        let mut xs = tri.map(|v| v[0]);
        let area2 = edge_fn(q[0], q[1], q[2]);
        if area2 == 0.0 {
            continue;
        }
        if area2 < 0.0 {
            q.swap(1, 2);
            xs.swap(1, 2);
        }
        let area2 = area2.abs();
        let y_lo = q.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let y_hi = q.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let z_lo = q.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let z_hi = q.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let index_range = |k: usize, lo: f64, hi: f64| {
            let start = ((lo - (centre[k] - 0.5 * side)) / h - 0.5).floor().max(0.0) as usize;
            let end = (((hi - (centre[k] - 0.5 * side)) / h - 0.5).ceil() as i64).clamp(-1, res as i64 - 1);
            start..(end + 1).max(0) as usize
        };
        for j in index_range(1, y_lo, y_hi) {
            let y = axis(1, j);
            for k in index_range(2, z_lo, z_hi) {
                let p = [y, axis(2, k)];
                let mut w = [0.0; 3];
                let mut inside = true;
                for e in 0..3 {
                    let (a, b) = (q[e], q[(e + 1) % 3]);
                    let f = edge_fn(a, b, p);
                    if f < 0.0 || (f == 0.0 && !owns(a, b)) {
                        inside = false;
                        break;
                    }
                    // Weight of the vertex opposite this edge.
                    w[(e + 2) % 3] = f;
                }
                if inside {
                    let x = (w[0] * xs[0] + w[1] * xs[1] + w[2] * xs[2]) / area2;
                    rays[k * res + j].push(x);
                }
            }
        }
    }

    let mut cells = vec![false; res * res * res];
    let mut inconsistent = 0;
    for k in 0..res {
        for j in 0..res {
            let ray = &mut rays[k * res + j];
            if ray.len() % 2 == 1 {
                inconsistent += 1;
                continue;
            }
            ray.sort_by(f64::total_cmp);
            let mut next = 0;
            for i in 0..res {
                let x = axis(0, i);
                while next < ray.len() && ray[next] < x {
                    next += 1;
                }
                cells[(k * res + j) * res + i] = next % 2 == 1;
            }
        }
    }
    Occupancy {
        res,
        cells,
        inconsistent_rays: inconsistent,
    }
}

fn checked_occupancy(mesh: &TriangleMesh, centre: Point, side: f64, res: usize) -> Result<Occupancy> {
    let occ = voxelize(mesh, centre, side, res);
    let total = res * res;
    if occ.inconsistent_rays as f64 > PARITY_TOLERANCE * total as f64 {
        return Err(Error::NonWatertight {
            inconsistent: occ.inconsistent_rays,
            total,
        });
    }
    Ok(occ)
}

/// Intersection over union of the two occupancies; 1.0 when both are empty.
pub fn voxel_iou(a: &TriangleMesh, b: &TriangleMesh, res: usize) -> Result<f64> {
    if res < 8 {
        return Err(Error::invalid(format!("resolution {res} below 8")));
    }
    if a.triangles.is_empty() || b.triangles.is_empty() {
        return Err(Error::invalid("mesh has no triangles"));
    }
    let (centre, side) = common_cube(a, b);
    if side <= 0.0 {
        return Err(Error::DegenerateGeometry("meshes have zero extent".into()));
    }
    let oa = checked_occupancy(a, centre, side, res)?;
    let ob = checked_occupancy(b, centre, side, res)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in oa.cells.iter().zip(&ob.cells) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Axis-aligned box `[lo, hi]` as a closed 12-triangle mesh with outward
/// normals.
pub fn box_mesh(lo: Point, hi: Point) -> TriangleMesh {
    let v = |i: usize| [0, 1, 2].map(|k| if i >> k & 1 == 1 { hi[k] } else { lo[k] });
    let vertices = (0..8).map(v).collect();
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriangleMesh { vertices, triangles }
}

/// Scores of one generated/reference pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub iou: Option<f64>,
    pub chamfer: f64,
    pub hausdorff: f64,
}

/// Normalizes both inputs, samples `points` per mesh surface and scores
/// them. IoU is only defined when both inputs are meshes.
///
/// Both surfaces are sampled from the same starting state of `rng`, so
/// identical inputs yield identical clouds.
pub fn compare(generated: &Geometry, reference: &Geometry, points: usize, res: usize, rng: &mut Rng) -> Result<Comparison> {
    let g = generated.normalize()?;
    let r = reference.normalize()?;
    let start = rng.clone();
    let cloud = |x: &Geometry| -> Result<PointCloud> {
        match x {
            Geometry::Mesh(m) => sample_surface(m, points, &mut start.clone()),
            Geometry::Cloud(c) => Ok(c.clone()),
        }
    };
    let (cg, cr) = (cloud(&g)?, cloud(&r)?);
    let iou = match (&g, &r) {
        (Geometry::Mesh(a), Geometry::Mesh(b)) => Some(voxel_iou(a, b, res)?),
        _ => None,
    };
    Ok(Comparison {
        iou,
        chamfer: chamfer(&cg, &cr)?,
        hausdorff: hausdorff(&cg, &cr)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn unit_cube() -> TriangleMesh {
        box_mesh([-0.5; 3], [0.5; 3])
    }

    fn cloud(p: &[Point]) -> PointCloud {
        PointCloud::new(p.to_vec())
    }

    #[test]
    fn reward_requires_every_check() {
        let all = VerificationChecklist {
            script_executed: true,
            entity_generated: true,
            topology_valid: true,
            dimensions_within_tolerance: true,
            stats_in_range: true,
        };
        assert_eq!(binary_reward(&all), 1);
        assert_eq!(binary_reward(&VerificationChecklist { topology_valid: false, ..all }), 0);
        let none = VerificationChecklist {
            script_executed: false,
            entity_generated: false,
            topology_valid: false,
            dimensions_within_tolerance: false,
            stats_in_range: false,
        };
        assert_eq!(binary_reward(&none), 0);
        let partial = r#"{"script_executed":true,"entity_generated":true}"#;
        assert!(serde_json::from_str::<VerificationChecklist>(partial).is_err());
    }

    #[test]
    fn obj_parsing() {
        let p = Path::new("t.obj");
        let (mesh, report) = parse_obj(&write_obj(&unit_cube()), p).unwrap();
        assert_eq!(mesh, unit_cube());
        assert_eq!((report.vertices, report.triangles), (8, 12));

        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4 # quad\n";
        let (mesh, _) = parse_obj(quad, p).unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 2], [0, 2, 3]]);

        let neg = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n";
        assert_eq!(parse_obj(neg, p).unwrap().0.triangles, vec![[0, 1, 2]]);

        let bad = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n";
        match parse_obj(bad, p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_obj("v 0 0 x\n", p), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_obj("# nothing\n", p), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn degenerate_faces_are_dropped() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n";
        let (mesh, report) = parse_obj(text, Path::new("d.obj")).unwrap();
        assert_eq!(mesh.triangles.len(), 1);
        assert_eq!(report.dropped_degenerate, 1);
    }

    #[test]
    fn xyz_parsing() {
        let p = Path::new("c.xyz");
        let c = parse_xyz("0 0 0\n1 2 3\n\n4,5,6\n", p).unwrap();
        assert_eq!(c.points, vec![[0.0; 3], [1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert!(matches!(parse_xyz("1 2\n", p), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_xyz("", p), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn normalize_closed_form_and_errors() {
        let m = box_mesh([0.0; 3], [2.0; 3]).normalize().unwrap();
        assert_eq!(m.vertices[0], [-0.5; 3]);
        assert_eq!(m.vertices[7], [0.5; 3]);
        let again = m.normalize().unwrap();
        for (a, b) in m.vertices.iter().zip(&again.vertices) {
            assert!(dist2(*a, *b).sqrt() < 1e-12);
        }
        let same = cloud(&[[1.0, 2.0, 3.0]; 4]);
        assert!(matches!(same.normalize(), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn sampling_is_deterministic_and_on_the_surface() {
        let m = unit_cube();
        let a = sample_surface(&m, 1000, &mut rng::stream(3, rng::ENVIRONMENT)).unwrap();
        let b = sample_surface(&m, 1000, &mut rng::stream(3, rng::ENVIRONMENT)).unwrap();
        assert_eq!(a, b);
        for p in &a.points {
            let on_face = p.iter().any(|x| (x.abs() - 0.5).abs() < 1e-12);
            assert!(on_face && p.iter().all(|x| x.abs() <= 0.5 + 1e-12));
        }

        let (tri, _) = TriangleMesh::new(vec![[0.0, 0.0, 1.0], [1.0, 0.0, 2.0], [0.0, 1.0, 3.0]], vec![[0, 1, 2]]).unwrap();
        // Plane z = 1 + x + 2y.
        for p in sample_surface(&tri, 500, &mut rng::stream(1, rng::ENVIRONMENT)).unwrap().points {
            assert!((p[2] - (1.0 + p[0] + 2.0 * p[1])).abs() < 1e-9);
        }
        let (flat, _) = TriangleMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(sample_surface(&flat, 0, &mut rng::stream(1, rng::ENVIRONMENT)).is_err());
    }

    #[test]
    fn distance_reference_values() {
        let o = [0.0; 3];
        assert_eq!(chamfer(&cloud(&[o]), &cloud(&[[1.0, 0.0, 0.0]])).unwrap(), 1.0);
        assert_eq!(chamfer(&cloud(&[o, [2.0, 0.0, 0.0]]), &cloud(&[[1.0, 0.0, 0.0]])).unwrap(), 1.0);
        assert_eq!(hausdorff(&cloud(&[o]), &cloud(&[[3.0, 0.0, 0.0]])).unwrap(), 3.0);
        assert!(matches!(chamfer(&cloud(&[]), &cloud(&[o])), Err(Error::InvalidInput(_))));
        assert!(matches!(hausdorff(&cloud(&[o]), &cloud(&[])), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn iou_fixtures() {
        let c = unit_cube();
        assert_eq!(voxel_iou(&c, &c, 16).unwrap(), 1.0);
        let far = c.translate([3.0, 0.0, 0.0]);
        assert_eq!(voxel_iou(&c, &far, 16).unwrap(), 0.0);
        let shifted = c.translate([0.5, 0.0, 0.0]);
        let iou = voxel_iou(&c, &shifted, 64).unwrap();
        assert!((iou - 1.0 / 3.0).abs() <= 0.02, "{iou}");
        assert!(voxel_iou(&c, &c, 4).is_err());
    }

    #[test]
    fn open_mesh_is_rejected() {
        let mut open = unit_cube();
        open.triangles.truncate(10);
        assert!(matches!(voxel_iou(&open, &unit_cube(), 16), Err(Error::NonWatertight { .. })));
    }

    #[test]
    fn shared_diagonals_are_counted_once() {
        // Every ray through the cube centre column hits the face diagonals
        // exactly when y = z; a closed cube must still be fully consistent.
        let (centre, side) = common_cube(&unit_cube(), &unit_cube());
        for res in [8, 9, 16, 33] {
            let occ = voxelize(&unit_cube(), centre, side, res);
            assert_eq!(occ.inconsistent_rays, 0, "res {res}");
        }
    }

    fn arb_cloud() -> impl Strategy<Value = PointCloud> {
        prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..20).prop_map(PointCloud::new)
    }

    proptest! {
        #[test]
        fn distances_are_symmetric_and_ordered(a in arb_cloud(), b in arb_cloud()) {
            let (cd, hd) = (chamfer(&a, &b).unwrap(), hausdorff(&a, &b).unwrap());
            prop_assert_eq!(cd, chamfer(&b, &a).unwrap());
            prop_assert_eq!(hd, hausdorff(&b, &a).unwrap());
            prop_assert!(cd >= 0.0 && hd >= cd);
            prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn distances_scale_linearly(a in arb_cloud(), b in arb_cloud(), s in 0.01f64..100.0) {
            let (sa, sb) = (a.scale(s), b.scale(s));
            let cd = chamfer(&a, &b).unwrap();
            let hd = hausdorff(&a, &b).unwrap();
            prop_assert!((chamfer(&sa, &sb).unwrap() - s * cd).abs() <= 1e-12 * (1.0 + s * cd));
            prop_assert!((hausdorff(&sa, &sb).unwrap() - s * hd).abs() <= 1e-12 * (1.0 + s * hd));
        }

        #[test]
        fn normalize_is_idempotent(a in arb_cloud()) {
            prop_assume!(a.len() > 1);
            let Ok(once) = a.normalize() else { return Ok(()); };
            let twice = once.normalize().unwrap();
            for (p, q) in once.points.iter().zip(&twice.points) {
                prop_assert!(dist2(*p, *q).sqrt() <= 1e-12);
            }
        }

        #[test]
        fn iou_symmetric_and_bounded(dx in -1.2f64..1.2, dy in -1.2f64..1.2, s in 0.3f64..1.0) {
            let a = unit_cube();
            let b = box_mesh([-0.5 * s; 3], [0.5 * s; 3]).translate([dx, dy, 0.0]);
            let ab = voxel_iou(&a, &b, 12).unwrap();
            prop_assert_eq!(ab, voxel_iou(&b, &a, 12).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
