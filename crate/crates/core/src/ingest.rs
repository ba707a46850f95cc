//! Meshes to spherical distance signals, plus synthetic test inputs.
//!
//! A ray is cast from a center point along every grid direction; the
//! signal value is the distance to the farthest intersection with the
//! surface. Rays that hit nothing get 0 and are counted.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::so3::Rotation;
use crate::sphere::{EquiangularGrid, SphericalSignal};

/// Triangle soup.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    filtered_faces: usize,
}

impl TriMesh {
    /// Validates indices and drops zero-area faces (see
    /// [`TriMesh::filtered_faces`]).
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("mesh has non-finite vertex coordinates".into()));
        }
        for (k, f) in faces.iter().enumerate() {
            if let Some(bad) = f.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::InvalidArgument(format!(
                    "face {k} references vertex {bad} of {}",
                    vertices.len()
                )));
            }
        }
        let before = faces.len();
        let faces: Vec<[usize; 3]> = faces
            .into_iter()
            .filter(|f| triangle_area2(&vertices, f) > 0.0)
            .collect();
        Ok(Self {
            filtered_faces: before - faces.len(),
            vertices,
            faces,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Degenerate faces removed at construction.
    pub fn filtered_faces(&self) -> usize {
        self.filtered_faces
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// `(min, max)` corners of the bounding box.
    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (
                [lo[0].min(v[0]), lo[1].min(v[1]), lo[2].min(v[2])],
                [hi[0].max(v[0]), hi[1].max(v[1]), hi[2].max(v[2])],
            )
        }))
    }

    fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| f(*v)).collect(),
            faces: self.faces.clone(),
            filtered_faces: self.filtered_faces,
        }
    }

    /// Every vertex rotated by `r` about the origin.
    pub fn rotated(&self, r: &Rotation) -> Self {
        self.map_vertices(|v| r.rotate_vec(v))
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map_vertices(|v| geom::scale(v, s))
    }

    pub fn translated(&self, d: Vec3) -> Self {
        self.map_vertices(|v| geom::add(v, d))
    }
}

/// Twice the triangle area.
fn triangle_area2(v: &[Vec3], f: &[usize; 3]) -> f64 {
    let (a, b, c) = (v[f[0]], v[f[1]], v[f[2]]);
    geom::norm(geom::cross(geom::sub(b, a), geom::sub(c, a)))
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::MeshParse {
        line,
        message: message.into(),
    }
}

/// Parses an ASCII OFF mesh. Polygons with more than three vertices are
/// fan-triangulated; `#` starts a comment.
pub fn parse_off(text: &str) -> Result<TriMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let last_line = text.lines().count().max(1);

    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(hline, format!("expected \"OFF\" header, got {header:?}")))?
        .trim();
    let (cline, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| parse_err(last_line, "missing vertex/face counts"))?
    } else {
        (hline, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(cline, format!("bad count {t:?}"))))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(parse_err(cline, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| {
            parse_err(last_line, format!("header declares {nv} vertices but the file ends after {k}"))
        })?;
        let c: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad coordinate {t:?}"))))
            .collect::<Result<_>>()?;
        if c.len() != 3 {
            return Err(parse_err(ln, "vertex needs three coordinates"));
        }
        vertices.push([c[0], c[1], c[2]]);
    }

    let mut faces = Vec::with_capacity(nf);
    for k in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| {
            parse_err(last_line, format!("header declares {nf} faces but the file ends after {k}"))
        })?;
        let mut it = l.split_whitespace();
        let n: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(ln, "face must start with its vertex count"))?;
        if n < 3 {
            return Err(parse_err(ln, format!("face with {n} vertices")));
        }
        let idx: Vec<usize> = it
            .take(n)
            .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad vertex index {t:?}"))))
            .collect::<Result<_>>()?;
        if idx.len() != n {
            return Err(parse_err(ln, format!("face declares {n} vertices but lists {}", idx.len())));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(parse_err(ln, format!("vertex index {bad} out of range ({nv} vertices)")));
        }
        for w in 1..n - 1 {
            faces.push([idx[0], idx[w], idx[w + 1]]);
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "unexpected data after the declared faces"));
    }
    TriMesh::new(vertices, faces)
}

pub fn load_off(path: impl AsRef<Path>) -> Result<TriMesh> {
    parse_off(&fs::read_to_string(path)?)
}

/// Writes an ASCII OFF file.
pub fn format_off(mesh: &TriMesh) -> String {
    let mut s = format!("OFF\n{} {} 0\n", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        s.push_str(&format!("{} {} {}\n", v[0], v[1], v[2]));
    }
    for f in &mesh.faces {
        s.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    s
}

/// Counts from one casting run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CastReport {
    pub directions: usize,
    pub hits: usize,
    /// Rays with no intersection; their value is 0. Non-zero means the
    /// shape is not star-shaped about the center (or not closed).
    pub misses: usize,
    /// Ray/triangle tests rejected as parallel.
    pub parallel_rejections: usize,
    pub filtered_faces: usize,
}

const PARALLEL_EPS: f64 = 1e-9;
const BARY_EPS: f64 = 1e-12;

/// Farthest hit distance along `dir` (unit) from `origin`, plus the number
/// of parallel rejections.
pub fn cast_ray(mesh: &TriMesh, origin: Vec3, dir: Vec3) -> (Option<f64>, usize) {
    let mut best: Option<f64> = None;
    let mut parallel = 0;
    for f in &mesh.faces {
        let (a, b, c) = (mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        let e1 = geom::sub(b, a);
        let e2 = geom::sub(c, a);
        let p = geom::cross(dir, e2);
        let det = geom::dot(e1, p);
        if det.abs() < PARALLEL_EPS * geom::norm(e1) * geom::norm(e2) {
            parallel += 1;
            continue;
        }
        let inv = 1.0 / det;
        let s = geom::sub(origin, a);
        let u = geom::dot(s, p) * inv;
        if !(-BARY_EPS..=1.0 + BARY_EPS).contains(&u) {
            continue;
        }
        let q = geom::cross(s, e1);
        let v = geom::dot(dir, q) * inv;
        if v < -BARY_EPS || u + v > 1.0 + BARY_EPS {
            continue;
        }
        let t = geom::dot(e2, q) * inv;
        if t > 0.0 && best.is_none_or(|b| t > b) {
            best = Some(t);
        }
    }
    (best, parallel)
}

/// Farthest-intersection distance from `center` along every grid direction.
pub fn ray_cast_signal(mesh: &TriMesh, center: Vec3, grid: EquiangularGrid) -> Result<(SphericalSignal, CastReport)> {
    if mesh.is_empty() {
        return Err(Error::InvalidArgument("mesh has no faces".into()));
    }
    let (lo, hi) = mesh.bounding_box().expect("non-empty mesh");
    if (0..3).any(|k| !(center[k] > lo[k] && center[k] < hi[k])) {
        return Err(Error::Precondition(format!(
            "center {center:?} is not strictly inside the bounding box {lo:?} .. {hi:?}"
        )));
    }
    let casts: Vec<(Option<f64>, usize)> = grid
        .cartesian_nodes()
        .into_par_iter()
        .map(|d| cast_ray(mesh, center, d))
        .collect();
    let report = CastReport {
        directions: casts.len(),
        hits: casts.iter().filter(|c| c.0.is_some()).count(),
        misses: casts.iter().filter(|c| c.0.is_none()).count(),
        parallel_rejections: casts.iter().map(|c| c.1).sum(),
        filtered_faces: mesh.filtered_faces,
    };
    let values = casts.into_iter().map(|c| c.0.unwrap_or(0.0)).collect();
    Ok((SphericalSignal::from_values(grid, 1, values)?, report))
}

/// Regular tetrahedron with unit circumradius centred at the origin.
pub fn tetrahedron() -> TriMesh {
    let s = 1.0 / 3f64.sqrt();
    let v = vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
    // outward orientation
    let f = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    TriMesh::new(v, f).expect("valid tetrahedron")
}

/// Unit-radius icosphere after `subdivisions` rounds of edge splitting.
pub fn icosphere(subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| geom::normalize(*v).expect("non-zero"))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid = std::collections::HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = geom::normalize(geom::add(verts[a], verts[b])).expect("non-antipodal");
                verts.push(m);
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(verts, faces).expect("valid icosphere")
}

/// Analytic distance from the origin to the surface of [`tetrahedron`]
/// along unit direction `d`.
pub fn tetra_distance(d: Vec3) -> f64 {
    let s = 1.0 / 3f64.sqrt();
    let verts = [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
    // the face opposite v has outward normal -v at distance 1/3
    verts
        .iter()
        .filter_map(|v| {
            let c = -geom::dot(*v, d);
            (c > 0.0).then(|| (1.0 / 3.0) / c)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Synthetic signal families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    Constant { value: f64 },
    /// `exp((cos(theta) - 1) / width²)`.
    ZonalGaussian { width: f64 },
    /// `n` random Gaussian bumps.
    GaussianMixture { n: usize, seed: u64 },
    TetraDistance,
}

impl FromStr for SynthKind {
    type Err = Error;

    /// `constant:<c>`, `zonal_gaussian:<width>`, `gaussian_mixture:<n>:<seed>`
    /// or `tetra_distance`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidArgument(format!("bad signal kind {s:?}"));
        let num = |k: usize| -> Result<f64> { parts.get(k).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        match parts[0] {
            "constant" => Ok(SynthKind::Constant { value: num(1)? }),
            "zonal_gaussian" => Ok(SynthKind::ZonalGaussian { width: num(1)? }),
            "gaussian_mixture" => Ok(SynthKind::GaussianMixture {
                n: parts.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?,
                seed: parts.get(2).map_or(Ok(0), |t| t.parse().map_err(|_| bad()))?,
            }),
            "tetra_distance" => Ok(SynthKind::TetraDistance),
            _ => Err(bad()),
        }
    }
}

/// Deterministic single-feature test signal.
pub fn synth_signal(kind: &SynthKind, grid: EquiangularGrid) -> Result<SphericalSignal> {
    Ok(match *kind {
        SynthKind::Constant { value } => SphericalSignal::constant(grid, 1, value),
        SynthKind::ZonalGaussian { width } => {
            if width.is_nan() || width <= 0.0 {
                return Err(Error::InvalidArgument("width must be positive".into()));
            }
            SphericalSignal::from_fn(grid, 1, |_, p| ((p.theta().cos() - 1.0) / (width * width)).exp())
        }
        SynthKind::GaussianMixture { n, seed } => {
            if n == 0 {
                return Err(Error::InvalidArgument("mixture needs at least one component".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bumps: Vec<(f64, Vec3, f64)> = (0..n)
                .map(|_| {
                    let a: f64 = rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let c = crate::scnn::random_direction(&mut rng);
                    (a, c, rng.gen_range(0.5..1.0))
                })
                .collect();
            SphericalSignal::from_fn(grid, 1, |_, p| {
                let u = p.to_cartesian();
                bumps
                    .iter()
                    .map(|(a, c, s)| a * ((geom::dot(u, *c) - 1.0) / (s * s)).exp())
                    .sum()
            })
        }
        SynthKind::TetraDistance => SphericalSignal::from_fn(grid, 1, |_, p| tetra_distance(p.to_cartesian())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::rotate_signal;
    use approx::assert_abs_diff_eq;

    #[test]
    fn icosphere_radius() {
        let m = icosphere(3);
        assert_eq!(m.faces().len(), 20 * 64);
        let (x, rep) = ray_cast_signal(&m, [0.0; 3], EquiangularGrid::square(32)).unwrap();
        assert_eq!(rep.misses, 0);
        assert!(x.values().iter().all(|v| (v - 1.0).abs() <= 1e-2));
    }

    #[test]
    fn tetrahedron_vertices_and_maxima() {
        let m = tetrahedron();
        for v in m.vertices() {
            let (t, _) = cast_ray(&m, [0.0; 3], *v);
            assert_abs_diff_eq!(t.unwrap(), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(tetra_distance(*v), 1.0, epsilon = 1e-12);
        }
        let g = EquiangularGrid::square(32);
        let (x, rep) = ray_cast_signal(&m, [0.0; 3], g).unwrap();
        assert_eq!(rep.misses, 0);
        // the four largest local maxima point at the vertices
        let nodes = g.cartesian_nodes();
        for v in m.vertices() {
            let near = (0..g.len())
                .filter(|&k| geom::angle_between(nodes[k], *v) < 0.5)
                .max_by(|&a, &b| x.values()[a].total_cmp(&x.values()[b]))
                .unwrap();
            let closest = (0..g.len())
                .min_by(|&a, &b| geom::angle_between(nodes[a], *v).total_cmp(&geom::angle_between(nodes[b], *v)))
                .unwrap();
            assert!(geom::angle_between(nodes[near], nodes[closest]) < 2.0 * g.d_theta());
        }
        let analytic = synth_signal(&SynthKind::TetraDistance, g).unwrap();
        for (a, b) in analytic.values().iter().zip(x.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn center_outside_box() {
        let cube = parse_off(
            "OFF\n8 6 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n0 0 1\n1 0 1\n1 1 1\n0 1 1\n\
             4 0 3 2 1\n4 4 5 6 7\n4 0 1 5 4\n4 2 3 7 6\n4 1 2 6 5\n4 0 4 7 3\n",
        )
        .unwrap();
        assert_eq!(cube.faces().len(), 12);
        let g = EquiangularGrid::square(8);
        assert!(matches!(
            ray_cast_signal(&cube, [-0.1, 0.5, 0.5], g),
            Err(Error::Precondition(_))
        ));
        let (x, rep) = ray_cast_signal(&cube, [0.5, 0.5, 0.5], g).unwrap();
        assert_eq!(rep.misses, 0);
        assert!(x.values().iter().all(|v| *v >= 0.5 - 1e-12 && *v <= 0.75f64.sqrt() + 1e-12));
    }

    #[test]
    fn off_parsing() {
        let tet = "OFF\n# tetrahedron\n4 4 6\n1 1 1\n1 -1 -1\n-1 1 -1\n-1 -1 1\n3 0 1 2\n3 0 3 1\n3 0 2 3\n3 1 3 2\n";
        assert_eq!(parse_off(tet).unwrap().faces().len(), 4);
        let short = "OFF\n5 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        match parse_off(short) {
            Err(Error::MeshParse { line, message }) => {
                assert_eq!(line, 6);
                assert!(message.contains('5'), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let bad_coord = "OFF\n3 1 0\n0 0 0\n1 x 0\n0 1 0\n3 0 1 2\n";
        assert!(matches!(parse_off(bad_coord), Err(Error::MeshParse { line: 4, .. })));
        assert!(matches!(parse_off("PLY\n"), Err(Error::MeshParse { line: 1, .. })));
        let degenerate = "OFF 3 2 0\n0 0 0\n1 0 0\n2 0 0\n3 0 1 2\n3 0 0 1\n";
        let m = parse_off(degenerate).unwrap();
        assert_eq!((m.faces().len(), m.filtered_faces()), (0, 2));
        assert!(ray_cast_signal(&m, [0.0; 3], EquiangularGrid::square(4)).is_err());
    }

    #[test]
    fn off_round_trip() {
        let m = icosphere(1);
        assert_eq!(parse_off(&format_off(&m)).unwrap(), m);
    }

    #[test]
    fn scaling_mesh_scales_signal() {
        let m = icosphere(2).translated([0.1, -0.05, 0.02]);
        let g = EquiangularGrid::square(16);
        let (a, _) = ray_cast_signal(&m, [0.0; 3], g).unwrap();
        let (b, _) = ray_cast_signal(&m.scaled(2.0), [0.0; 3], g).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(2.0 * x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotated_mesh_rotates_signal() {
        let m = icosphere(3).translated([0.2, 0.1, -0.1]).scaled(1.5);
        let g = EquiangularGrid::square(32);
        let (x, _) = ray_cast_signal(&m, [0.0; 3], g).unwrap();
        for r in [
            Rotation::from_euler(0.3, 1.0, -0.2),
            Rotation::from_euler(2.0, 0.4, 1.1),
            Rotation::from_euler(-1.0, 2.2, 0.5),
        ] {
            // x_r(u) = x(r u) is the cast of the mesh rotated by r⁻¹
            let (y, _) = ray_cast_signal(&m.rotated(&r.inverse()), [0.0; 3], g).unwrap();
            let xr = rotate_signal(&x, &r);
            let e = crate::metrics::relative_rmse(&y, &xr).unwrap();
            assert!(e <= 5e-2, "{e}");
        }
    }

    #[test]
    fn synthetic_signals() {
        let g = EquiangularGrid::square(16);
        let one = synth_signal(&"constant:1".parse().unwrap(), g).unwrap();
        assert_abs_diff_eq!(one.norm(), 1.0, epsilon = 1e-12);
        let z = synth_signal(&SynthKind::ZonalGaussian { width: 0.5 }, g).unwrap();
        assert_eq!(z.roll_phi(5), z);
        let a = synth_signal(&"gaussian_mixture:4:7".parse().unwrap(), g).unwrap();
        let b = synth_signal(&SynthKind::GaussianMixture { n: 4, seed: 7 }, g).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_signal(&SynthKind::GaussianMixture { n: 4, seed: 8 }, g).unwrap());
        assert!("bogus".parse::<SynthKind>().is_err());
        let t = synth_signal(&SynthKind::TetraDistance, g).unwrap();
        assert!(t.values().iter().all(|v| *v >= 1.0 / 3.0 - 1e-12 && *v <= 1.0));
    }
}
