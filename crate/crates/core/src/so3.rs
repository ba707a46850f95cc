//! The rotation group SO(3).
//!
//! [`Rotation`] stores a unit quaternion; axis-angle, ZYZ Euler angles and
//! the 3x3 matrix are derived views. `compose(a, b)` applies `b` first, so
//! `compose(a, b) ∘ u = a ∘ (b ∘ u)`. ZYZ Euler angles follow
//! `r = Rz(phi) Ry(theta) Rz(rho)`, which maps the north pole to the point
//! `(theta, phi)`.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::sphere::{wrap_azimuth, EquiangularGrid, SphericalPoint, SphericalSignal};

/// An element of SO(3) backed by a unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    q: [f64; 4],
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub const fn identity() -> Self {
        Self {
            q: [1.0, 0.0, 0.0, 0.0],
        }
    }

    fn from_raw(q: [f64; 4]) -> Self {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        Self {
            q: [q[0] / n, q[1] / n, q[2] / n, q[3] / n],
        }
    }

    /// Rotation by `beta` radians (right-handed) about `axis`.
    pub fn from_axis_angle(axis: Vec3, beta: f64) -> Result<Self> {
        let a = geom::normalize(axis).ok_or(Error::ZeroVector)?;
        if !beta.is_finite() {
            return Err(Error::InvalidArgument(format!("rotation angle {beta} is not finite")));
        }
        Ok(Self::about_unit_axis(a, beta))
    }

    #[inline]
    fn about_unit_axis(a: Vec3, beta: f64) -> Self {
        let (s, c) = (0.5 * beta).sin_cos();
        Self::from_raw([c, a[0] * s, a[1] * s, a[2] * s])
    }

    pub fn about_z(beta: f64) -> Self {
        Self::about_unit_axis([0.0, 0.0, 1.0], beta)
    }

    pub fn about_y(beta: f64) -> Self {
        Self::about_unit_axis([0.0, 1.0, 0.0], beta)
    }

    /// `Rz(phi) Ry(theta) Rz(rho)`.
    pub fn from_euler(phi: f64, theta: f64, rho: f64) -> Self {
        Self::about_z(phi)
            .compose(&Self::about_y(theta))
            .compose(&Self::about_z(rho))
    }

    /// Exponential map of a rotation vector (axis times angle).
    pub fn from_rotation_vector(v: Vec3) -> Self {
        let angle = geom::norm(v);
        if angle == 0.0 {
            Self::identity()
        } else {
            Self::about_unit_axis(geom::scale(v, 1.0 / angle), angle)
        }
    }

    pub fn quaternion(&self) -> [f64; 4] {
        self.q
    }

    /// `self ∘ other`: apply `other`, then `self`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let [a, b, c, d] = self.q;
        let [e, f, g, h] = other.q;
        Self::from_raw([
            a * e - b * f - c * g - d * h,
            a * f + b * e + c * h - d * g,
            a * g - b * h + c * e + d * f,
            a * h + b * g - c * f + d * e,
        ])
    }

    pub fn inverse(&self) -> Rotation {
        let [w, x, y, z] = self.q;
        Self { q: [w, -x, -y, -z] }
    }

    /// Orthogonal matrix with determinant +1.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let [w, x, y, z] = self.q;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    #[inline]
    pub fn rotate_vec(&self, v: Vec3) -> Vec3 {
        mat_vec(&self.matrix(), v)
    }

    /// `r ∘ p`.
    pub fn apply(&self, p: SphericalPoint) -> SphericalPoint {
        SphericalPoint::from_unit(self.rotate_vec(p.to_cartesian()))
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let [w, x, y, z] = self.q;
        2.0 * (x * x + y * y + z * z).sqrt().atan2(w.abs())
    }

    /// Unit axis and angle in `[0, pi]`. The identity reports the z axis.
    pub fn axis_angle(&self) -> (Vec3, f64) {
        let [w, x, y, z] = self.q;
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        let v = [sign * x, sign * y, sign * z];
        match geom::normalize(v) {
            Some(axis) => (axis, self.angle()),
            None => ([0.0, 0.0, 1.0], 0.0),
        }
    }

    /// ZYZ Euler triple `(phi, theta, rho)` in `[0,2pi) x [0,pi] x [0,2pi)`.
    /// At `theta` in `{0, pi}` the free angle is folded into `phi` and
    /// `rho = 0`.
    pub fn euler_angles(&self) -> (f64, f64, f64) {
        let m = self.matrix();
        let st = m[0][2].hypot(m[1][2]);
        let theta = st.atan2(m[2][2]);
        if st < 1e-12 {
            let phi = if m[2][2] > 0.0 {
                m[1][0].atan2(m[0][0])
            } else {
                (-m[1][0]).atan2(m[1][1])
            };
            let theta = if m[2][2] > 0.0 { 0.0 } else { PI };
            return (wrap_azimuth(phi), theta, 0.0);
        }
        let phi = m[1][2].atan2(m[0][2]);
        let rho = m[2][1].atan2(-m[2][0]);
        (wrap_azimuth(phi), theta, wrap_azimuth(rho))
    }

    /// Quaternion distance `min(|q1 - q2|, |q1 + q2|)`.
    pub fn distance(&self, other: &Rotation) -> f64 {
        let d = |s: f64| {
            (0..4)
                .map(|k| (self.q[k] - s * other.q[k]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        d(1.0).min(d(-1.0))
    }

    /// Uniformly distributed rotation (Shoemake's quaternion method).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen_range(0.0..TAU);
        let u3: f64 = rng.gen_range(0.0..TAU);
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        Self::from_raw([b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin()])
    }

    /// The rotation taking the north pole `u0` to `u` along the shortest arc:
    /// axis `u0 x u`, angle `acos<u0, u>`. `u0` itself gives the identity and
    /// the south pole a half turn about `[1, 0, 0]`.
    pub fn shortest_arc(u: SphericalPoint) -> Rotation {
        Self::shortest_arc_to(u.to_cartesian())
    }

    pub(crate) fn shortest_arc_to(v: Vec3) -> Rotation {
        // u0 x v for u0 = [0, 0, 1]
        let axis = [-v[1], v[0], 0.0];
        let s = geom::norm(axis);
        // sin(pi) is not exactly zero; treat anything this close as a pole
        if s <= 1e-14 {
            return if v[2] >= 0.0 {
                Rotation::identity()
            } else {
                Self::about_unit_axis([1.0, 0.0, 0.0], PI)
            };
        }
        let angle = s.atan2(v[2]);
        Self::about_unit_axis(geom::scale(axis, 1.0 / s), angle)
    }

    /// If this is a z rotation by an integer number of azimuth cells of
    /// `grid`, returns that number (so `x_r` is an exact index roll).
    pub fn azimuthal_cells(&self, grid: &EquiangularGrid) -> Option<isize> {
        let [w, x, y, z] = self.q;
        if x.hypot(y) > 1e-14 {
            return None;
        }
        let beta = 2.0 * z.atan2(w);
        let k = beta / grid.d_phi();
        let kr = k.round();
        if (k - kr).abs() < 1e-9 {
            Some(kr as isize)
        } else {
            None
        }
    }
}

#[inline]
pub(crate) fn mat_vec(m: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// `x_r(u) = x(r ∘ u)` on the same grid, per feature. Azimuthal rotations by
/// whole cells are exact index rolls; everything else interpolates.
pub fn rotate_signal(x: &SphericalSignal, r: &Rotation) -> SphericalSignal {
    let grid = x.grid();
    if let Some(k) = r.azimuthal_cells(&grid) {
        return x.roll_phi(k);
    }
    let m = r.matrix();
    let targets: Vec<SphericalPoint> = grid
        .cartesian_nodes()
        .into_par_iter()
        .map(|u| SphericalPoint::from_unit(mat_vec(&m, u)))
        .collect();
    resample(x, &targets)
}

/// Samples every feature of `x` at `targets` (one per grid node, row-major).
pub(crate) fn resample(x: &SphericalSignal, targets: &[SphericalPoint]) -> SphericalSignal {
    let grid = x.grid();
    let n = grid.len();
    let mut out = SphericalSignal::zeros(grid, x.n_features());
    for f in 0..x.n_features() {
        out.feature_mut(f)
            .par_iter_mut()
            .zip(targets.par_iter())
            .for_each(|(o, p)| *o = x.sample(*p, f));
    }
    debug_assert_eq!(targets.len(), n);
    out
}

/// One node of a Haar quadrature on SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureNode {
    pub phi: f64,
    pub theta: f64,
    pub rho: f64,
    pub weight: f64,
}

impl QuadratureNode {
    pub fn rotation(&self) -> Rotation {
        Rotation::from_euler(self.phi, self.theta, self.rho)
    }
}

/// Midpoint product rule for the normalized Haar measure
/// `dr = (dphi / 2pi) (sin(theta) dtheta / 2) (drho / 2pi)`.
///
/// Node `(a, b, c)` sits at `theta_a = (a + 1/2) pi / n_theta`,
/// `phi_b = (b + 1/2) 2pi / n_phi`, `rho_c = (c + 1/2) 2pi / n_rho`. Weights
/// are proportional to `sin(theta_a)` and normalized so they sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct So3Quadrature {
    n_theta: usize,
    n_phi: usize,
    n_rho: usize,
    theta_weights: Vec<f64>,
}

impl So3Quadrature {
    pub fn new(n_theta: usize, n_phi: usize, n_rho: usize) -> Result<Self> {
        if n_theta < 2 || n_phi < 2 || n_rho < 2 {
            return Err(Error::InvalidArgument(format!(
                "quadrature resolutions must be >= 2, got ({n_theta}, {n_phi}, {n_rho})"
            )));
        }
        let dt = PI / n_theta as f64;
        let raw: Vec<f64> = (0..n_theta).map(|a| ((a as f64 + 0.5) * dt).sin()).collect();
        // the midpoint sum of sin is 1 / sin(pi / 2n) in closed form
        let total = 1.0 / (PI / (2.0 * n_theta as f64)).sin();
        let mut theta_weights: Vec<f64> = raw.iter().map(|s| s / total).collect();
        // fold the remaining rounding into a final rescale
        let s: f64 = crate::sphere::compensated_sum(theta_weights.iter().copied());
        theta_weights.iter_mut().for_each(|w| *w /= s);
        Ok(Self {
            n_theta,
            n_phi,
            n_rho,
            theta_weights,
        })
    }

    /// Default quadrature for a signal grid: `(n_theta, n_phi, max(16, n_theta / 2))`.
    pub fn for_grid(grid: &EquiangularGrid) -> Result<Self> {
        Self::new(
            grid.n_theta().max(2),
            grid.n_phi().max(2),
            (grid.n_theta() / 2).max(16),
        )
    }

    pub fn resolutions(&self) -> (usize, usize, usize) {
        (self.n_theta, self.n_phi, self.n_rho)
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn n_rho(&self) -> usize {
        self.n_rho
    }

    pub fn theta(&self, a: usize) -> f64 {
        (a as f64 + 0.5) * PI / self.n_theta as f64
    }

    pub fn phi(&self, b: usize) -> f64 {
        (b as f64 + 0.5) * TAU / self.n_phi as f64
    }

    pub fn rho(&self, c: usize) -> f64 {
        (c as f64 + 0.5) * TAU / self.n_rho as f64
    }

    /// Weight of a `theta` row summed over its `phi` and `rho` nodes.
    pub fn theta_weight(&self, a: usize) -> f64 {
        self.theta_weights[a]
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi * self.n_rho
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All nodes, `theta`-major then `phi` then `rho`.
    pub fn nodes(&self) -> impl Iterator<Item = QuadratureNode> + '_ {
        let per = 1.0 / (self.n_phi * self.n_rho) as f64;
        (0..self.n_theta).flat_map(move |a| {
            (0..self.n_phi).flat_map(move |b| {
                (0..self.n_rho).map(move |c| QuadratureNode {
                    phi: self.phi(b),
                    theta: self.theta(a),
                    rho: self.rho(c),
                    weight: self.theta_weights[a] * per,
                })
            })
        })
    }

    /// Quadrature estimate of the Haar integral of `f`.
    pub fn integrate(&self, f: impl Fn(&QuadratureNode) -> f64) -> f64 {
        crate::sphere::compensated_sum(self.nodes().map(|n| n.weight * f(&n)))
    }
}

/// Candidate set and refinement schedule of a rotation search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub n_phi: usize,
    pub n_theta: usize,
    pub n_rho: usize,
    /// Local pattern-search passes after the coarse grid; the step halves
    /// each pass.
    pub refine_passes: usize,
}

impl SearchBudget {
    fn validate(&self) -> Result<()> {
        if self.n_phi == 0 || self.n_theta == 0 || self.n_rho == 0 {
            return Err(Error::InvalidArgument("search grid resolutions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult {
    pub rotation: Rotation,
    pub value: f64,
    pub evaluations: usize,
}

/// Minimizes `objective` over SO(3): the `seeds` (in order), then the coarse
/// ZYZ grid in lexicographic `(phi, theta, rho)` order, then local passes
/// around the incumbent. Ties keep the earliest candidate, so the result
/// does not depend on the thread count. The returned value is an upper bound
/// on the infimum.
pub fn minimize_over_rotations<F>(
    budget: &SearchBudget,
    seeds: &[Rotation],
    objective: F,
) -> Result<SearchResult>
where
    F: Fn(&Rotation) -> f64 + Sync,
{
    budget.validate()?;
    let eval = |r: &Rotation| {
        let v = objective(r);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut candidates: Vec<Rotation> = seeds.to_vec();
    for a in 0..budget.n_phi {
        for b in 0..budget.n_theta {
            for c in 0..budget.n_rho {
                candidates.push(Rotation::from_euler(
                    a as f64 * TAU / budget.n_phi as f64,
                    (b as f64 + 0.5) * PI / budget.n_theta as f64,
                    c as f64 * TAU / budget.n_rho as f64,
                ));
            }
        }
    }
    let values: Vec<f64> = candidates.par_iter().map(eval).collect();
    let mut evaluations = values.len();
    let (mut best_idx, mut best) = (0, values[0]);
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v < best {
            best = v;
            best_idx = k;
        }
    }
    let mut incumbent = candidates[best_idx];

    let mut step = 0.5
        * (TAU / budget.n_phi as f64)
            .max(PI / budget.n_theta as f64)
            .max(TAU / budget.n_rho as f64);
    let mut offsets = Vec::with_capacity(26);
    for i in -1i32..=1 {
        for j in -1i32..=1 {
            for k in -1i32..=1 {
                if (i, j, k) != (0, 0, 0) {
                    offsets.push([i as f64, j as f64, k as f64]);
                }
            }
        }
    }
    for _ in 0..budget.refine_passes {
        if best == 0.0 {
            break;
        }
        let trial: Vec<(Rotation, f64)> = offsets
            .par_iter()
            .map(|o| {
                let r = incumbent.compose(&Rotation::from_rotation_vector(geom::scale(*o, step)));
                (r, eval(&r))
            })
            .collect();
        evaluations += trial.len();
        for (r, v) in trial {
            if v < best {
                best = v;
                incumbent = r;
            }
        }
        step *= 0.5;
    }
    Ok(SearchResult {
        rotation: incumbent,
        value: best,
        evaluations,
    })
}

#[derive(Serialize, Deserialize)]
struct RotationJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    euler_zyz: Option<[f64; 3]>,
}

/// Written with both the axis-angle and the Euler view; either is accepted
/// on input.
impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (axis, beta) = self.axis_angle();
        let (p, t, r) = self.euler_angles();
        RotationJson {
            axis: Some(axis),
            beta: Some(beta),
            euler_zyz: Some([p, t, r]),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = RotationJson::deserialize(d)?;
        match (j.axis, j.beta, j.euler_zyz) {
            (Some(axis), Some(beta), _) => {
                Rotation::from_axis_angle(axis, beta).map_err(D::Error::custom)
            }
            (None, None, Some([p, t, r])) => Ok(Rotation::from_euler(p, t, r)),
            _ => Err(D::Error::custom(
                "rotation needs either \"axis\" and \"beta\" or \"euler_zyz\"",
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn euler_maps_north_pole_to_theta_phi() {
        let p = Rotation::from_euler(0.0, PI / 2.0, 0.0).apply(SphericalPoint::NORTH);
        assert_abs_diff_eq!(p.theta(), PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.phi(), 0.0, epsilon = 1e-12);
        // matrix-product oracle for a generic triple
        let (phi, theta, rho) = (1.1, 0.7, 2.9);
        let rz = |a: f64| [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
        let ry = |a: f64| [[a.cos(), 0.0, a.sin()], [0.0, 1.0, 0.0], [-a.sin(), 0.0, a.cos()]];
        let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
            let mut c = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
                }
            }
            c
        };
        let m = mul(mul(rz(phi), ry(theta)), rz(rho));
        let got = Rotation::from_euler(phi, theta, rho).matrix();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(got[i][j], m[i][j], epsilon = 1e-14);
            }
        }
        let q = Rotation::from_euler(phi, theta, rho).apply(SphericalPoint::NORTH);
        assert_abs_diff_eq!(q.theta(), theta, epsilon = 1e-12);
        assert_abs_diff_eq!(q.phi(), phi, epsilon = 1e-12);
    }

    #[test]
    fn group_axioms() {
        let mut rng = rng();
        for _ in 0..100 {
            let (a, b, c) = (Rotation::random(&mut rng), Rotation::random(&mut rng), Rotation::random(&mut rng));
            assert!(a.compose(&Rotation::identity()).distance(&a) < 1e-12);
            assert!(Rotation::identity().compose(&a).distance(&a) < 1e-12);
            assert!(a.compose(&a.inverse()).distance(&Rotation::identity()) < 1e-12);
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            assert!(l.distance(&r) < 1e-12);
            let qn: f64 = l.quaternion().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(qn, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn matrix_is_special_orthogonal() {
        let mut rng = rng();
        for _ in 0..50 {
            let m = Rotation::random(&mut rng).matrix();
            for i in 0..3 {
                for j in 0..3 {
                    let d: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
                    assert_abs_diff_eq!(d, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-10);
                }
            }
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            assert_abs_diff_eq!(det, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn euler_round_trip_away_from_gimbal_lock() {
        let mut rng = rng();
        for _ in 0..200 {
            let r = Rotation::from_euler(
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.1..PI - 0.1),
                rng.gen_range(0.0..TAU),
            );
            let (p, t, q) = r.euler_angles();
            assert!(Rotation::from_euler(p, t, q).distance(&r) < 1e-10);
        }
        // degenerate cases fold into phi
        let (p, t, q) = Rotation::from_euler(0.4, 0.0, 0.3).euler_angles();
        assert_eq!((t, q), (0.0, 0.0));
        assert_abs_diff_eq!(p, 0.7, epsilon = 1e-12);
        let r = Rotation::from_euler(0.4, PI, 0.3);
        let (p, t, q) = r.euler_angles();
        assert_eq!((t, q), (PI, 0.0));
        assert!(Rotation::from_euler(p, t, q).distance(&r) < 1e-10);
    }

    #[test]
    fn azimuthal_apply_shifts_phi() {
        let r = Rotation::about_z(0.3);
        let p = r.apply(SphericalPoint::new(1.0, 6.2));
        assert_abs_diff_eq!(p.theta(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.phi(), wrap_azimuth(6.5), epsilon = 1e-12);
    }

    #[test]
    fn axis_is_fixed_and_isometry() {
        let mut rng = rng();
        for _ in 0..100 {
            let r = Rotation::random(&mut rng);
            let (axis, _) = r.axis_angle();
            let n = SphericalPoint::from_cartesian(axis).unwrap();
            let m = r.apply(n);
            assert!(geom::angle_between(m.to_cartesian(), axis) < 1e-7);
            let u = SphericalPoint::new(rng.gen_range(0.0..PI), rng.gen_range(0.0..TAU));
            let v = SphericalPoint::new(rng.gen_range(0.0..PI), rng.gen_range(0.0..TAU));
            let before = geom::dot(u.to_cartesian(), v.to_cartesian()).clamp(-1.0, 1.0).acos();
            let after = geom::dot(r.apply(u).to_cartesian(), r.apply(v).to_cartesian())
                .clamp(-1.0, 1.0)
                .acos();
            assert_abs_diff_eq!(before, after, epsilon = 1e-7);
            let ab = geom::angle_between(u.to_cartesian(), v.to_cartesian());
            let aa = geom::angle_between(r.apply(u).to_cartesian(), r.apply(v).to_cartesian());
            assert_abs_diff_eq!(ab, aa, epsilon = 1e-12);
        }
    }

    #[test]
    fn x_axis_rotation_moves_pole_by_beta() {
        for beta in [0.1, 1.0, 2.5] {
            let r = Rotation::from_axis_angle([1.0, 0.0, 0.0], beta).unwrap();
            let p = r.apply(SphericalPoint::NORTH).to_cartesian();
            assert_abs_diff_eq!(p[2], beta.cos(), epsilon = 1e-14);
        }
        assert!(Rotation::from_axis_angle([0.0; 3], 1.0).is_err());
    }

    #[test]
    fn shortest_arc_properties() {
        assert!(Rotation::shortest_arc(SphericalPoint::NORTH).distance(&Rotation::identity()) < 1e-15);
        let e = SphericalPoint::new(PI / 2.0, 0.0);
        let r = Rotation::shortest_arc(e);
        let back = r.apply(SphericalPoint::NORTH);
        assert!(geom::angle_between(back.to_cartesian(), e.to_cartesian()) < 1e-12);
        let (axis, angle) = r.axis_angle();
        assert_abs_diff_eq!(angle, PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(axis[1], 1.0, epsilon = 1e-12);

        let s = Rotation::shortest_arc(SphericalPoint::SOUTH);
        assert_abs_diff_eq!(s.angle(), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(s.axis_angle().0[0].abs(), 1.0, epsilon = 1e-12);

        let mut rng = rng();
        for _ in 0..1000 {
            let u = SphericalPoint::new(rng.gen_range(0.0..PI), rng.gen_range(0.0..TAU));
            let r = Rotation::shortest_arc(u);
            let v = u.to_cartesian();
            assert_abs_diff_eq!(r.angle(), v[2].clamp(-1.0, 1.0).acos(), epsilon = 1e-7);
            assert_abs_diff_eq!(r.angle(), u.theta(), epsilon = 1e-12);
            let img = r.apply(SphericalPoint::NORTH).to_cartesian();
            assert!(geom::angle_between(img, v) < 1e-12);
        }
    }

    #[test]
    fn rotate_signal_identity_and_roll() {
        let g = EquiangularGrid::square(16);
        let x = SphericalSignal::from_fn(g, 2, |f, p| p.theta().cos() * (f as f64 + 1.0) + p.phi().sin());
        assert_eq!(rotate_signal(&x, &Rotation::identity()), x);
        let r = Rotation::about_z(3.0 * g.d_phi());
        assert_eq!(rotate_signal(&x, &r), x.roll_phi(3));
        assert!(rotate_signal(&x, &r).norm() == x.norm());
    }

    #[test]
    fn haar_weights_normalized() {
        let q = So3Quadrature::new(8, 8, 8).unwrap();
        let total: f64 = q.nodes().map(|n| n.weight).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.integrate(|_| 1.0), 1.0, epsilon = 1e-12);
        assert!(q.nodes().all(|n| n.weight > 0.0));
        let ratio = q.theta_weight(1) / q.theta_weight(0);
        assert_abs_diff_eq!(ratio, q.theta(1).sin() / q.theta(0).sin(), epsilon = 1e-12);
        assert!(So3Quadrature::new(1, 8, 8).is_err());
    }

    #[test]
    fn haar_integrates_cos_squared() {
        // int cos^2(theta) sin(theta) dtheta / 2 = 1/3
        let q = So3Quadrature::new(32, 8, 8).unwrap();
        assert_abs_diff_eq!(q.integrate(|n| n.theta.cos().powi(2)), 1.0 / 3.0, epsilon = 1e-3);
    }

    #[test]
    fn search_finds_known_rotation() {
        let target = Rotation::from_euler(1.0, 0.8, 2.0);
        let res = minimize_over_rotations(
            &SearchBudget {
                n_phi: 8,
                n_theta: 4,
                n_rho: 8,
                refine_passes: 20,
            },
            &[Rotation::identity()],
            |r| r.distance(&target),
        )
        .unwrap();
        assert!(res.value < 1e-5, "{}", res.value);
    }

    #[test]
    fn json_forms() {
        let r = Rotation::from_euler(0.3, 1.2, 2.2);
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"axis\"") && s.contains("\"euler_zyz\""));
        let back: Rotation = serde_json::from_str(&s).unwrap();
        assert!(back.distance(&r) < 1e-12);
        let e: Rotation = serde_json::from_str(r#"{"euler_zyz":[0.3,1.2,2.2]}"#).unwrap();
        assert!(e.distance(&r) < 1e-12);
        let a: Rotation = serde_json::from_str(r#"{"axis":[0,0,2],"beta":0.5}"#).unwrap();
        assert!(a.distance(&Rotation::about_z(0.5)) < 1e-15);
        assert!(serde_json::from_str::<Rotation>(r#"{"beta":0.5}"#).is_err());
    }
}
