//! Rotation diffeomorphisms of the sphere.
//!
//! A [`DiffeoField`] stores angular displacements `(tau_theta, tau_phi)` at
//! every grid node; the deformed point is `tau ∘ u = (theta + tau_theta,
//! phi + tau_phi)` and the deformed signal is `x_tau(u) = x(tau ∘ u)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::so3::{minimize_over_rotations, resample, rotate_signal, Rotation, SearchBudget};
use crate::sphere::{wrap_signed, EquiangularGrid, SphericalPoint, SphericalSignal};

/// Per-node angular displacement field.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffeoField {
    grid: EquiangularGrid,
    tau_theta: Vec<f64>,
    tau_phi: Vec<f64>,
}

impl DiffeoField {
    pub fn new(grid: EquiangularGrid, tau_theta: Vec<f64>, tau_phi: Vec<f64>) -> Result<Self> {
        if tau_theta.len() != grid.len() || tau_phi.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "displacement arrays of length {} and {} on a grid of {} nodes",
                tau_theta.len(),
                tau_phi.len(),
                grid.len()
            )));
        }
        if tau_theta.iter().chain(&tau_phi).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("displacement field is not finite".into()));
        }
        Ok(Self {
            grid,
            tau_theta,
            tau_phi,
        })
    }

    pub fn zero(grid: EquiangularGrid) -> Self {
        Self {
            grid,
            tau_theta: vec![0.0; grid.len()],
            tau_phi: vec![0.0; grid.len()],
        }
    }

    /// `tau_theta ≡ 0`, `tau_phi ≡ beta`.
    pub fn azimuthal(grid: EquiangularGrid, beta: f64) -> Self {
        Self {
            grid,
            tau_theta: vec![0.0; grid.len()],
            tau_phi: vec![beta; grid.len()],
        }
    }

    /// The field whose deformed points are the given targets.
    pub fn from_targets(grid: EquiangularGrid, targets: &[SphericalPoint]) -> Result<Self> {
        if targets.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} targets for {} grid nodes",
                targets.len(),
                grid.len()
            )));
        }
        let mut tt = Vec::with_capacity(grid.len());
        let mut tp = Vec::with_capacity(grid.len());
        for (k, p) in targets.iter().enumerate() {
            let u = grid.point(k / grid.n_phi(), k % grid.n_phi());
            tt.push(p.theta() - u.theta());
            tp.push(wrap_signed(p.phi() - u.phi()));
        }
        Self::new(grid, tt, tp)
    }

    /// The field of a global rotation: `tau ∘ u = r ∘ u`.
    pub fn from_rotation(grid: EquiangularGrid, r: &Rotation) -> Self {
        let targets: Vec<SphericalPoint> = grid
            .cartesian_nodes()
            .into_iter()
            .map(|u| SphericalPoint::from_unit(r.rotate_vec(u)))
            .collect();
        Self::from_targets(grid, &targets).expect("rotation targets are finite")
    }

    pub fn grid(&self) -> EquiangularGrid {
        self.grid
    }

    pub fn tau_theta(&self) -> &[f64] {
        &self.tau_theta
    }

    pub fn tau_phi(&self) -> &[f64] {
        &self.tau_phi
    }

    /// Multiplies both channels by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            tau_theta: self.tau_theta.iter().map(|v| v * s).collect(),
            tau_phi: self.tau_phi.iter().map(|v| v * s).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tau_theta.iter().chain(&self.tau_phi).all(|v| *v == 0.0)
    }

    /// Nodes whose deformed polar angle leaves `[0, pi]` and is clamped.
    pub fn clamped_count(&self) -> usize {
        (0..self.grid.len())
            .filter(|&k| {
                let t = self.grid.theta(k / self.grid.n_phi()) + self.tau_theta[k];
                !(0.0..=PI).contains(&t)
            })
            .count()
    }

    /// `tau ∘ u` for node `k` (row-major).
    pub fn target(&self, k: usize) -> SphericalPoint {
        let n = self.grid.n_phi();
        SphericalPoint::new(
            self.grid.theta(k / n) + self.tau_theta[k],
            self.grid.phi(k % n) + self.tau_phi[k],
        )
    }

    /// Largest displacement in each channel, `(max |tau_theta|, max |tau_phi|)`.
    pub fn max_abs(&self) -> (f64, f64) {
        let m = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        (m(&self.tau_theta), m(&self.tau_phi))
    }

    /// Two-feature signal `[tau_theta, tau_phi]`, for the `SSIG1` container.
    pub fn to_signal(&self) -> SphericalSignal {
        let mut values = self.tau_theta.clone();
        values.extend_from_slice(&self.tau_phi);
        SphericalSignal::from_values(self.grid, 2, values).expect("two channels")
    }

    pub fn from_signal(s: &SphericalSignal) -> Result<Self> {
        if s.n_features() != 2 {
            return Err(Error::FeatureMismatch {
                expected: 2,
                got: s.n_features(),
            });
        }
        Self::new(s.grid(), s.feature(0).to_vec(), s.feature(1).to_vec())
    }

    /// Constant azimuthal shift `beta`, if this field is one.
    fn constant_azimuth(&self) -> Option<f64> {
        let beta = self.tau_phi[0];
        (self.tau_theta.iter().all(|v| *v == 0.0) && self.tau_phi.iter().all(|v| *v == beta))
            .then_some(beta)
    }
}

/// `x_tau(u) = x(tau ∘ u)` for every feature. A zero field returns `x`, and a
/// constant azimuthal field is exactly [`rotate_signal`] with the matching z
/// rotation.
pub fn apply_diffeo(x: &SphericalSignal, t: &DiffeoField) -> Result<SphericalSignal> {
    if x.grid() != t.grid {
        return Err(Error::GridMismatch(format!(
            "signal grid {}x{} vs field grid {}x{}",
            x.grid().n_theta(),
            x.grid().n_phi(),
            t.grid.n_theta(),
            t.grid.n_phi()
        )));
    }
    if t.is_zero() {
        return Ok(x.clone());
    }
    if let Some(beta) = t.constant_azimuth() {
        return Ok(rotate_signal(x, &Rotation::about_z(beta)));
    }
    let targets: Vec<SphericalPoint> = (0..t.grid.len()).map(|k| t.target(k)).collect();
    let mut out = resample(x, &targets);
    // untouched nodes keep their exact values
    for k in 0..t.grid.len() {
        if t.tau_theta[k] == 0.0 && t.tau_phi[k] == 0.0 {
            for f in 0..x.n_features() {
                out.feature_mut(f)[k] = x.feature(f)[k];
            }
        }
    }
    Ok(out)
}

/// `tau_u = r_{tau∘u} ∘ r_u⁻¹` at node `(i, j)`, where `r_v` is the shortest
/// arc from the north pole to `v`.
pub fn local_rotation(t: &DiffeoField, i: usize, j: usize) -> Rotation {
    let k = i * t.grid.n_phi() + j;
    if t.tau_theta[k] == 0.0 && t.tau_phi[k] == 0.0 {
        return Rotation::identity();
    }
    local_rotation_to(t.grid.point(i, j), t.target(k).to_cartesian())
}

fn local_rotation_to(u: SphericalPoint, target: Vec3) -> Rotation {
    Rotation::shortest_arc_to(target).compose(&Rotation::shortest_arc(u).inverse())
}

/// `max_u angle(tau_u)`.
pub fn tau_norm(t: &DiffeoField) -> f64 {
    let n = t.grid.n_phi();
    (0..t.grid.len())
        .into_par_iter()
        .map(|k| local_rotation(t, k / n, k % n).angle())
        .reduce(|| 0.0, f64::max)
}

/// `max_u max(|d tau_theta / d theta|, |d tau_phi / d phi|)` by central
/// differences; `phi` wraps (and `tau_phi` differences are reduced into
/// `(-pi, pi]`), `theta` is one-sided on the first and last rows.
pub fn tau_grad_norm(t: &DiffeoField) -> f64 {
    grad_norm(t.grid, &t.tau_theta, &t.tau_phi)
}

fn grad_norm(grid: EquiangularGrid, tt: &[f64], tp: &[f64]) -> f64 {
    let (nt, np) = (grid.n_theta(), grid.n_phi());
    let (dt, dp) = (grid.d_theta(), grid.d_phi());
    (0..nt)
        .into_par_iter()
        .map(|i| {
            let mut m = 0.0f64;
            for j in 0..np {
                let k = i * np + j;
                let d_theta = if nt == 1 {
                    0.0
                } else if i == 0 {
                    (tt[k + np] - tt[k]) / dt
                } else if i == nt - 1 {
                    (tt[k] - tt[k - np]) / dt
                } else {
                    (tt[k + np] - tt[k - np]) / (2.0 * dt)
                };
                let next = i * np + (j + 1) % np;
                let prev = i * np + (j + np - 1) % np;
                let d_phi = wrap_signed(tp[next] - tp[prev]) / (2.0 * dp);
                m = m.max(d_theta.abs()).max(d_phi.abs());
            }
            m
        })
        .reduce(|| 0.0, f64::max)
}

/// Both sizes of the field at once.
pub fn tau_sizes(t: &DiffeoField) -> (f64, f64) {
    (tau_norm(t), tau_grad_norm(t))
}

/// Sizes of a deformation after factoring out a global rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModuloRotation {
    pub tau_norm: f64,
    pub tau_grad_norm: f64,
    /// The rotation `r*` that was factored out.
    pub rotation: Rotation,
    pub evaluations: usize,
}

/// Default search for [`size_modulo_rotations`].
pub const MODULO_ROTATION_BUDGET: SearchBudget = SearchBudget {
    n_phi: 16,
    n_theta: 16,
    n_rho: 16,
    refine_passes: 16,
};

/// Minimizes `max(|r⁻¹ ∘ tau|, |grad(r⁻¹ ∘ tau)|)` over rotations `r`, where
/// `r⁻¹ ∘ tau` is the field `u -> r⁻¹ ∘ (tau ∘ u)`. Candidates whose sizes
/// exceed those of `tau` itself in either component are skipped, so both
/// returned sizes are at most `(tau_norm(t), tau_grad_norm(t))`. The result
/// is an upper bound on the infimum over SO(3).
pub fn size_modulo_rotations(t: &DiffeoField, budget: &SearchBudget) -> Result<ModuloRotation> {
    let grid = t.grid;
    let n = grid.n_phi();
    let targets: Vec<Vec3> = (0..grid.len()).map(|k| t.target(k).to_cartesian()).collect();
    let nodes: Vec<SphericalPoint> = (0..grid.len()).map(|k| grid.point(k / n, k % n)).collect();
    let (n0, g0) = tau_sizes(t);

    let sizes = |r: &Rotation| -> (f64, f64) {
        if *r == Rotation::identity() {
            return (n0, g0);
        }
        let m = r.inverse().matrix();
        let mut tt = Vec::with_capacity(grid.len());
        let mut tp = Vec::with_capacity(grid.len());
        let mut norm = 0.0f64;
        for (u, v) in nodes.iter().zip(&targets) {
            let w = crate::so3::mat_vec(&m, *v);
            let p = SphericalPoint::from_unit(w);
            tt.push(p.theta() - u.theta());
            tp.push(wrap_signed(p.phi() - u.phi()));
            norm = norm.max(local_rotation_to(*u, w).angle());
        }
        (norm, grad_norm(grid, &tt, &tp))
    };
    let res = minimize_over_rotations(budget, &[Rotation::identity()], |r| {
        let (a, b) = sizes(r);
        if a > n0 || b > g0 {
            f64::INFINITY
        } else {
            a.max(b)
        }
    })?;
    let (a, b) = sizes(&res.rotation);
    Ok(ModuloRotation {
        tau_norm: a,
        tau_grad_norm: b,
        rotation: res.rotation,
        evaluations: res.evaluations,
    })
}

/// Options for [`make_smooth_diffeo`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothDiffeoOptions {
    /// Bumps per channel (at most 4).
    pub bumps: usize,
    /// Bump widths are drawn from this range.
    pub width_range: (f64, f64),
}

impl Default for SmoothDiffeoOptions {
    fn default() -> Self {
        Self {
            bumps: 4,
            width_range: (0.5, 1.0),
        }
    }
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n = geom::norm(v);
        if n > 1e-3 && n <= 1.0 {
            return geom::scale(v, 1.0 / n);
        }
    }
}

/// The unscaled random field for `seed`: sums of Gaussian bumps per channel,
/// with `tau_theta` tapered by `sin(theta)` so it vanishes at the poles.
pub fn smooth_field_shape(grid: EquiangularGrid, seed: u64, opts: &SmoothDiffeoOptions) -> Result<DiffeoField> {
    if opts.bumps == 0 || opts.bumps > 4 {
        return Err(Error::InvalidArgument("bumps must be between 1 and 4".into()));
    }
    let (lo, hi) = opts.width_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidArgument("bad width range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut channel = || -> Vec<(f64, Vec3, f64)> {
        (0..opts.bumps)
            .map(|_| {
                let a = rng.gen_range(-1.0..1.0);
                let c = random_unit(&mut rng);
                let s = if hi > lo { rng.gen_range(lo..hi) } else { lo };
                (a, c, s)
            })
            .collect()
    };
    let bt = channel();
    let bp = channel();
    let eval = |b: &[(f64, Vec3, f64)], u: Vec3| -> f64 {
        b.iter()
            .map(|(a, c, s)| a * ((geom::dot(u, *c) - 1.0) / (s * s)).exp())
            .sum()
    };
    let nodes = grid.cartesian_nodes();
    let n = grid.n_phi();
    let tt = nodes
        .iter()
        .enumerate()
        .map(|(k, u)| grid.theta(k / n).sin() * eval(&bt, *u))
        .collect();
    let tp = nodes.iter().map(|u| eval(&bp, *u)).collect();
    DiffeoField::new(grid, tt, tp)
}

const LINEAR_MARGIN: f64 = 1.02;

/// A smooth random field with `tau_norm <= eps` and `tau_grad_norm <= eps`,
/// both verified. The shape depends only on the seed; `eps` sets the scale.
pub fn make_smooth_diffeo(grid: EquiangularGrid, eps: f64, seed: u64) -> Result<DiffeoField> {
    make_smooth_diffeo_with(grid, eps, seed, &SmoothDiffeoOptions::default())
}

pub fn make_smooth_diffeo_with(
    grid: EquiangularGrid,
    eps: f64,
    seed: u64,
    opts: &SmoothDiffeoOptions,
) -> Result<DiffeoField> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::Precondition(format!("eps must be in (0, 0.5], got {eps}")));
    }
    let shape = smooth_field_shape(grid, seed, opts)?;
    // Scale from the sizes of the linearized field (measured at a tiny
    // amplitude), so the scale is proportional to eps; tau_norm is only
    // approximately linear, hence the margin and the shrink fallback.
    let (t0, g0) = tau_sizes(&shape);
    let m = t0.max(g0);
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Rescale(format!("seed {seed} produced a degenerate field")));
    }
    let delta = 1e-6 / m;
    let (tl, gl) = tau_sizes(&shape.scaled(delta));
    let lin = (tl / delta).max(gl / delta);
    if !(lin > 0.0 && lin.is_finite()) {
        return Err(Error::Rescale(format!("seed {seed} produced a degenerate field")));
    }
    let mut s = eps / (LINEAR_MARGIN * lin);
    for _ in 0..60 {
        let f = shape.scaled(s);
        let (t, g) = tau_sizes(&f);
        if t <= eps && g <= eps && f.clamped_count() == 0 {
            return Ok(f);
        }
        s *= 0.98 * (eps / t.max(g)).min(1.0);
    }
    Err(Error::Rescale(format!(
        "could not rescale seed {seed} below eps = {eps}"
    )))
}

/// Degrees to radians.
pub fn deg(d: f64) -> f64 {
    d * PI / 180.0
}

/// Options for the block type (type 4).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeOptions {
    /// Each latitude gets its own block alignment offset in `{0, 1, 2}`
    /// drawn from the seed; otherwise blocks start at index 0.
    pub random_block_offset: bool,
    /// `+1` moves the second sample of a block onto the third; `-1` onto the
    /// first.
    pub direction: f64,
}

impl Default for TypeOptions {
    fn default() -> Self {
        Self {
            random_block_offset: true,
            direction: 1.0,
        }
    }
}

/// The latitude-wise azimuthal perturbations of types 1 to 4:
///
/// 1. even `phi` indices shifted by `U[-3°, 3°]`, odd indices fixed;
/// 2. as type 1 with `U[-6°, 6°]` (same random stream, doubled);
/// 3. every node shifted by `U[-3°, 3°]`;
/// 4. in each block of three samples the second sample's value moves onto
///    the third and the middle is linearly interpolated, i.e. displacements
///    `[0, -dphi/2, -dphi]` per block.
///
/// `tau_theta ≡ 0` throughout.
pub fn make_type(k: u8, grid: EquiangularGrid, seed: u64) -> Result<DiffeoField> {
    make_type_with(k, grid, seed, &TypeOptions::default())
}

pub fn make_type_with(k: u8, grid: EquiangularGrid, seed: u64, opts: &TypeOptions) -> Result<DiffeoField> {
    let (nt, np) = (grid.n_theta(), grid.n_phi());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tp = vec![0.0; grid.len()];
    match k {
        1 | 2 => {
            let amp = if k == 1 { deg(3.0) } else { deg(6.0) };
            for i in 0..nt {
                for j in (0..np).step_by(2) {
                    tp[i * np + j] = amp * rng.gen_range(-1.0..=1.0);
                }
            }
        }
        3 => {
            for v in tp.iter_mut() {
                *v = deg(3.0) * rng.gen_range(-1.0..=1.0);
            }
        }
        4 => {
            if opts.direction.abs() != 1.0 {
                return Err(Error::InvalidArgument("type 4 direction must be +1 or -1".into()));
            }
            let dphi = grid.d_phi();
            let pattern = [0.0, -0.5 * dphi, -dphi];
            for i in 0..nt {
                let offset = if opts.random_block_offset {
                    rng.gen_range(0..3usize)
                } else {
                    0
                };
                for j in 0..np {
                    let pos = (j + 3 - offset) % 3;
                    tp[i * np + j] = opts.direction * pattern[pos];
                }
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "perturbation type must be 1 to 4, got {other}"
            )))
        }
    }
    DiffeoField::new(grid, vec![0.0; grid.len()], tp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn smooth(grid: EquiangularGrid) -> SphericalSignal {
        SphericalSignal::from_fn(grid, 2, |f, p| {
            let u = p.to_cartesian();
            if f == 0 {
                u[0] + 0.5 * u[2] * u[2]
            } else {
                (u[1] - u[2]).exp()
            }
        })
    }

    #[test]
    fn zero_and_constant_cases() {
        let g = EquiangularGrid::square(16);
        let x = smooth(g);
        assert_eq!(apply_diffeo(&x, &DiffeoField::zero(g)).unwrap(), x);
        let c = SphericalSignal::constant(g, 1, 2.5);
        let t = make_type(3, g, 1).unwrap();
        assert!(apply_diffeo(&c, &t).unwrap().values().iter().all(|v| (v - 2.5).abs() < 1e-14));
        let other = EquiangularGrid::square(8);
        assert!(apply_diffeo(&x, &DiffeoField::zero(other)).is_err());
    }

    #[test]
    fn azimuthal_field_matches_rotation() {
        let g = EquiangularGrid::square(16);
        let x = smooth(g);
        for beta in [0.3, g.d_phi() * 3.0, -1.1] {
            let a = apply_diffeo(&x, &DiffeoField::azimuthal(g, beta)).unwrap();
            let b = rotate_signal(&x, &Rotation::about_z(beta));
            assert_eq!(a, b);
            // and agrees with sampling at (theta, phi + beta) directly
            for (k, v) in a.feature(0).iter().enumerate() {
                let p = g.point(k / 16, k % 16);
                let d = x.sample(SphericalPoint::new(p.theta(), p.phi() + beta), 0);
                assert_abs_diff_eq!(*v, d, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn local_rotation_moves_u_to_target() {
        let g = EquiangularGrid::square(12);
        let z = DiffeoField::zero(g);
        assert_eq!(local_rotation(&z, 3, 4), Rotation::identity());
        assert_eq!(tau_sizes(&z), (0.0, 0.0));
        let fields = [
            DiffeoField::azimuthal(g, 0.4),
            make_smooth_diffeo(g, 0.2, 3).unwrap(),
            make_type(4, g, 2).unwrap(),
        ];
        for t in &fields {
            for i in 0..12 {
                for j in 0..12 {
                    let moved = local_rotation(t, i, j).rotate_vec(g.point(i, j).to_cartesian());
                    let want = t.target(i * 12 + j).to_cartesian();
                    assert!(geom::norm(geom::sub(moved, want)) <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradient_examples() {
        let g = EquiangularGrid::square(20);
        assert_eq!(tau_grad_norm(&DiffeoField::azimuthal(g, 0.7)), 0.0);
        let tt: Vec<f64> = (0..g.len()).map(|k| 0.1 * g.theta(k / 20)).collect();
        let lin = DiffeoField::new(g, tt, vec![0.0; g.len()]).unwrap();
        assert_abs_diff_eq!(tau_grad_norm(&lin), 0.1, epsilon = 1e-10);
    }

    #[test]
    fn smooth_fields_meet_eps() {
        let g = EquiangularGrid::square(16);
        for seed in 0..50 {
            let t = make_smooth_diffeo(g, 0.1, seed).unwrap();
            let (a, b) = tau_sizes(&t);
            assert!(a <= 0.1 && b <= 0.1, "seed {seed}: {a} {b}");
            assert!(a.max(b) > 0.09, "seed {seed} far below eps");
            assert_eq!(t, make_smooth_diffeo(g, 0.1, seed).unwrap());
        }
        assert!(matches!(make_smooth_diffeo(g, 0.0, 1), Err(Error::Precondition(_))));
        assert!(matches!(make_smooth_diffeo(g, 0.6, 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn doubling_eps_doubles_the_field() {
        let g = EquiangularGrid::square(16);
        let mut exact = 0;
        for seed in 0..10 {
            let a = make_smooth_diffeo(g, 0.05, seed).unwrap();
            let b = make_smooth_diffeo(g, 0.1, seed).unwrap();
            if b == a.scaled(2.0) {
                exact += 1;
                assert_abs_diff_eq!(tau_grad_norm(&b), 2.0 * tau_grad_norm(&a), epsilon = 1e-12);
                // the rotation angle is not linear in the displacement
                let (ta, tb) = (tau_norm(&a), tau_norm(&b));
                assert!((tb / ta - 2.0).abs() < 0.02, "{ta} {tb}");
            }
        }
        assert!(exact >= 9, "{exact}");
    }

    #[test]
    fn type_fields() {
        let g = EquiangularGrid::new(32, 64).unwrap();
        let t1 = make_type(1, g, 5).unwrap();
        let t2 = make_type(2, g, 5).unwrap();
        assert!(t1.max_abs().1 <= deg(3.0));
        assert_abs_diff_eq!(deg(3.0), 0.05236, epsilon = 1e-5);
        for k in 0..g.len() {
            if (k % 64) % 2 == 1 {
                assert_eq!(t1.tau_phi()[k], 0.0);
            }
            assert_abs_diff_eq!(t2.tau_phi()[k], 2.0 * t1.tau_phi()[k], epsilon = 1e-15);
        }
        assert!(t1.max_abs().1 > 0.9 * deg(3.0));
        let t3 = make_type(3, g, 5).unwrap();
        assert!(t3.tau_phi().iter().all(|v| v.abs() <= deg(3.0)));
        let t4 = make_type(4, g, 5).unwrap();
        assert_abs_diff_eq!(t4.max_abs().1, g.d_phi(), epsilon = 1e-15);
        for t in [&t1, &t2, &t3, &t4] {
            assert_eq!(t.max_abs().0, 0.0);
        }
        assert_eq!(make_type(4, g, 5).unwrap(), t4);
        assert!(make_type(5, g, 5).is_err());
    }

    #[test]
    fn type_four_moves_the_second_sample_onto_the_third() {
        let g = EquiangularGrid::new(4, 12).unwrap();
        let opts = TypeOptions {
            random_block_offset: false,
            direction: 1.0,
        };
        let t = make_type_with(4, g, 0, &opts).unwrap();
        let x = SphericalSignal::from_fn(g, 1, |_, p| p.phi().sin() + 2.0);
        let y = apply_diffeo(&x, &t).unwrap();
        for i in 0..4 {
            for b in 0..4 {
                let j = 3 * b;
                assert_abs_diff_eq!(y.get(0, i, j), x.get(0, i, j), epsilon = 1e-12);
                assert_abs_diff_eq!(y.get(0, i, j + 2), x.get(0, i, j + 1), epsilon = 1e-12);
                let mid = 0.5 * (x.get(0, i, j) + x.get(0, i, j + 1));
                assert_abs_diff_eq!(y.get(0, i, j + 1), mid, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn modulo_rotation_sizes() {
        let g = EquiangularGrid::square(16);
        let z = size_modulo_rotations(&DiffeoField::zero(g), &MODULO_ROTATION_BUDGET).unwrap();
        assert_eq!((z.tau_norm, z.tau_grad_norm), (0.0, 0.0));
        assert_eq!(z.rotation, Rotation::identity());

        let t = make_smooth_diffeo(g, 0.1, 4).unwrap();
        let m = size_modulo_rotations(&t, &MODULO_ROTATION_BUDGET).unwrap();
        let (a, b) = tau_sizes(&t);
        assert!(m.tau_norm <= a && m.tau_grad_norm <= b);
    }

    #[test]
    fn pure_rotation_is_recovered() {
        let g = EquiangularGrid::square(16);
        let r0 = Rotation::from_euler(0.4, 0.7, -0.3);
        let t = DiffeoField::from_rotation(g, &r0);
        let m = size_modulo_rotations(&t, &MODULO_ROTATION_BUDGET).unwrap();
        assert!(m.tau_norm <= 1e-3 && m.tau_grad_norm <= 1e-3, "{m:?}");
        assert!(m.rotation.distance(&r0) < 1e-2);
    }

    #[test]
    fn signal_container_round_trip() {
        let g = EquiangularGrid::square(8);
        let t = make_smooth_diffeo(g, 0.1, 9).unwrap();
        let s = t.to_signal();
        assert_eq!(s.n_features(), 2);
        let bytes = crate::sphere::encode(&s).unwrap();
        let back = DiffeoField::from_signal(&crate::sphere::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
