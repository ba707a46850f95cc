//! Points on the unit sphere, equiangular sampling grids and multi-feature
//! signals defined on them.
//!
//! Grids are cell-centred in the polar angle, so no sample sits on a pole,
//! and uniform with wraparound in the azimuth. A [`SphericalSignal`] stores
//! `F` features on one grid in `(feature, theta, phi)` row-major order.

mod io;

pub use io::{decode, encode, read_signal, write_signal, write_signal_csv, MAGIC};

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// A point on S² in polar (`theta`, from +z) and azimuthal (`phi`) angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPoint {
    theta: f64,
    phi: f64,
}

impl SphericalPoint {
    /// Canonicalizes the angles: `theta` is clamped into `[0, pi]`, `phi` is
    /// reduced into `[0, 2pi)`, and the azimuth of either pole is set to 0.
    pub fn new(theta: f64, phi: f64) -> Self {
        let theta = theta.clamp(0.0, PI);
        let phi = if theta == 0.0 || theta == PI {
            0.0
        } else {
            wrap_azimuth(phi)
        };
        Self { theta, phi }
    }

    pub const NORTH: SphericalPoint = SphericalPoint {
        theta: 0.0,
        phi: 0.0,
    };

    pub const SOUTH: SphericalPoint = SphericalPoint { theta: PI, phi: 0.0 };

    #[inline]
    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// `[sin t cos p, sin t sin p, cos t]`.
    #[inline]
    pub fn to_cartesian(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    /// Inverse of [`to_cartesian`](Self::to_cartesian). The input is
    /// renormalized; a zero or non-finite vector is rejected.
    pub fn from_cartesian(v: Vec3) -> Result<Self> {
        let n = crate::geom::norm(v);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::ZeroVector);
        }
        Ok(Self::from_unit(v))
    }

    /// Same as [`from_cartesian`](Self::from_cartesian) without the zero
    /// check. `v` must be nonzero; its length does not matter.
    #[inline]
    pub(crate) fn from_unit(v: Vec3) -> Self {
        let rho = v[0].hypot(v[1]);
        let theta = rho.atan2(v[2]);
        let phi = if rho == 0.0 {
            0.0
        } else {
            wrap_azimuth(v[1].atan2(v[0]))
        };
        Self { theta, phi }
    }
}

/// Reduces an azimuth into `[0, 2pi)`.
#[inline]
pub fn wrap_azimuth(phi: f64) -> f64 {
    let p = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2pi for tiny negative inputs
    if p >= TAU {
        0.0
    } else {
        p
    }
}

/// Reduces an angle difference into `(-pi, pi]`.
#[inline]
pub fn wrap_signed(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Equiangular grid: `theta_i = (i + 1/2) pi / n_theta`,
/// `phi_j = j 2pi / n_phi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EquiangularGrid {
    n_theta: usize,
    n_phi: usize,
}

impl EquiangularGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid resolution must be positive, got {n_theta}x{n_phi}"
            )));
        }
        Ok(Self { n_theta, n_phi })
    }

    /// Square `n x n` grid. Panics on `n == 0`.
    pub fn square(n: usize) -> Self {
        Self::new(n, n).expect("grid resolution must be positive")
    }

    #[inline]
    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    #[inline]
    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn d_theta(&self) -> f64 {
        PI / self.n_theta as f64
    }

    #[inline]
    pub fn d_phi(&self) -> f64 {
        TAU / self.n_phi as f64
    }

    #[inline]
    pub fn theta(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.d_theta()
    }

    #[inline]
    pub fn phi(&self, j: usize) -> f64 {
        j as f64 * self.d_phi()
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> SphericalPoint {
        SphericalPoint {
            theta: self.theta(i),
            phi: self.phi(j),
        }
    }

    /// Cartesian coordinates of every node in `(theta, phi)` row-major order.
    pub fn cartesian_nodes(&self) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.n_theta {
            for j in 0..self.n_phi {
                out.push(self.point(i, j).to_cartesian());
            }
        }
        out
    }
}

/// A multi-feature real field sampled on an [`EquiangularGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalSignal {
    grid: EquiangularGrid,
    n_features: usize,
    values: Vec<f64>,
}

impl SphericalSignal {
    pub fn zeros(grid: EquiangularGrid, n_features: usize) -> Self {
        Self {
            grid,
            n_features,
            values: vec![0.0; n_features * grid.len()],
        }
    }

    pub fn constant(grid: EquiangularGrid, n_features: usize, c: f64) -> Self {
        Self {
            grid,
            n_features,
            values: vec![c; n_features * grid.len()],
        }
    }

    /// Wraps a value array in `(feature, theta, phi)` order. Rejects a
    /// length mismatch, zero features and non-finite entries.
    pub fn from_values(grid: EquiangularGrid, n_features: usize, values: Vec<f64>) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::InvalidArgument("a signal needs at least one feature".into()));
        }
        if values.len() != n_features * grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for {} feature(s) on a {}x{} grid, got {}",
                n_features * grid.len(),
                n_features,
                grid.n_theta(),
                grid.n_phi(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at flat index {k}")));
        }
        Ok(Self {
            grid,
            n_features,
            values,
        })
    }

    /// Evaluates `f(feature, theta, phi)` at every node.
    pub fn from_fn(
        grid: EquiangularGrid,
        n_features: usize,
        mut f: impl FnMut(usize, SphericalPoint) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(n_features * grid.len());
        for k in 0..n_features {
            for i in 0..grid.n_theta() {
                for j in 0..grid.n_phi() {
                    values.push(f(k, grid.point(i, j)));
                }
            }
        }
        Self {
            grid,
            n_features,
            values,
        }
    }

    /// Stacks single-or-multi-feature signals on the same grid.
    pub fn stack(parts: &[SphericalSignal]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero signals".into()))?;
        let mut values = Vec::new();
        let mut n_features = 0;
        for p in parts {
            if p.grid != first.grid {
                return Err(Error::GridMismatch("stacked signals use different grids".into()));
            }
            values.extend_from_slice(&p.values);
            n_features += p.n_features;
        }
        Ok(Self {
            grid: first.grid,
            n_features,
            values,
        })
    }

    #[inline]
    pub fn grid(&self) -> EquiangularGrid {
        self.grid
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Values of feature `f` in `(theta, phi)` row-major order.
    #[inline]
    pub fn feature(&self, f: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[f * n..(f + 1) * n]
    }

    #[inline]
    pub fn feature_mut(&mut self, f: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.values[f * n..(f + 1) * n]
    }

    /// Copy of feature `f` as a single-feature signal.
    pub fn feature_signal(&self, f: usize) -> SphericalSignal {
        SphericalSignal {
            grid: self.grid,
            n_features: 1,
            values: self.feature(f).to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, f: usize, i: usize, j: usize) -> f64 {
        self.values[(f * self.grid.n_theta + i) * self.grid.n_phi + j]
    }

    #[inline]
    pub fn set(&mut self, f: usize, i: usize, j: usize, v: f64) {
        let idx = (f * self.grid.n_theta + i) * self.grid.n_phi + j;
        self.values[idx] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bilinear interpolation of feature `f` at `p`, wrapping in `phi`.
    /// Above the first and below the last `theta` row the boundary row is
    /// used as is.
    #[inline]
    pub fn sample(&self, p: SphericalPoint, f: usize) -> f64 {
        sample_plane(self.feature(f), self.grid, p.theta, p.phi)
    }

    /// Normalized spherical norm: per feature
    /// `||x^f||^2 = (1 / 2pi^2) sum x^2 dtheta dphi` over the grid, summed
    /// over features. The measure is `dtheta dphi` without a `sin(theta)`
    /// weight, so the per-feature value is the root mean square of the nodes.
    pub fn norm(&self) -> f64 {
        (0..self.n_features).map(|f| self.feature_norm(f)).sum()
    }

    pub fn feature_norm(&self, f: usize) -> f64 {
        let cell = self.grid.d_theta() * self.grid.d_phi();
        let ss = compensated_sum(self.feature(f).iter().map(|v| v * v));
        (ss * cell / (2.0 * PI * PI)).sqrt()
    }

    /// Rolls every row by `k` azimuth cells: `out[.., j] = self[.., j + k]`.
    pub fn roll_phi(&self, k: isize) -> SphericalSignal {
        let n_phi = self.grid.n_phi;
        let shift = k.rem_euclid(n_phi as isize) as usize;
        let mut out = self.clone();
        for (dst, src) in out
            .values
            .chunks_exact_mut(n_phi)
            .zip(self.values.chunks_exact(n_phi))
        {
            dst[..n_phi - shift].copy_from_slice(&src[shift..]);
            dst[n_phi - shift..].copy_from_slice(&src[..shift]);
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SphericalSignal {
        SphericalSignal {
            grid: self.grid,
            n_features: self.n_features,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> SphericalSignal {
        self.map(|v| v * s)
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &SphericalSignal, b: f64) -> Result<SphericalSignal> {
        self.check_same_shape(other)?;
        Ok(SphericalSignal {
            grid: self.grid,
            n_features: self.n_features,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn sub(&self, other: &SphericalSignal) -> Result<SphericalSignal> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn add(&self, other: &SphericalSignal) -> Result<SphericalSignal> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn check_same_shape(&self, other: &SphericalSignal) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{}x{} vs {}x{}",
                self.grid.n_theta, self.grid.n_phi, other.grid.n_theta, other.grid.n_phi
            )));
        }
        if self.n_features != other.n_features {
            return Err(Error::FeatureMismatch {
                expected: self.n_features,
                got: other.n_features,
            });
        }
        Ok(())
    }
}

/// Bilinear sample of one feature plane, shared with gridded filters.
#[inline]
pub(crate) fn sample_plane(plane: &[f64], grid: EquiangularGrid, theta: f64, phi: f64) -> f64 {
    let n_theta = grid.n_theta;
    let n_phi = grid.n_phi;

    let t = theta / grid.d_theta() - 0.5;
    let (i0, i1, wt) = if t <= 0.0 {
        (0, 0, 0.0)
    } else if t >= (n_theta - 1) as f64 {
        (n_theta - 1, n_theta - 1, 0.0)
    } else {
        let i0 = t.floor() as usize;
        (i0, (i0 + 1).min(n_theta - 1), t - i0 as f64)
    };

    let s = wrap_azimuth(phi) / grid.d_phi();
    let j0f = s.floor();
    let wp = s - j0f;
    let j0 = (j0f as usize) % n_phi;
    let j1 = (j0 + 1) % n_phi;

    let r0 = &plane[i0 * n_phi..(i0 + 1) * n_phi];
    let r1 = &plane[i1 * n_phi..(i1 + 1) * n_phi];
    let a = r0[j0] + wp * (r0[j1] - r0[j0]);
    let b = r1[j0] + wp * (r1[j1] - r1[j0]);
    a + wt * (b - a)
}

/// Neumaier-compensated sum in iteration order.
pub(crate) fn compensated_sum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in it {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cartesian_examples() {
        let n = SphericalPoint::new(0.0, 0.0).to_cartesian();
        assert_abs_diff_eq!(n[2], 1.0, epsilon = 1e-15);
        let e = SphericalPoint::new(PI / 2.0, 0.0).to_cartesian();
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e[2], 0.0, epsilon = 1e-15);
        let y = SphericalPoint::new(PI / 2.0, PI / 2.0).to_cartesian();
        assert_abs_diff_eq!(y[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn from_cartesian_poles_and_axes() {
        let s = SphericalPoint::from_cartesian([0.0, 0.0, -1.0]).unwrap();
        assert_eq!(s.theta(), PI);
        assert_eq!(s.phi(), 0.0);
        let x = SphericalPoint::from_cartesian([1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(x.theta(), PI / 2.0, epsilon = 1e-15);
        assert_eq!(x.phi(), 0.0);
        assert!(matches!(
            SphericalPoint::from_cartesian([0.0, 0.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn canonicalization() {
        let p = SphericalPoint::new(1.0, -0.5);
        assert_abs_diff_eq!(p.phi(), TAU - 0.5, epsilon = 1e-15);
        let q = SphericalPoint::new(1.0, 7.0 * PI);
        assert_abs_diff_eq!(q.phi(), PI, epsilon = 1e-12);
        assert_eq!(SphericalPoint::new(PI, 1.3).phi(), 0.0);
        assert_eq!(SphericalPoint::new(0.0, 1.3).phi(), 0.0);
        assert!(wrap_azimuth(-1e-300) < TAU);
    }

    #[test]
    fn cartesian_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let theta = rng.gen_range(1e-6..PI - 1e-6);
            let phi = rng.gen_range(0.0..TAU);
            let p = SphericalPoint::new(theta, phi);
            let v = p.to_cartesian();
            assert_abs_diff_eq!(crate::geom::norm(v), 1.0, epsilon = 1e-14);
            let q = SphericalPoint::from_cartesian(v).unwrap();
            worst = worst.max(crate::geom::angle_between(v, q.to_cartesian()));
            if theta > 1e-3 && theta < PI - 1e-3 {
                assert_abs_diff_eq!(q.theta(), theta, epsilon = 1e-12);
                assert_abs_diff_eq!(wrap_signed(q.phi() - phi), 0.0, epsilon = 1e-12);
            }
        }
        assert!(worst < 1e-10, "max angular error {worst}");
    }

    #[test]
    fn grid_is_cell_centred() {
        let g = EquiangularGrid::new(8, 16).unwrap();
        assert!(g.theta(0) > 0.0 && g.theta(7) < PI);
        assert_abs_diff_eq!(g.d_theta() * g.d_phi(), (PI / 8.0) * (TAU / 16.0), epsilon = 1e-15);
        assert!(EquiangularGrid::new(0, 4).is_err());
    }

    #[test]
    fn sample_constant_and_nodes() {
        let g = EquiangularGrid::new(10, 14).unwrap();
        let c = SphericalSignal::constant(g, 1, 2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = SphericalPoint::new(rng.gen_range(0.0..PI), rng.gen_range(0.0..TAU));
            assert_abs_diff_eq!(c.sample(p, 0), 2.5, epsilon = 1e-14);
        }
        let x = SphericalSignal::from_fn(g, 2, |f, p| (f as f64 + 1.0) * p.theta().cos() + p.phi().sin());
        for f in 0..2 {
            for i in 0..10 {
                for j in 0..14 {
                    assert_abs_diff_eq!(x.sample(g.point(i, j), f), x.get(f, i, j), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn sample_matches_smooth_field() {
        let g = EquiangularGrid::square(64);
        let x = SphericalSignal::from_fn(g, 1, |_, p| p.theta().cos());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst = 0.0f64;
        for _ in 0..500 {
            let p = SphericalPoint::new(rng.gen_range(0.0..PI), rng.gen_range(0.0..TAU));
            worst = worst.max((x.sample(p, 0) - p.theta().cos()).abs());
        }
        assert!(worst <= 5e-3, "max error {worst}");
    }

    #[test]
    fn sample_is_continuous_across_seam() {
        let g = EquiangularGrid::new(12, 20).unwrap();
        let x = SphericalSignal::from_fn(g, 1, |_, p| (3.0 * p.phi()).cos() * p.theta().sin() + p.phi());
        for i in 0..12 {
            let th = g.theta(i) + 0.01;
            let below = x.sample(SphericalPoint::new(th, TAU - 1e-15), 0);
            let above = x.sample(SphericalPoint::new(th, 0.0), 0);
            assert!((below - above).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_examples() {
        let g = EquiangularGrid::square(64);
        assert_abs_diff_eq!(SphericalSignal::constant(g, 1, 1.0).norm(), 1.0, epsilon = 1e-12);
        assert_eq!(SphericalSignal::zeros(g, 1).norm(), 0.0);
        let c = SphericalSignal::from_fn(g, 1, |_, p| p.theta().cos());
        assert_abs_diff_eq!(c.norm(), 0.5f64.sqrt(), epsilon = 1e-3);
        // multi-feature norm is the sum of feature norms
        let two = SphericalSignal::from_fn(g, 2, |f, _| if f == 0 { 1.0 } else { -2.0 });
        assert_abs_diff_eq!(two.norm(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn roll_matches_index_shift() {
        let g = EquiangularGrid::new(4, 6).unwrap();
        let x = SphericalSignal::from_fn(g, 1, |_, p| p.phi() + 10.0 * p.theta());
        let r = x.roll_phi(2);
        for i in 0..4 {
            for j in 0..6 {
                assert_eq!(r.get(0, i, j), x.get(0, i, (j + 2) % 6));
            }
        }
        assert_eq!(x.roll_phi(-4), r);
    }
}
