//! Spherical convolution over SO(3).
//!
//! For a filter `h: S² -> R` and a signal `x`,
//!
//! ```text
//! y(u) = ∫_SO(3) h(r⁻¹ ∘ u) x(r ∘ u0) dr
//! ```
//!
//! with `u0` the north pole and `dr` the normalized Haar measure.
//! [`conv_direct`] evaluates this literally on a [`So3Quadrature`].
//! [`conv_zonal`] integrates out the last Euler angle first: writing
//! `r = Rz(phi) Ry(theta) Rz(rho)`, `r⁻¹ ∘ u` sweeps a latitude circle whose
//! polar angle is the angle between `u` and `(theta, phi)`, so the `rho` sum
//! collapses into a one-dimensional [`ZonalProfile`]. On grids whose azimuth
//! count matches the quadrature, the remaining `phi` sum is a circular
//! correlation and is evaluated row by row.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::so3::{mat_vec, So3Quadrature};
use crate::sphere::{sample_plane, EquiangularGrid, SphericalPoint, SphericalSignal};

/// One Gaussian bump `a exp(-|u - c|² / (2 s²))` in Euclidean R³ distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    #[serde(rename = "a")]
    pub amplitude: f64,
    #[serde(rename = "c")]
    pub center: Vec3,
    #[serde(rename = "s")]
    pub width: f64,
}

/// A filter `h: S² -> R`.
#[derive(Debug, Clone, PartialEq)]
pub enum Filter {
    /// Sum of Gaussian bumps with a closed-form Lipschitz constant.
    Parametric { components: Vec<GaussianComponent> },
    /// `h ≡ value`.
    Constant { value: f64 },
    /// Tabulated on a grid and evaluated by bilinear interpolation.
    Gridded { signal: SphericalSignal },
}

impl Filter {
    /// Validates widths and normalizes the centers onto the sphere.
    pub fn parametric(components: Vec<GaussianComponent>) -> Result<Self> {
        let mut out = Vec::with_capacity(components.len());
        for (k, c) in components.into_iter().enumerate() {
            if !(c.width > 0.0 && c.width.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "component {k}: width must be positive and finite, got {}",
                    c.width
                )));
            }
            if !c.amplitude.is_finite() {
                return Err(Error::InvalidArgument(format!("component {k}: amplitude is not finite")));
            }
            // already-unit centers are kept bitwise so that JSON round-trips
            let n2 = geom::dot(c.center, c.center);
            let center = if (n2 - 1.0).abs() <= 4.0 * f64::EPSILON {
                c.center
            } else {
                geom::normalize(c.center).ok_or(Error::ZeroVector)?
            };
            out.push(GaussianComponent { center, ..c });
        }
        Ok(Filter::Parametric { components: out })
    }

    pub fn constant(value: f64) -> Self {
        Filter::Constant { value }
    }

    pub fn zero() -> Self {
        Filter::Constant { value: 0.0 }
    }

    /// Uses feature 0 of `signal`.
    pub fn gridded(signal: SphericalSignal) -> Result<Self> {
        if signal.n_features() != 1 {
            return Err(Error::FeatureMismatch {
                expected: 1,
                got: signal.n_features(),
            });
        }
        Ok(Filter::Gridded { signal })
    }

    /// Zonal Gaussian centred on the north pole.
    pub fn zonal_gaussian(amplitude: f64, width: f64) -> Result<Self> {
        Self::parametric(vec![GaussianComponent {
            amplitude,
            center: [0.0, 0.0, 1.0],
            width,
        }])
    }

    /// `h(v)` for a unit vector `v`.
    #[inline]
    pub fn eval(&self, v: Vec3) -> f64 {
        match self {
            Filter::Parametric { components } => components
                .iter()
                .map(|c| {
                    // |v - c|² = 2 - 2 v.c on the unit sphere
                    c.amplitude * ((geom::dot(v, c.center) - 1.0) / (c.width * c.width)).exp()
                })
                .sum(),
            Filter::Constant { value } => *value,
            Filter::Gridded { signal } => {
                let p = SphericalPoint::from_unit(v);
                sample_plane(signal.values(), signal.grid(), p.theta(), p.phi())
            }
        }
    }

    pub fn eval_at(&self, p: SphericalPoint) -> f64 {
        self.eval(p.to_cartesian())
    }

    /// A constant `C` with `|h(u)| <= C` and
    /// `|h(u1) - h(u2)| <= C |u1 - u2|` for all points.
    ///
    /// Parametric: `max(sum |a|, sum |a| / (s sqrt(e)))`, since a Gaussian
    /// profile `a exp(-t² / 2s²)` has maximal slope `|a| / (s sqrt(e))`.
    /// Gridded: 1.5 times the larger of the maximal node magnitude and the
    /// maximal difference quotient over adjacent nodes; this is an estimate.
    pub fn lipschitz_constant(&self) -> f64 {
        match self {
            Filter::Parametric { components } => {
                let mag: f64 = components.iter().map(|c| c.amplitude.abs()).sum();
                let slope: f64 = components
                    .iter()
                    .map(|c| c.amplitude.abs() / (c.width * std::f64::consts::E.sqrt()))
                    .sum();
                mag.max(slope)
            }
            Filter::Constant { value } => value.abs(),
            Filter::Gridded { signal } => 1.5 * gridded_lipschitz_estimate(signal),
        }
    }

    /// Multiplies the filter by `s`.
    pub fn scaled(&self, s: f64) -> Filter {
        match self {
            Filter::Parametric { components } => Filter::Parametric {
                components: components
                    .iter()
                    .map(|c| GaussianComponent {
                        amplitude: c.amplitude * s,
                        ..*c
                    })
                    .collect(),
            },
            Filter::Constant { value } => Filter::Constant { value: value * s },
            Filter::Gridded { signal } => Filter::Gridded {
                signal: signal.scaled(s),
            },
        }
    }
}

fn gridded_lipschitz_estimate(signal: &SphericalSignal) -> f64 {
    let g = signal.grid();
    let nodes = g.cartesian_nodes();
    let v = signal.feature(0);
    let n_phi = g.n_phi();
    let mut best = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut quotient = |a: usize, b: usize| {
        let d = geom::norm(geom::sub(nodes[a], nodes[b]));
        if d > 0.0 {
            best = best.max((v[a] - v[b]).abs() / d);
        }
    };
    for i in 0..g.n_theta() {
        for j in 0..n_phi {
            let k = i * n_phi + j;
            quotient(k, i * n_phi + (j + 1) % n_phi);
            if i + 1 < g.n_theta() {
                quotient(k, k + n_phi);
            }
        }
    }
    best
}

/// An `F x G` array of filters; `filter(f, g)` maps input feature `f` into
/// output feature `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    in_features: usize,
    out_features: usize,
    filters: Vec<Filter>,
}

impl FilterBank {
    /// `filters` in `f`-major order (`filters[f * G + g]`).
    pub fn new(in_features: usize, out_features: usize, filters: Vec<Filter>) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::InvalidArgument("filter bank needs F, G >= 1".into()));
        }
        if filters.len() != in_features * out_features {
            return Err(Error::InvalidArgument(format!(
                "filter bank {in_features}x{out_features} needs {} filters, got {}",
                in_features * out_features,
                filters.len()
            )));
        }
        Ok(Self {
            in_features,
            out_features,
            filters,
        })
    }

    pub fn single(h: Filter) -> Self {
        Self {
            in_features: 1,
            out_features: 1,
            filters: vec![h],
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn filter(&self, f: usize, g: usize) -> &Filter {
        &self.filters[f * self.out_features + g]
    }

    pub fn filter_mut(&mut self, f: usize, g: usize) -> &mut Filter {
        &mut self.filters[f * self.out_features + g]
    }

    pub fn filters(&self) -> &[Filter] {
        &self.filters
    }

    /// Largest certified constant over the member filters.
    pub fn lipschitz_constant(&self) -> f64 {
        self.filters
            .iter()
            .map(Filter::lipschitz_constant)
            .fold(0.0, f64::max)
    }

    /// Per-filter Lipschitz bound on the output norm:
    /// `sum_g sum_f C(h^fg) ||x^f||`.
    pub fn norm_bound(&self, x: &SphericalSignal) -> Result<f64> {
        self.check_input(x)?;
        let norms: Vec<f64> = (0..self.in_features).map(|f| x.feature_norm(f)).collect();
        let mut total = 0.0;
        for g in 0..self.out_features {
            for (f, n) in norms.iter().enumerate() {
                total += self.filter(f, g).lipschitz_constant() * n;
            }
        }
        Ok(total)
    }

    fn check_input(&self, x: &SphericalSignal) -> Result<()> {
        if x.n_features() != self.in_features {
            return Err(Error::FeatureMismatch {
                expected: self.in_features,
                got: x.n_features(),
            });
        }
        Ok(())
    }
}

/// Convolution algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Literal quadrature over all three Euler angles.
    Direct,
    /// Collapsed `rho` integral with a tabulated zonal profile.
    #[default]
    Zonal,
    /// Collapsed `rho` integral, profile evaluated exactly at every use.
    ZonalExact,
}

impl std::str::FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Kernel::Direct),
            "zonal" => Ok(Kernel::Zonal),
            "zonal_exact" | "zonal-exact" => Ok(Kernel::ZonalExact),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel {other:?} (expected direct, zonal or zonal-exact)"
            ))),
        }
    }
}

fn check_single(x: &SphericalSignal) -> Result<()> {
    if x.n_features() != 1 {
        return Err(Error::FeatureMismatch {
            expected: 1,
            got: x.n_features(),
        });
    }
    Ok(())
}

/// Reference kernel:
/// `y(u) = sum_nodes w h(r⁻¹ ∘ u) x(r ∘ u0)` over every quadrature node.
pub fn conv_direct(h: &Filter, x: &SphericalSignal, q: &So3Quadrature) -> Result<SphericalSignal> {
    check_single(x)?;
    let nodes: Vec<([[f64; 3]; 3], f64, f64)> = q
        .nodes()
        .map(|n| {
            let r = n.rotation();
            let xv = x.sample(r.apply(SphericalPoint::NORTH), 0);
            (r.inverse().matrix(), n.weight, xv)
        })
        .collect();
    let grid = x.grid();
    let values: Vec<f64> = grid
        .cartesian_nodes()
        .into_par_iter()
        .map(|u| {
            let mut acc = 0.0;
            for (m, w, xv) in &nodes {
                acc += w * h.eval(mat_vec(m, u)) * xv;
            }
            acc
        })
        .collect();
    SphericalSignal::from_values(grid, 1, values)
}

/// Azimuthal average of a filter on the `rho` nodes of a quadrature:
/// `hbar(gamma) = (1/n_rho) sum_c h(gamma, rho_c)`.
#[derive(Debug, Clone)]
pub struct ZonalProfile<'a> {
    filter: &'a Filter,
    rho: Vec<(f64, f64)>,
}

impl<'a> ZonalProfile<'a> {
    /// Value at polar angle `gamma`.
    pub fn eval(&self, gamma: f64) -> f64 {
        let (s, c) = gamma.sin_cos();
        self.eval_sin_cos(s, c)
    }

    /// Value at `cos(gamma) = t`.
    #[inline]
    pub fn eval_cos(&self, t: f64) -> f64 {
        let t = t.clamp(-1.0, 1.0);
        self.eval_sin_cos((1.0 - t * t).max(0.0).sqrt(), t)
    }

    #[inline]
    fn eval_sin_cos(&self, s: f64, c: f64) -> f64 {
        let mut acc = 0.0;
        for &(sr, cr) in &self.rho {
            acc += self.filter.eval([s * cr, s * sr, c]);
        }
        acc / self.rho.len() as f64
    }

    /// `n` samples `(gamma, hbar(gamma))` evenly spaced over `[0, pi]`.
    pub fn tabulate(&self, n: usize) -> Vec<(f64, f64)> {
        let n = n.max(2);
        (0..n)
            .map(|k| {
                let g = PI * k as f64 / (n - 1) as f64;
                (g, self.eval(g))
            })
            .collect()
    }
}

/// The `rho`-collapsed filter for `q`, built from the same `rho` nodes.
pub fn zonal_profile<'a>(h: &'a Filter, q: &So3Quadrature) -> ZonalProfile<'a> {
    ZonalProfile {
        filter: h,
        rho: (0..q.n_rho()).map(|c| q.rho(c).sin_cos()).collect(),
    }
}

/// Number of intervals of the uniform `cos(gamma)` table used by
/// [`Kernel::Zonal`].
const PROFILE_TABLE_INTERVALS: usize = 4096;

/// The profile on a uniform grid in `t = cos(gamma)`, evaluated with
/// four-point Lagrange interpolation.
struct ProfileTable {
    values: Vec<f64>,
    step: f64,
}

impl ProfileTable {
    fn new(p: &ZonalProfile<'_>, intervals: usize) -> Self {
        let step = 2.0 / intervals as f64;
        let values = (0..=intervals)
            .into_par_iter()
            .map(|k| p.eval_cos(-1.0 + k as f64 * step))
            .collect();
        Self { values, step }
    }

    #[inline]
    fn eval(&self, t: f64) -> f64 {
        let last = self.values.len() - 1;
        let s = ((t + 1.0) / self.step).clamp(0.0, last as f64);
        let k = (s.floor() as usize).clamp(1, last - 2);
        let u = s - k as f64;
        let (a, b, c, d) = (
            self.values[k - 1],
            self.values[k],
            self.values[k + 1],
            self.values[k + 2],
        );
        // Lagrange basis on nodes -1, 0, 1, 2
        let um1 = u - 1.0;
        let um2 = u - 2.0;
        let up1 = u + 1.0;
        -a * u * um1 * um2 / 6.0 + b * up1 * um1 * um2 / 2.0 - c * up1 * u * um2 / 2.0
            + d * up1 * u * um1 / 6.0
    }
}

/// Shared geometry of the collapsed kernel for one (grid, quadrature) pair.
struct ZonalPlan {
    grid: EquiangularGrid,
    /// `(cos, sin)` of output rows.
    rows: Vec<(f64, f64)>,
    /// `(cos, sin)` of quadrature `theta` nodes.
    qrows: Vec<(f64, f64)>,
    /// `theta` weight of each quadrature row divided by `n_phi` of the quadrature.
    qweights: Vec<f64>,
    qphi: Vec<f64>,
    /// Circulant layout available (`n_phi` of grid and quadrature agree).
    circulant: bool,
    /// `cos((k - 1/2) dphi)` for the circulant offsets.
    lag_cos: Vec<f64>,
}

impl ZonalPlan {
    fn new(grid: EquiangularGrid, q: &So3Quadrature) -> Self {
        let n = grid.n_phi();
        let circulant = q.n_phi() == n;
        Self {
            grid,
            rows: (0..grid.n_theta()).map(|i| { let (s, c) = grid.theta(i).sin_cos(); (c, s) }).collect(),
            qrows: (0..q.n_theta()).map(|a| { let (s, c) = q.theta(a).sin_cos(); (c, s) }).collect(),
            qweights: (0..q.n_theta())
                .map(|a| q.theta_weight(a) / q.n_phi() as f64)
                .collect(),
            qphi: (0..q.n_phi()).map(|b| q.phi(b)).collect(),
            circulant,
            lag_cos: if circulant {
                (0..n)
                    .map(|k| ((k as f64 - 0.5) * TAU / n as f64).cos())
                    .collect()
            } else {
                Vec::new()
            },
        }
    }

    /// The input sampled at the quadrature points `(theta_a, phi_b)`.
    fn sample_inputs(&self, x: &SphericalSignal, f: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.qrows.len() * self.qphi.len());
        for (a, _) in self.qrows.iter().enumerate() {
            let theta = (a as f64 + 0.5) * PI / self.qrows.len() as f64;
            for &phi in &self.qphi {
                out.push(x.sample(SphericalPoint::new(theta, phi), f));
            }
        }
        out
    }

    /// Circulant kernel in reversed-doubled layout: for output row `i` and
    /// quadrature row `a`, entry `t` of the `2n` block holds
    /// `hbar` at lag `(-t) mod n`, so output `j` is the dot product of
    /// `block[n - j .. 2n - j]` with the quadrature row.
    fn circulant_kernel(&self, hbar: &(dyn Fn(f64) -> f64 + Sync)) -> Vec<f64> {
        let n = self.grid.n_phi();
        let na = self.qrows.len();
        let mut kernel = vec![0.0; self.rows.len() * na * 2 * n];
        kernel
            .par_chunks_mut(na * 2 * n)
            .zip(self.rows.par_iter())
            .for_each(|(block, &(ci, si))| {
                for (a, &(ca, sa)) in self.qrows.iter().enumerate() {
                    let base = &mut block[a * 2 * n..(a + 1) * 2 * n];
                    let mut lag = vec![0.0; n];
                    for (k, l) in lag.iter_mut().enumerate() {
                        *l = hbar(ci * ca + si * sa * self.lag_cos[k]);
                    }
                    for (t, slot) in base.iter_mut().enumerate() {
                        *slot = lag[(n - t % n) % n];
                    }
                }
            });
        kernel
    }

    /// `out += conv` for one filter through the circulant layout.
    fn contract_circulant(&self, kernel: &[f64], xq: &[f64], out: &mut [f64]) {
        let n = self.grid.n_phi();
        let na = self.qrows.len();
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let block = &kernel[i * na * 2 * n..(i + 1) * na * 2 * n];
            for a in 0..na {
                let w = self.qweights[a];
                let kr = &block[a * 2 * n..(a + 1) * 2 * n];
                let xr = &xq[a * n..(a + 1) * n];
                for (j, o) in row.iter_mut().enumerate() {
                    let window = &kr[n - j..2 * n - j];
                    let mut s = 0.0;
                    for (kv, xv) in window.iter().zip(xr) {
                        s += kv * xv;
                    }
                    *o += w * s;
                }
            }
        });
    }

    /// `out += conv` for one filter, pairwise over output and quadrature points.
    fn contract_generic(&self, hbar: &(dyn Fn(f64) -> f64 + Sync), xq: &[f64], out: &mut [f64]) {
        let nodes = self.grid.cartesian_nodes();
        let nb = self.qphi.len();
        let qpts: Vec<Vec3> = self
            .qrows
            .iter()
            .flat_map(|&(c, s)| self.qphi.iter().map(move |&p| [s * p.cos(), s * p.sin(), c]))
            .collect();
        out.par_iter_mut().zip(nodes.par_iter()).for_each(|(o, &u)| {
            let mut acc = 0.0;
            for (a, w) in self.qweights.iter().enumerate() {
                let mut s = 0.0;
                for b in 0..nb {
                    let k = a * nb + b;
                    s += hbar(geom::dot(u, qpts[k])) * xq[k];
                }
                acc += w * s;
            }
            *o += acc;
        });
    }

    fn accumulate(&self, h: &Filter, q: &So3Quadrature, kernel: Kernel, xq: &[f64], out: &mut [f64]) {
        let profile = zonal_profile(h, q);
        let n_evals = if self.circulant {
            self.rows.len() * self.qrows.len() * self.grid.n_phi()
        } else {
            self.grid.len() * self.qrows.len() * self.qphi.len()
        };
        let table = (kernel == Kernel::Zonal
            && n_evals > PROFILE_TABLE_INTERVALS
            && !matches!(h, Filter::Gridded { .. }))
        .then(|| ProfileTable::new(&profile, PROFILE_TABLE_INTERVALS));
        let hbar = |t: f64| match &table {
            Some(tab) => tab.eval(t),
            None => profile.eval_cos(t),
        };
        if self.circulant {
            let k = self.circulant_kernel(&hbar);
            self.contract_circulant(&k, xq, out);
        } else {
            self.contract_generic(&hbar, xq, out);
        }
    }
}

/// Collapsed kernel:
/// `y(u) = sum_(a,b) w'_a hbar(<u, v_ab>) x(theta_a, phi_b)`, with `w'_a` the
/// `sin(theta)` weights marginalized over `rho`. Agrees with
/// [`conv_direct`] on the same quadrature up to the aliasing of the discrete
/// `rho` average and, for [`Kernel::Zonal`], the profile table.
pub fn conv_zonal(h: &Filter, x: &SphericalSignal, q: &So3Quadrature) -> Result<SphericalSignal> {
    conv_zonal_with(h, x, q, Kernel::Zonal)
}

fn conv_zonal_with(
    h: &Filter,
    x: &SphericalSignal,
    q: &So3Quadrature,
    kernel: Kernel,
) -> Result<SphericalSignal> {
    check_single(x)?;
    let plan = ZonalPlan::new(x.grid(), q);
    let xq = plan.sample_inputs(x, 0);
    let mut out = SphericalSignal::zeros(x.grid(), 1);
    plan.accumulate(h, q, kernel, &xq, out.feature_mut(0));
    Ok(out)
}

/// Single-filter convolution with the chosen kernel.
pub fn conv(h: &Filter, x: &SphericalSignal, q: &So3Quadrature, kernel: Kernel) -> Result<SphericalSignal> {
    match kernel {
        Kernel::Direct => conv_direct(h, x, q),
        Kernel::Zonal | Kernel::ZonalExact => conv_zonal_with(h, x, q, kernel),
    }
}

/// `y^g = sum_f h^fg * x^f`.
pub fn conv_bank(
    bank: &FilterBank,
    x: &SphericalSignal,
    q: &So3Quadrature,
    kernel: Kernel,
) -> Result<SphericalSignal> {
    bank.check_input(x)?;
    let grid = x.grid();
    let mut out = SphericalSignal::zeros(grid, bank.out_features());
    match kernel {
        Kernel::Direct => {
            for g in 0..bank.out_features() {
                for f in 0..bank.in_features() {
                    let y = conv_direct(bank.filter(f, g), &x.feature_signal(f), q)?;
                    out.feature_mut(g)
                        .iter_mut()
                        .zip(y.values())
                        .for_each(|(o, v)| *o += v);
                }
            }
        }
        Kernel::Zonal | Kernel::ZonalExact => {
            let plan = ZonalPlan::new(grid, q);
            let inputs: Vec<Vec<f64>> = (0..bank.in_features())
                .map(|f| plan.sample_inputs(x, f))
                .collect();
            for g in 0..bank.out_features() {
                for (f, xq) in inputs.iter().enumerate() {
                    plan.accumulate(bank.filter(f, g), q, kernel, xq, out.feature_mut(g));
                }
            }
        }
    }
    Ok(out)
}

// --- JSON --------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum FilterJson {
    Parametric {
        components: Vec<GaussianComponent>,
    },
    Constant {
        value: f64,
    },
    Gridded {
        n_theta: usize,
        n_phi: usize,
        values: Vec<f64>,
    },
}

impl Serialize for Filter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Filter::Parametric { components } => FilterJson::Parametric {
                components: components.clone(),
            },
            Filter::Constant { value } => FilterJson::Constant { value: *value },
            Filter::Gridded { signal } => FilterJson::Gridded {
                n_theta: signal.grid().n_theta(),
                n_phi: signal.grid().n_phi(),
                values: signal.values().to_vec(),
            },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Filter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match FilterJson::deserialize(d)? {
            FilterJson::Parametric { components } => {
                Filter::parametric(components).map_err(D::Error::custom)
            }
            FilterJson::Constant { value } => Ok(Filter::Constant { value }),
            FilterJson::Gridded {
                n_theta,
                n_phi,
                values,
            } => EquiangularGrid::new(n_theta, n_phi)
                .and_then(|g| SphericalSignal::from_values(g, 1, values))
                .map(|signal| Filter::Gridded { signal })
                .map_err(D::Error::custom),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterBankJson {
    #[serde(rename = "F")]
    f: usize,
    #[serde(rename = "G")]
    g: usize,
    filters: Vec<Vec<Filter>>,
}

impl Serialize for FilterBank {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FilterBankJson {
            f: self.in_features,
            g: self.out_features,
            filters: self
                .filters
                .chunks(self.out_features)
                .map(|row| row.to_vec())
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FilterBank {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = FilterBankJson::deserialize(d)?;
        if j.filters.len() != j.f || j.filters.iter().any(|row| row.len() != j.g) {
            return Err(D::Error::custom(format!(
                "\"filters\" must be an F x G = {} x {} array",
                j.f, j.g
            )));
        }
        FilterBank::new(j.f, j.g, j.filters.into_iter().flatten().collect()).map_err(D::Error::custom)
    }
}
