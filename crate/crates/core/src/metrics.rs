//! Error metrics, rotation distance and the equivariance and stability
//! evaluators.

use serde::{Deserialize, Serialize};

use crate::conv::{conv_bank, FilterBank, Kernel};
use crate::error::{Error, Result};
use crate::perturb::{apply_diffeo, tau_sizes, DiffeoField};
use crate::scnn::{forward, NetworkSpec};
use crate::so3::{minimize_over_rotations, rotate_signal, Rotation, SearchBudget, So3Quadrature};
use crate::sphere::SphericalSignal;

/// Tolerance for the exact (index roll) equivariance regime.
pub const EXACT_TOLERANCE: f64 = 1e-10;

/// Default PASS margin on the analytic bounds.
pub const DEFAULT_MARGIN: f64 = 0.25;

/// Default search for [`rotation_distance`].
pub const DISTANCE_BUDGET: SearchBudget = SearchBudget {
    n_phi: 24,
    n_theta: 12,
    n_rho: 24,
    refine_passes: 10,
};

/// `||a - b|| / ||a||` with plain node-wise sums over every feature. Returns
/// `+inf` when `a` is zero and `b` is not, and 0 when both are zero.
pub fn relative_rmse(a: &SphericalSignal, b: &SphericalSignal) -> Result<f64> {
    a.check_same_shape(b)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        num += (x - y) * (x - y);
        den += x * x;
    }
    Ok(if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        (num / den).sqrt()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RotationDistance {
    /// Upper bound on `inf_r ||x - y_r||`.
    pub distance: f64,
    pub rotation: Rotation,
    pub evaluations: usize,
}

/// `min_r ||x - rotate_signal(y, r)||` over the identity, every whole-cell
/// azimuthal rotation, a coarse ZYZ grid and local refinement. The result is
/// an upper bound on the infimum.
pub fn rotation_distance(
    x: &SphericalSignal,
    y: &SphericalSignal,
    budget: &SearchBudget,
) -> Result<RotationDistance> {
    x.check_same_shape(y)?;
    let grid = x.grid();
    let seeds: Vec<Rotation> = (0..grid.n_phi())
        .map(|k| {
            if k == 0 {
                Rotation::identity()
            } else {
                Rotation::about_z(k as f64 * grid.d_phi())
            }
        })
        .collect();
    let res = minimize_over_rotations(budget, &seeds, |r| {
        let yr = rotate_signal(y, r);
        x.sub(&yr).expect("same shape").norm()
    })?;
    Ok(RotationDistance {
        distance: res.value,
        rotation: res.rotation,
        evaluations: res.evaluations,
    })
}

/// An operator under test: one filter bank or a whole network.
#[derive(Debug, Clone, Copy)]
pub enum Operator<'a> {
    Filter {
        bank: &'a FilterBank,
        quadrature: &'a So3Quadrature,
        kernel: Kernel,
    },
    Network {
        net: &'a NetworkSpec,
        quadrature: &'a So3Quadrature,
        kernel: Kernel,
    },
}

impl Operator<'_> {
    pub fn apply(&self, x: &SphericalSignal) -> Result<SphericalSignal> {
        match *self {
            Operator::Filter {
                bank,
                quadrature,
                kernel,
            } => conv_bank(bank, x, quadrature, kernel),
            Operator::Network {
                net,
                quadrature,
                kernel,
            } => forward(net, x, quadrature, kernel),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivarianceReport {
    /// `relative_rmse(rotate(op(x), r), op(rotate(x, r)))`.
    pub relative_rmse: f64,
    /// Rotation distance between the two paths, when requested.
    pub rotation_distance: Option<f64>,
    /// Whether `r` is a whole-cell azimuthal rotation of the grid.
    pub exact_regime: bool,
    /// In the exact regime, whether the error is within [`EXACT_TOLERANCE`].
    pub exact_ok: Option<bool>,
}

/// Compares `rotate(op(x), r)` with `op(rotate(x, r))`.
pub fn equivariance_report(
    op: &Operator<'_>,
    x: &SphericalSignal,
    r: &Rotation,
    distance_budget: Option<&SearchBudget>,
) -> Result<EquivarianceReport> {
    let reference = rotate_signal(&op.apply(x)?, r);
    let other = op.apply(&rotate_signal(x, r))?;
    equivariance_from_outputs(&reference, &other, r, distance_budget)
}

/// As [`equivariance_report`] with `op(x)` already computed.
pub fn equivariance_report_with_output(
    op: &Operator<'_>,
    x: &SphericalSignal,
    op_x: &SphericalSignal,
    r: &Rotation,
    distance_budget: Option<&SearchBudget>,
) -> Result<EquivarianceReport> {
    let reference = rotate_signal(op_x, r);
    let other = op.apply(&rotate_signal(x, r))?;
    equivariance_from_outputs(&reference, &other, r, distance_budget)
}

fn equivariance_from_outputs(
    reference: &SphericalSignal,
    other: &SphericalSignal,
    r: &Rotation,
    distance_budget: Option<&SearchBudget>,
) -> Result<EquivarianceReport> {
    let e = relative_rmse(reference, other)?;
    let exact_regime = r.azimuthal_cells(&reference.grid()).is_some();
    let rotation_distance = match distance_budget {
        Some(b) => Some(rotation_distance(reference, other, b)?.distance),
        None => None,
    };
    Ok(EquivarianceReport {
        relative_rmse: e,
        rotation_distance,
        exact_regime,
        exact_ok: exact_regime.then_some(e <= EXACT_TOLERANCE),
    })
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be finite and non-negative, got {v}")))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    check_nonneg("eps", eps)?;
    if eps > 0.5 {
        return Err(Error::Precondition(format!("eps must be at most 1/2, got {eps}")));
    }
    Ok(())
}

/// `8 C_h eps ||x||`.
pub fn bound_thm1(c_h: f64, eps: f64, norm_x: f64) -> Result<f64> {
    check_eps(eps)?;
    check_nonneg("C_h", c_h)?;
    check_nonneg("||x||", norm_x)?;
    Ok(8.0 * c_h * eps * norm_x)
}

/// `8 (C_sigma C_h)^L F^(L-1) eps ||x||`.
pub fn bound_thm2(c_h: f64, c_sigma: f64, depth: usize, features: usize, eps: f64, norm_x: f64) -> Result<f64> {
    check_eps(eps)?;
    check_nonneg("C_h", c_h)?;
    check_nonneg("C_sigma", c_sigma)?;
    check_nonneg("||x||", norm_x)?;
    if depth == 0 || features == 0 {
        return Err(Error::InvalidArgument("L and F must be at least 1".into()));
    }
    Ok(8.0 * (c_sigma * c_h).powi(depth as i32) * (features as f64).powi(depth as i32 - 1) * eps * norm_x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Filter,
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub epsilon: f64,
    /// Upper bound on the rotation distance between `op(x)` and `op(x_tau)`.
    pub measured_distance: f64,
    pub analytic_bound: f64,
    pub bound_kind: BoundKind,
    /// `analytic_bound / measured_distance`.
    pub slack_factor: f64,
    pub margin: f64,
    pub pass: bool,
    pub c_h: f64,
    pub c_sigma: f64,
    pub depth: usize,
    pub features: usize,
    pub norm_x: f64,
    pub tau_norm: f64,
    pub tau_grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub margin: f64,
    pub distance_budget: SearchBudget,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            distance_budget: DISTANCE_BUDGET,
        }
    }
}

/// Measures `d(op(x), op(x_tau))` and compares it with the filter bound
/// (single-filter operators) or the network bound. The field must satisfy
/// `tau_norm <= eps` and `tau_grad_norm <= eps`; since the identity is an
/// admissible rotation, this implies the same for the sizes modulo
/// rotations.
pub fn stability_report(
    op: &Operator<'_>,
    x: &SphericalSignal,
    t: &DiffeoField,
    eps: f64,
    opts: &StabilityOptions,
) -> Result<StabilityReport> {
    let op_x = op.apply(x)?;
    stability_report_with_output(op, x, &op_x, t, eps, opts)
}

/// As [`stability_report`] with `op(x)` already computed.
pub fn stability_report_with_output(
    op: &Operator<'_>,
    x: &SphericalSignal,
    op_x: &SphericalSignal,
    t: &DiffeoField,
    eps: f64,
    opts: &StabilityOptions,
) -> Result<StabilityReport> {
    check_eps(eps)?;
    check_nonneg("margin", opts.margin)?;
    let (tn, tg) = tau_sizes(t);
    if tn > eps || tg > eps {
        return Err(Error::Precondition(format!(
            "field sizes ({tn:.3e}, {tg:.3e}) exceed eps = {eps}"
        )));
    }
    let norm_x = x.norm();
    let (bound_kind, c_h, c_sigma, depth, features, analytic_bound) = match *op {
        Operator::Filter { bank, .. } => {
            if bank.in_features() != 1 || bank.out_features() != 1 {
                return Err(Error::InvalidArgument(
                    "the filter bound applies to a single filter (1x1 bank)".into(),
                ));
            }
            let c = bank.lipschitz_constant();
            (BoundKind::Filter, c, 1.0, 1, 1, bound_thm1(c, eps, norm_x)?)
        }
        Operator::Network { net, .. } => {
            let (c, s, l, f) = (net.c_h(), net.c_sigma(), net.depth(), net.max_features());
            (BoundKind::Network, c, s, l, f, bound_thm2(c, s, l, f, eps, norm_x)?)
        }
    };
    let deformed = op.apply(&apply_diffeo(x, t)?)?;
    let measured = rotation_distance(op_x, &deformed, &opts.distance_budget)?.distance;
    let slack_factor = if measured > 0.0 {
        analytic_bound / measured
    } else {
        f64::INFINITY
    };
    Ok(StabilityReport {
        epsilon: eps,
        measured_distance: measured,
        analytic_bound,
        bound_kind,
        slack_factor,
        margin: opts.margin,
        pass: measured <= analytic_bound * (1.0 + opts.margin),
        c_h,
        c_sigma,
        depth,
        features,
        norm_x,
        tau_norm: tn,
        tau_grad_norm: tg,
    })
}

/// Least-squares fit `m ≈ a eps + b eps²` (no intercept) and the share of
/// the fitted value at the largest `eps` carried by a positive quadratic
/// term. Zero means no superlinear growth.
pub fn superlinearity(eps: &[f64], measured: &[f64]) -> Result<f64> {
    if eps.len() != measured.len() || eps.len() < 2 {
        return Err(Error::InvalidArgument("need at least two (eps, value) pairs".into()));
    }
    let (mut s2, mut s3, mut s4, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&e, &m) in eps.iter().zip(measured) {
        s2 += e * e;
        s3 += e * e * e;
        s4 += e * e * e * e;
        y1 += e * m;
        y2 += e * e * m;
    }
    let det = s2 * s4 - s3 * s3;
    if det.abs() <= 1e-300 {
        return Err(Error::InvalidArgument("eps values must be distinct and non-zero".into()));
    }
    let a = (y1 * s4 - y2 * s3) / det;
    let b = (s2 * y2 - s3 * y1) / det;
    let e = eps.iter().cloned().fold(0.0, f64::max);
    let fit = a * e + b * e * e;
    Ok(if fit > 0.0 { b.max(0.0) * e * e / fit } else { 0.0 })
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
