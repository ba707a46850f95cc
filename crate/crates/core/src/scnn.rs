//! Forward-only spherical CNN.
//!
//! A network is a list of layers `x_l = sigma_l(H_l(x_{l-1}))`, each an
//! [`FilterBank`] followed by a pointwise [`Nonlinearity`]. The grid is kept
//! fixed through the network; there is no pooling between layers.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::conv::{conv_bank, Filter, FilterBank, GaussianComponent, Kernel};
use crate::error::{Error, Result};
use crate::geom;
use crate::so3::So3Quadrature;
use crate::sphere::SphericalSignal;

pub const SCHEMA_VERSION: &str = "scnn_spec_v1";

/// Pointwise nonlinearity with `sigma(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Nonlinearity {
    Relu,
    Abs,
    LeakyRelu { slope: f64 },
    ScaledTanh { gain: f64 },
}

impl Nonlinearity {
    #[inline]
    pub fn apply(&self, a: f64) -> f64 {
        match *self {
            Nonlinearity::Relu => a.max(0.0),
            Nonlinearity::Abs => a.abs(),
            Nonlinearity::LeakyRelu { slope } => {
                if a >= 0.0 {
                    a
                } else {
                    slope * a
                }
            }
            Nonlinearity::ScaledTanh { gain } => gain * a.tanh(),
        }
    }

    /// `C_sigma` with `|sigma(a) - sigma(b)| <= C_sigma |a - b|`.
    pub fn lipschitz_constant(&self) -> f64 {
        match *self {
            Nonlinearity::Relu | Nonlinearity::Abs => 1.0,
            Nonlinearity::LeakyRelu { slope } => slope.abs().max(1.0),
            Nonlinearity::ScaledTanh { gain } => gain.abs(),
        }
    }

    fn validate(&self) -> Result<()> {
        let p = match *self {
            Nonlinearity::LeakyRelu { slope } => slope,
            Nonlinearity::ScaledTanh { gain } => gain,
            _ => 0.0,
        };
        if p.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument("nonlinearity parameter must be finite".into()))
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    /// `relu`, `abs`, `leaky_relu:<slope>` or `scaled_tanh:<gain>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let param = |default: f64| -> Result<f64> {
            arg.map_or(Ok(default), |a| {
                a.parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad nonlinearity parameter {a:?}")))
            })
        };
        let out = match name {
            "relu" => Nonlinearity::Relu,
            "abs" => Nonlinearity::Abs,
            "leaky_relu" => Nonlinearity::LeakyRelu { slope: param(0.01)? },
            "scaled_tanh" => Nonlinearity::ScaledTanh { gain: param(1.0)? },
            other => {
                return Err(Error::InvalidArgument(format!("unknown nonlinearity {other:?}")));
            }
        };
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub bank: FilterBank,
    pub activation: Nonlinearity,
}

/// A validated layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (k, w) in layers.windows(2).enumerate() {
            if w[0].bank.out_features() != w[1].bank.in_features() {
                return Err(Error::InvalidArgument(format!(
                    "layer {} outputs {} features but layer {} expects {}",
                    k + 1,
                    w[0].bank.out_features(),
                    k + 2,
                    w[1].bank.in_features()
                )));
            }
        }
        for l in &layers {
            l.activation.validate()?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `[F_0, F_1, ..., F_L]`.
    pub fn features(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].bank.in_features())
            .chain(self.layers.iter().map(|l| l.bank.out_features()))
            .collect()
    }

    pub fn in_features(&self) -> usize {
        self.layers[0].bank.in_features()
    }

    pub fn out_features(&self) -> usize {
        self.layers[self.layers.len() - 1].bank.out_features()
    }

    /// Largest filter constant in the network.
    pub fn c_h(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.bank.lipschitz_constant())
            .fold(0.0, f64::max)
    }

    /// Largest nonlinearity constant in the network.
    pub fn c_sigma(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.activation.lipschitz_constant())
            .fold(0.0, f64::max)
    }

    /// `max_l F_l` over all layers including the input.
    pub fn max_features(&self) -> usize {
        self.features().into_iter().max().unwrap_or(1)
    }
}

/// Global weighted pooling followed by a linear map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Readout {
    /// One weight per grid node, `(theta, phi)` row-major; `None` is uniform
    /// `1 / N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<Vec<f64>>,
    /// `n_classes` rows of length `F_L`.
    pub linear: Vec<Vec<f64>>,
}

impl Readout {
    pub fn uniform(linear: Vec<Vec<f64>>) -> Self {
        Self {
            pooling: None,
            linear,
        }
    }

    /// `d_f = sum_ij w_ij x^f_ij`.
    pub fn descriptor(&self, x: &SphericalSignal) -> Result<Vec<f64>> {
        let n = x.grid().len();
        if let Some(w) = &self.pooling {
            if w.len() != n {
                return Err(Error::GridMismatch(format!(
                    "pooling has {} weights for {n} grid nodes",
                    w.len()
                )));
            }
        }
        Ok((0..x.n_features())
            .map(|f| {
                let v = x.feature(f);
                match &self.pooling {
                    Some(w) => w.iter().zip(v).map(|(a, b)| a * b).sum(),
                    None => v.iter().sum::<f64>() / n as f64,
                }
            })
            .collect())
    }
}

/// Scores `linear * descriptor(x)`.
pub fn readout(x: &SphericalSignal, r: &Readout) -> Result<Vec<f64>> {
    let d = r.descriptor(x)?;
    r.linear
        .iter()
        .map(|row| {
            if row.len() != d.len() {
                return Err(Error::FeatureMismatch {
                    expected: row.len(),
                    got: d.len(),
                });
            }
            Ok(row.iter().zip(&d).map(|(a, b)| a * b).sum())
        })
        .collect()
}

/// `x_L = Phi(x)`. Aborts with the (1-based) layer index on a non-finite value.
pub fn forward(
    net: &NetworkSpec,
    x: &SphericalSignal,
    q: &So3Quadrature,
    kernel: Kernel,
) -> Result<SphericalSignal> {
    if x.n_features() != net.in_features() {
        return Err(Error::FeatureMismatch {
            expected: net.in_features(),
            got: x.n_features(),
        });
    }
    let mut cur = x.clone();
    for (k, layer) in net.layers.iter().enumerate() {
        let sigma = layer.activation;
        cur = conv_bank(&layer.bank, &cur, q, kernel)?.map(|v| sigma.apply(v));
        if !cur.is_finite() {
            return Err(Error::NonFinite { layer: k + 1 });
        }
    }
    Ok(cur)
}

/// Parameters for [`random_network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomNetworkParams {
    /// `[F_0, ..., F_L]`.
    pub features: Vec<usize>,
    pub target_c_h: f64,
    pub activation: Nonlinearity,
    /// Gaussian widths are drawn from this range.
    #[serde(default = "default_width_range")]
    pub width_range: (f64, f64),
    #[serde(default = "default_max_components")]
    pub max_components: usize,
}

fn default_width_range() -> (f64, f64) {
    (0.6, 1.2)
}

fn default_max_components() -> usize {
    3
}

impl RandomNetworkParams {
    pub fn new(features: Vec<usize>, target_c_h: f64) -> Self {
        Self {
            features,
            target_c_h,
            activation: Nonlinearity::Relu,
            width_range: default_width_range(),
            max_components: default_max_components(),
        }
    }
}

/// A random unit vector, uniform on the sphere.
pub(crate) fn random_direction(rng: &mut impl Rng) -> [f64; 3] {
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

/// Gaussian-mixture filter whose certified constant equals `target`.
pub fn random_filter(rng: &mut impl Rng, target: f64, width_range: (f64, f64), max_components: usize) -> Result<Filter> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidArgument("target C_h must be positive".into()));
    }
    let (lo, hi) = width_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidArgument("bad width range".into()));
    }
    let k = rng.gen_range(1..=max_components.max(1));
    let comps: Vec<GaussianComponent> = (0..k)
        .map(|_| {
            let mut a: f64 = rng.gen_range(-1.0..1.0);
            if a.abs() < 0.05 {
                a = 0.05f64.copysign(a);
            }
            GaussianComponent {
                amplitude: a,
                center: random_direction(rng),
                width: if hi > lo { rng.gen_range(lo..hi) } else { lo },
            }
        })
        .collect();
    let h = Filter::parametric(comps)?;
    Ok(h.scaled(target / h.lipschitz_constant()))
}

/// Seeded random network; every filter has certified constant `target_c_h`.
pub fn random_network(params: &RandomNetworkParams, seed: u64) -> Result<NetworkSpec> {
    let f = &params.features;
    if f.len() < 2 {
        return Err(Error::InvalidArgument(
            "features must list the input and at least one layer".into(),
        ));
    }
    if f.contains(&0) {
        return Err(Error::InvalidArgument("feature counts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(f.len() - 1);
    for w in f.windows(2) {
        let filters = (0..w[0] * w[1])
            .map(|_| random_filter(&mut rng, params.target_c_h, params.width_range, params.max_components))
            .collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            bank: FilterBank::new(w[0], w[1], filters)?,
            activation: params.activation,
        });
    }
    NetworkSpec::new(layers)
}

// --- JSON --------------------------------------------------------------------

/// Serialized network plus optional readout.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub network: NetworkSpec,
    pub readout: Option<Readout>,
}

pub fn network_to_json(net: &NetworkSpec, readout: Option<&Readout>) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("schema".into(), Value::from(SCHEMA_VERSION));
    obj.insert(
        "layers".into(),
        serde_json::to_value(&net.layers).expect("layers serialize"),
    );
    if let Some(r) = readout {
        obj.insert("readout".into(), serde_json::to_value(r).expect("readout serializes"));
    }
    Value::Object(obj)
}

fn schema_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

/// Validates the document structure, reporting the JSON path of the first
/// violation.
pub fn network_from_json(v: &Value) -> Result<SavedModel> {
    let obj = v
        .as_object()
        .ok_or_else(|| schema_err("$", "expected an object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "schema" | "layers" | "readout") {
            return Err(schema_err(format!("$.{key}"), "unknown key"));
        }
    }
    match obj.get("schema") {
        None => return Err(schema_err("$.schema", "missing key \"schema\"")),
        Some(Value::String(s)) if s == SCHEMA_VERSION => {}
        Some(other) => {
            return Err(schema_err(
                "$.schema",
                format!("expected \"{SCHEMA_VERSION}\", got {other}"),
            ))
        }
    }
    let layers = obj
        .get("layers")
        .ok_or_else(|| schema_err("$.layers", "missing key \"layers\""))?
        .as_array()
        .ok_or_else(|| schema_err("$.layers", "expected an array"))?;
    let mut parsed = Vec::with_capacity(layers.len());
    for (k, l) in layers.iter().enumerate() {
        let lo = l
            .as_object()
            .ok_or_else(|| schema_err(format!("$.layers[{k}]"), "expected an object"))?;
        for key in ["bank", "activation"] {
            if !lo.contains_key(key) {
                return Err(schema_err(
                    format!("$.layers[{k}].{key}"),
                    format!("missing key \"{key}\""),
                ));
            }
        }
        if let Some(extra) = lo.keys().find(|k| !matches!(k.as_str(), "bank" | "activation")) {
            return Err(schema_err(format!("$.layers[{k}].{extra}"), "unknown key"));
        }
        let bank = parse_bank(&lo["bank"], &format!("$.layers[{k}].bank"))?;
        let activation: Nonlinearity = serde_json::from_value(lo["activation"].clone())
            .map_err(|e| schema_err(format!("$.layers[{k}].activation"), e.to_string()))?;
        parsed.push(Layer { bank, activation });
    }
    let network = NetworkSpec::new(parsed).map_err(|e| schema_err("$.layers", e.to_string()))?;
    let readout = match obj.get("readout") {
        None | Some(Value::Null) => None,
        Some(r) => {
            let r: Readout = serde_json::from_value(r.clone())
                .map_err(|e| schema_err("$.readout", e.to_string()))?;
            for (c, row) in r.linear.iter().enumerate() {
                if row.len() != network.out_features() {
                    return Err(schema_err(
                        format!("$.readout.linear[{c}]"),
                        format!(
                            "expected {} entries (network output features), got {}",
                            network.out_features(),
                            row.len()
                        ),
                    ));
                }
            }
            Some(r)
        }
    };
    Ok(SavedModel { network, readout })
}

fn parse_bank(v: &Value, path: &str) -> Result<FilterBank> {
    let o = v
        .as_object()
        .ok_or_else(|| schema_err(path, "expected an object"))?;
    for key in ["F", "G", "filters"] {
        if !o.contains_key(key) {
            return Err(schema_err(format!("{path}.{key}"), format!("missing key \"{key}\"")));
        }
    }
    let rows = o["filters"]
        .as_array()
        .ok_or_else(|| schema_err(format!("{path}.filters"), "expected an array"))?;
    for (f, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| schema_err(format!("{path}.filters[{f}]"), "expected an array"))?;
        for (g, h) in row.iter().enumerate() {
            serde_json::from_value::<Filter>(h.clone())
                .map_err(|e| schema_err(format!("{path}.filters[{f}][{g}]"), e.to_string()))?;
        }
    }
    serde_json::from_value(v.clone()).map_err(|e| schema_err(path, e.to_string()))
}

pub fn save_network(path: impl AsRef<Path>, net: &NetworkSpec, readout: Option<&Readout>) -> Result<()> {
    let text = serde_json::to_string_pretty(&network_to_json(net, readout)).expect("json");
    fs::write(path, text)?;
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<SavedModel> {
    let text = fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| {
        schema_err(format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    network_from_json(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::EquiangularGrid;

    #[test]
    fn nonlinearity_constants_and_zero() {
        let all = [
            Nonlinearity::Relu,
            Nonlinearity::Abs,
            Nonlinearity::LeakyRelu { slope: 0.2 },
            Nonlinearity::LeakyRelu { slope: -3.0 },
            Nonlinearity::ScaledTanh { gain: 2.5 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in all {
            assert_eq!(s.apply(0.0), 0.0);
            let c = s.lipschitz_constant();
            for _ in 0..2000 {
                let (a, b): (f64, f64) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
                let slack = 1e-14 * (1.0 + s.apply(a).abs() + s.apply(b).abs());
                assert!((s.apply(a) - s.apply(b)).abs() <= c * (a - b).abs() + slack);
            }
        }
        assert_eq!(Nonlinearity::LeakyRelu { slope: -3.0 }.lipschitz_constant(), 3.0);
        assert_eq!("leaky_relu:0.1".parse::<Nonlinearity>().unwrap(), Nonlinearity::LeakyRelu { slope: 0.1 });
        assert!("gelu".parse::<Nonlinearity>().is_err());
    }

    fn constant_net(c: f64) -> NetworkSpec {
        NetworkSpec::new(vec![Layer {
            bank: FilterBank::single(Filter::constant(c)),
            activation: Nonlinearity::Relu,
        }])
        .unwrap()
    }

    #[test]
    fn constant_filter_network() {
        let g = EquiangularGrid::square(8);
        let q = So3Quadrature::for_grid(&g).unwrap();
        let one = SphericalSignal::constant(g, 1, 1.0);
        for c in [0.6, -0.4] {
            let y = forward(&constant_net(c), &one, &q, Kernel::Zonal).unwrap();
            assert!(y.values().iter().all(|v| (v - c.max(0.0)).abs() < 1e-12));
        }
        let net = random_network(&RandomNetworkParams::new(vec![1, 3, 2], 1.0), 4).unwrap();
        let z = forward(&net, &SphericalSignal::zeros(g, 1), &q, Kernel::Zonal).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
        assert!(matches!(
            forward(&net, &SphericalSignal::zeros(g, 2), &q, Kernel::Zonal),
            Err(Error::FeatureMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_reports_layer() {
        let g = EquiangularGrid::square(4);
        let q = So3Quadrature::for_grid(&g).unwrap();
        let net = NetworkSpec::new(vec![
            Layer {
                bank: FilterBank::single(Filter::constant(1.0)),
                activation: Nonlinearity::Relu,
            },
            Layer {
                bank: FilterBank::single(Filter::constant(1e300)),
                activation: Nonlinearity::Relu,
            },
        ])
        .unwrap();
        let x = SphericalSignal::constant(g, 1, 1e300);
        assert!(matches!(
            forward(&net, &x, &q, Kernel::Zonal),
            Err(Error::NonFinite { layer: 2 })
        ));
    }

    #[test]
    fn mismatched_layers_rejected() {
        let r = NetworkSpec::new(vec![
            Layer {
                bank: FilterBank::new(1, 2, vec![Filter::zero(), Filter::zero()]).unwrap(),
                activation: Nonlinearity::Relu,
            },
            Layer {
                bank: FilterBank::single(Filter::zero()),
                activation: Nonlinearity::Relu,
            },
        ]);
        assert!(r.is_err());
        assert!(NetworkSpec::new(vec![]).is_err());
    }

    #[test]
    fn readout_examples() {
        let g = EquiangularGrid::square(6);
        let x = SphericalSignal::stack(&[
            SphericalSignal::constant(g, 1, 2.0),
            SphericalSignal::constant(g, 1, -0.5),
        ])
        .unwrap();
        let r = Readout::uniform(vec![vec![1.0, 0.0], vec![0.5, 2.0]]);
        let d = r.descriptor(&x).unwrap();
        assert!((d[0] - 2.0).abs() < 1e-14 && (d[1] + 0.5).abs() < 1e-14);
        let s = readout(&x, &r).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-14 && (s[1] - 0.0).abs() < 1e-14);
        let zero = Readout::uniform(vec![vec![0.0, 0.0]]);
        assert_eq!(readout(&x, &zero).unwrap(), vec![0.0]);
        assert!(readout(&x, &Readout::uniform(vec![vec![1.0]])).is_err());
        let bad_pool = Readout {
            pooling: Some(vec![1.0; 5]),
            linear: vec![vec![1.0, 1.0]],
        };
        assert!(readout(&x, &bad_pool).is_err());
    }

    #[test]
    fn random_network_constants_and_determinism() {
        let p = RandomNetworkParams::new(vec![1, 4, 4, 8], 0.8);
        let a = random_network(&p, 11).unwrap();
        let b = random_network(&p, 11).unwrap();
        let c = random_network(&p, 12).unwrap();
        assert_eq!(
            serde_json::to_string(&network_to_json(&a, None)).unwrap(),
            serde_json::to_string(&network_to_json(&b, None)).unwrap()
        );
        assert_ne!(a, c);
        for l in a.layers() {
            for h in l.bank.filters() {
                assert!((h.lipschitz_constant() - 0.8).abs() <= 1e-12);
            }
        }
        assert_eq!(a.features(), vec![1, 4, 4, 8]);
        assert_eq!(a.max_features(), 8);
        assert_eq!(a.depth(), 3);
    }

    #[test]
    fn save_load_round_trip_and_forward() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = random_network(&RandomNetworkParams::new(vec![1, 2, 3], 1.0), 5).unwrap();
        let ro = Readout::uniform(vec![vec![1.0, -1.0, 0.5]]);
        save_network(&path, &net, Some(&ro)).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(back.network, net);
        assert_eq!(back.readout.as_ref(), Some(&ro));

        let g = EquiangularGrid::square(8);
        let q = So3Quadrature::for_grid(&g).unwrap();
        let x = SphericalSignal::from_fn(g, 1, |_, p| p.theta().cos() + 0.3 * p.phi().sin());
        let y1 = forward(&net, &x, &q, Kernel::Zonal).unwrap();
        let y2 = forward(&back.network, &x, &q, Kernel::Zonal).unwrap();
        assert!(y1.values().iter().zip(y2.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn schema_errors_name_the_path() {
        let missing = serde_json::json!({"schema": SCHEMA_VERSION});
        match network_from_json(&missing) {
            Err(Error::Schema { path, message }) => {
                assert_eq!(path, "$.layers");
                assert!(message.contains("layers"));
            }
            other => panic!("{other:?}"),
        }
        let bad_filter = serde_json::json!({
            "schema": SCHEMA_VERSION,
            "layers": [{
                "bank": {"F": 1, "G": 1, "filters": [[{"type": "parametric", "components": [{"a": 1.0, "c": [0, 0, 1]}]}]]},
                "activation": {"kind": "relu"}
            }]
        });
        match network_from_json(&bad_filter) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "$.layers[0].bank.filters[0][0]"),
            other => panic!("{other:?}"),
        }
        let wrong_version = serde_json::json!({"schema": "v0", "layers": []});
        assert!(matches!(network_from_json(&wrong_version), Err(Error::Schema { path, .. }) if path == "$.schema"));
    }
}
