//! Experiment configuration: JSON files with per-field defaults, overridden
//! by command-line flags.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sphcnn::conv::Kernel;
use sphcnn::metrics::{DEFAULT_MARGIN, DISTANCE_BUDGET};
use sphcnn::scnn::{Nonlinearity, RandomNetworkParams};
use sphcnn::so3::SearchBudget;
use sphcnn::{EquiangularGrid, So3Quadrature};

use crate::CliError;

pub const STABILITY_SCHEMA: &str = "stability_report_v1";
pub const EQUIVARIANCE_SCHEMA: &str = "equivariance_report_v1";
pub const ACCURACY_NOTE: &str = "training out of scope";

/// `N` (square) or `NTxNP`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl GridSpec {
    pub const fn square(n: usize) -> Self {
        Self { n_theta: n, n_phi: n }
    }

    pub fn grid(&self) -> Result<EquiangularGrid, CliError> {
        Ok(EquiangularGrid::new(self.n_theta, self.n_phi)?)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_theta, self.n_phi)
    }
}

impl FromStr for GridSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad grid size {s:?}"));
        match s.split_once(['x', 'X']) {
            Some((a, b)) => Ok(Self {
                n_theta: parse(a)?,
                n_phi: parse(b)?,
            }),
            None => Ok(Self::square(parse(s)?)),
        }
    }
}

impl Serialize for GridSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for GridSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Square(usize),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Square(n) => Ok(Self::square(n)),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// `a,b,c` quadrature resolutions; `None` means the grid default.
pub fn quadrature(grid: &EquiangularGrid, res: Option<[usize; 3]>) -> Result<So3Quadrature, CliError> {
    Ok(match res {
        Some([a, b, c]) => So3Quadrature::new(a, b, c)?,
        None => So3Quadrature::for_grid(grid)?,
    })
}

pub fn parse_triple<T: FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let p = |t: &str| t.parse::<T>().map_err(|_| format!("bad value {t:?} in {s:?}"));
    Ok([p(parts[0])?, p(parts[1])?, p(parts[2])?])
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| format!("bad list entry {t:?}")))
        .collect()
}

/// A random network described by its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub features: Vec<usize>,
    pub target_c_h: f64,
    pub activation: Nonlinearity,
    pub seed: u64,
    /// Gaussian widths in radians; `None` keeps the library default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width_range: Option<(f64, f64)>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            features: vec![1, 4, 4, 8],
            target_c_h: 1.0,
            activation: Nonlinearity::Relu,
            seed: 0,
            width_range: None,
        }
    }
}

impl NetworkConfig {
    pub fn params(&self) -> RandomNetworkParams {
        let mut p = RandomNetworkParams::new(self.features.clone(), self.target_c_h);
        p.activation = self.activation;
        if let Some(w) = self.width_range {
            p.width_range = w;
        }
        p
    }

    /// Short label such as `network(L=2,F=2)`.
    pub fn label(&self) -> String {
        format!(
            "network(L={},F={})",
            self.features.len().saturating_sub(1),
            self.features.iter().max().copied().unwrap_or(0)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub enabled: bool,
    pub target_c_h: f64,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            target_c_h: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypesConfig {
    pub enabled: bool,
    pub kinds: Vec<u8>,
    pub seeds: usize,
    pub seed_offset: u64,
    pub grid: GridSpec,
    pub network: NetworkConfig,
    /// Align type-4 blocks per latitude with a random offset.
    pub random_block_offset: bool,
}

impl Default for TypesConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            kinds: vec![1, 2, 3, 4],
            seeds: 10,
            seed_offset: 0,
            grid: GridSpec {
                n_theta: 32,
                n_phi: 64,
            },
            // Broad filters leave outputs too smooth in phi for the block
            // type's coherent shift to register.
            network: NetworkConfig {
                width_range: Some((0.3, 0.6)),
                ..NetworkConfig::default()
            },
            random_block_offset: true,
        }
    }
}

/// Everything `check-stability` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub grid: GridSpec,
    pub quadrature: Option<[usize; 3]>,
    pub kernel: Kernel,
    pub eps: Vec<f64>,
    pub seeds: usize,
    pub seed_offset: u64,
    /// Gaussian bumps in each input signal.
    pub input_components: usize,
    pub filter: FilterConfig,
    pub networks: Vec<NetworkConfig>,
    pub types: TypesConfig,
    pub margin: f64,
    pub distance_budget: SearchBudget,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::square(32),
            quadrature: None,
            kernel: Kernel::Zonal,
            eps: vec![0.025, 0.05, 0.1],
            seeds: 20,
            seed_offset: 0,
            input_components: 6,
            filter: FilterConfig::default(),
            networks: vec![
                NetworkConfig {
                    features: vec![1, 2, 2],
                    ..NetworkConfig::default()
                },
                NetworkConfig {
                    features: vec![1, 2, 2, 2],
                    ..NetworkConfig::default()
                },
            ],
            types: TypesConfig::default(),
            margin: DEFAULT_MARGIN,
            distance_budget: DISTANCE_BUDGET,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e <= 0.5)) {
            return Err(CliError::validation(format!(
                "eps {e} outside (0, 1/2]: the stability theorems require eps <= 1/2"
            )));
        }
        if self.eps.is_empty() && self.seeds > 0 && (self.filter.enabled || !self.networks.is_empty()) {
            return Err(CliError::validation("eps list is empty"));
        }
        if self.margin.is_nan() || self.margin < 0.0 {
            return Err(CliError::validation("margin must be non-negative"));
        }
        if let Some(k) = self.types.kinds.iter().find(|k| !(1..=4).contains(*k)) {
            return Err(CliError::validation(format!("unknown perturbation type {k}")));
        }
        Ok(())
    }
}

/// Everything `check-equivariance` needs besides the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivarianceConfig {
    pub grid: GridSpec,
    pub quadrature: Option<[usize; 3]>,
    pub kernel: Kernel,
    pub network: NetworkConfig,
    /// Input mixture `(components, seed)` when no input file is given.
    pub input_components: usize,
    pub input_seed: u64,
    /// Rotation angles in degrees about `axis`.
    pub angles_deg: Vec<f64>,
    pub axis: [f64; 3],
    /// Extra rotations as ZYZ Euler triples in radians.
    pub euler: Vec<[f64; 3]>,
    /// Additional uniformly random rotations.
    pub random_rotations: usize,
    pub rotation_seed: u64,
    pub distance: bool,
    pub distance_budget: SearchBudget,
}

impl Default for EquivarianceConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::square(32),
            quadrature: None,
            kernel: Kernel::Zonal,
            network: NetworkConfig::default(),
            input_components: 6,
            input_seed: 0,
            angles_deg: vec![45.0, 90.0, 135.0],
            axis: [0.0, 0.0, 1.0],
            euler: Vec::new(),
            random_rotations: 0,
            rotation_seed: 0,
            distance: true,
            distance_budget: DISTANCE_BUDGET,
        }
    }
}

/// Everything `bench` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub resolutions: Vec<usize>,
    pub pairs: usize,
    pub seed: u64,
    /// Filter widths are drawn from this range.
    pub width_range: (f64, f64),
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![8, 16, 32],
            pairs: 1,
            seed: 0,
            width_range: (0.6, 1.2),
        }
    }
}

/// Reads a JSON config; a missing path gives the defaults.
pub fn load<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}
