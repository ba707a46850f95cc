//! Command-line front end for the `sphcnn` library.

pub mod config;
pub mod experiments;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sphcnn::conv::{conv_bank, FilterBank, Kernel};
use sphcnn::geom::Vec3;
use sphcnn::ingest::{icosphere, load_off, ray_cast_signal, synth_signal, tetrahedron, SynthKind, TriMesh};
use sphcnn::metrics::Operator;
use sphcnn::perturb::{
    apply_diffeo, make_smooth_diffeo, make_type_with, size_modulo_rotations, tau_sizes, TypeOptions,
    MODULO_ROTATION_BUDGET,
};
use sphcnn::scnn::{forward, load_network, network_to_json, random_network, readout, Nonlinearity, Readout};
use sphcnn::sphere::{encode, read_signal, write_signal_csv};
use sphcnn::{rotate_signal, Rotation, SphericalSignal};

use config::{parse_triple, quadrature, BenchConfig, EquivarianceConfig, GridSpec, StabilityConfig};

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub const VALIDATION: i32 = 2;
    pub const NUMERIC: i32 = 3;

    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: Self::VALIDATION,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<sphcnn::Error> for CliError {
    fn from(e: sphcnn::Error) -> Self {
        Self {
            code: if e.is_numeric() { Self::NUMERIC } else { Self::VALIDATION },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::validation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "sphcnn", version, about = "Spherical CNN equivariance and stability toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a spherical signal from a mesh or a synthetic description.
    Ingest(IngestArgs),
    /// Rotate a signal.
    Rotate(RotateArgs),
    /// Deform a signal with a spatial perturbation.
    Perturb(PerturbArgs),
    /// Apply a filter bank.
    Conv(ConvArgs),
    /// Run a saved network.
    Forward(ForwardArgs),
    /// Sample a random network and save it.
    RandomNetwork(RandomNetworkArgs),
    /// Measure equivariance error over a set of rotations.
    CheckEquivariance(EquivarianceArgs),
    /// Compare measured deformation sensitivity with the analytic bounds.
    CheckStability(StabilityArgs),
    /// Time the convolution kernels against each other.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// OFF mesh to ray-cast.
    #[arg(long, conflicts_with_all = ["shape", "synth"])]
    pub off: Option<PathBuf>,
    /// Built-in mesh: `tetrahedron` or `icosphere[:subdivisions]`.
    #[arg(long, conflicts_with = "synth")]
    pub shape: Option<String>,
    /// Synthetic signal, e.g. `zonal_gaussian:0.5` or `gaussian_mixture:6:1`.
    #[arg(long)]
    pub synth: Option<String>,
    /// Ray origin for mesh inputs.
    #[arg(long, default_value = "0,0,0", value_parser = parse_triple::<f64>)]
    pub center: [f64; 3],
    #[arg(long, default_value = "32")]
    pub grid: GridSpec,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write the signal as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write cast statistics as JSON.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RotateArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// ZYZ Euler angles in degrees.
    #[arg(long, value_parser = parse_triple::<f64>, conflicts_with_all = ["axis", "angle"])]
    pub euler: Option<[f64; 3]>,
    #[arg(long, value_parser = parse_triple::<f64>, default_value = "0,0,1")]
    pub axis: [f64; 3],
    /// Angle about `--axis` in degrees.
    #[arg(long)]
    pub angle: Option<f64>,
    /// Apply the inverse rotation.
    #[arg(long)]
    pub inverse: bool,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Structured perturbation type 1-4.
    #[arg(long = "type", conflicts_with = "smooth")]
    pub kind: Option<u8>,
    /// Random smooth field with sizes at most this value.
    #[arg(long)]
    pub smooth: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Type 4 blocks start at phi = 0 on every latitude.
    #[arg(long)]
    pub aligned_blocks: bool,
    /// Write the field itself as a two-feature signal (theta, phi displacement).
    #[arg(long)]
    pub field: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long, default_value = "zonal")]
    pub kernel: Kernel,
    /// SO(3) quadrature resolutions `n_theta,n_phi,n_rho`.
    #[arg(long, value_parser = parse_triple::<usize>)]
    pub quadrature: Option<[usize; 3]>,
}

#[derive(Debug, Args)]
pub struct ConvArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Filter bank JSON.
    #[arg(long)]
    pub filters: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub network: PathBuf,
    /// Write readout scores as JSON; needs a readout in the network file.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[command(flatten)]
    pub kernel: KernelArgs,
}

#[derive(Debug, Args)]
pub struct RandomNetworkArgs {
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value = "1,4,4,8", value_delimiter = ',')]
    pub features: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub target_c_h: f64,
    #[arg(long, default_value = "relu")]
    pub activation: Nonlinearity,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attach a random linear readout with this many classes.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EquivarianceArgs {
    /// JSON config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Network JSON; defaults to the configured random network.
    #[arg(long, conflicts_with = "filters")]
    pub network: Option<PathBuf>,
    /// Test a filter bank instead of a network.
    #[arg(long)]
    pub filters: Option<PathBuf>,
    /// Input signal; defaults to a seeded Gaussian mixture on `--grid`.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<GridSpec>,
    #[arg(long)]
    pub kernel: Option<Kernel>,
    #[arg(long, value_parser = parse_triple::<usize>)]
    pub quadrature: Option<[usize; 3]>,
    /// Angles in degrees about `--axis`.
    #[arg(long, value_delimiter = ',')]
    pub angles: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_triple::<f64>)]
    pub axis: Option<[f64; 3]>,
    #[arg(long)]
    pub random_rotations: Option<usize>,
    /// Skip the rotation-distance search.
    #[arg(long)]
    pub no_distance: bool,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Receives stability.json, stability.csv and diffeo_types.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub grid: Option<GridSpec>,
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub kernel: Option<Kernel>,
    /// Skip the structured perturbation table.
    #[arg(long)]
    pub no_types: bool,
    #[arg(long)]
    pub type_seeds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub resolutions: Option<Vec<usize>>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| CliError::validation(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

fn write_signal_atomic(x: &SphericalSignal, path: &Path) -> Result<(), CliError> {
    write_atomic(path, &encode(x)?)
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn load_signal(path: &Path) -> Result<SphericalSignal, CliError> {
    read_signal(path).map_err(|e| CliError {
        message: format!("{}: {e}", path.display()),
        ..CliError::from(e)
    })
}

fn load_bank(path: &Path) -> Result<FilterBank, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Honours `SPHCNN_THREADS` for the global rayon pool.
pub fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("SPHCNN_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::validation(format!("SPHCNN_THREADS must be a positive integer, got {v:?}")))?;
        // A pool that already exists (tests, repeated calls) is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Rotate(a) => rotate(a),
        Command::Perturb(a) => perturb(a),
        Command::Conv(a) => conv_cmd(a),
        Command::Forward(a) => forward_cmd(a),
        Command::RandomNetwork(a) => random_network_cmd(a),
        Command::CheckEquivariance(a) => check_equivariance(a),
        Command::CheckStability(a) => check_stability(a),
        Command::Bench(a) => bench(a),
    }
}

fn builtin_shape(name: &str) -> Result<TriMesh, CliError> {
    match name.split_once(':') {
        None if name == "tetrahedron" => Ok(tetrahedron()),
        None if name == "icosphere" => Ok(icosphere(2)),
        Some(("icosphere", k)) => {
            let k: usize = k
                .parse()
                .map_err(|_| CliError::validation(format!("bad subdivision count {k:?}")))?;
            Ok(icosphere(k))
        }
        _ => Err(CliError::validation(format!(
            "unknown shape {name:?} (expected tetrahedron or icosphere[:k])"
        ))),
    }
}

fn ingest(a: IngestArgs) -> Result<(), CliError> {
    let grid = a.grid.grid()?;
    let (signal, diagnostics) = if let Some(spec) = &a.synth {
        let kind: SynthKind = spec.parse()?;
        (synth_signal(&kind, grid)?, json!({ "source": "synthetic", "kind": kind }))
    } else {
        let mesh = match (&a.off, &a.shape) {
            (Some(p), _) => load_off(p).map_err(|e| CliError {
                message: format!("{}: {e}", p.display()),
                ..CliError::from(e)
            })?,
            (None, Some(s)) => builtin_shape(s)?,
            (None, None) => return Err(CliError::validation("one of --off, --shape or --synth is required")),
        };
        let (s, report) = ray_cast_signal(&mesh, a.center, grid)?;
        (s, json!({ "source": "mesh", "center": a.center, "cast": report }))
    };
    write_signal_atomic(&signal, &a.output)?;
    if let Some(p) = &a.csv {
        let mut buf = Vec::new();
        write_signal_csv(&signal, &mut buf)?;
        write_atomic(p, &buf)?;
    }
    if let Some(p) = &a.diagnostics {
        write_json(p, &diagnostics)?;
    }
    Ok(())
}

fn rotation_from(euler_deg: Option<[f64; 3]>, axis: Vec3, angle_deg: Option<f64>) -> Result<Rotation, CliError> {
    match (euler_deg, angle_deg) {
        (Some([p, t, r]), _) => Ok(Rotation::from_euler(p.to_radians(), t.to_radians(), r.to_radians())),
        (None, Some(b)) => Ok(Rotation::from_axis_angle(axis, b.to_radians())?),
        (None, None) => Err(CliError::validation("give --euler or --angle")),
    }
}

fn rotate(a: RotateArgs) -> Result<(), CliError> {
    let x = load_signal(&a.input)?;
    let mut r = rotation_from(a.euler, a.axis, a.angle)?;
    if a.inverse {
        r = r.inverse();
    }
    write_signal_atomic(&rotate_signal(&x, &r), &a.output)
}

fn perturb(a: PerturbArgs) -> Result<(), CliError> {
    let x = load_signal(&a.input)?;
    let grid = x.grid();
    let t = match (a.kind, a.smooth) {
        (Some(k), None) => {
            let opts = TypeOptions {
                random_block_offset: !a.aligned_blocks,
                ..TypeOptions::default()
            };
            make_type_with(k, grid, a.seed, &opts)?
        }
        (None, Some(eps)) => make_smooth_diffeo(grid, eps, a.seed)?,
        _ => return Err(CliError::validation("give exactly one of --type or --smooth")),
    };
    write_signal_atomic(&apply_diffeo(&x, &t)?, &a.output)?;
    if let Some(p) = &a.field {
        write_signal_atomic(&t.to_signal(), p)?;
    }
    let (tn, tg) = tau_sizes(&t);
    let m = size_modulo_rotations(&t, &MODULO_ROTATION_BUDGET)?;
    println!(
        "{}",
        json!({
            "tau_norm": tn,
            "tau_grad_norm": tg,
            "modulo_rotations": m,
            "clamped_nodes": t.clamped_count(),
        })
    );
    Ok(())
}

fn conv_cmd(a: ConvArgs) -> Result<(), CliError> {
    let x = load_signal(&a.input)?;
    let bank = load_bank(&a.filters)?;
    let q = quadrature(&x.grid(), a.kernel.quadrature)?;
    let y = conv_bank(&bank, &x, &q, a.kernel.kernel)?;
    write_signal_atomic(&y, &a.output)
}

fn forward_cmd(a: ForwardArgs) -> Result<(), CliError> {
    let x = load_signal(&a.input)?;
    let model = load_network(&a.network).map_err(|e| CliError {
        message: format!("{}: {e}", a.network.display()),
        ..CliError::from(e)
    })?;
    let q = quadrature(&x.grid(), a.kernel.quadrature)?;
    let y = forward(&model.network, &x, &q, a.kernel.kernel)?;
    if let Some(p) = &a.scores {
        let r = model
            .readout
            .as_ref()
            .ok_or_else(|| CliError::validation("--scores needs a network file with a readout"))?;
        let scores = readout(&y, r)?;
        let argmax = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        write_json(p, &json!({ "scores": scores, "argmax": argmax }))?;
    }
    write_signal_atomic(&y, &a.output)
}

fn random_network_cmd(a: RandomNetworkArgs) -> Result<(), CliError> {
    let mut params = sphcnn::scnn::RandomNetworkParams::new(a.features, a.target_c_h);
    params.activation = a.activation;
    let net = random_network(&params, a.seed)?;
    let ro = match a.classes {
        Some(0) => return Err(CliError::validation("--classes must be positive")),
        Some(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x5eed_0fc1_a55e);
            let f = net.out_features();
            let linear = (0..k)
                .map(|_| (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            Some(Readout::uniform(linear))
        }
        None => None,
    };
    write_json(&a.output, &network_to_json(&net, ro.as_ref()))
}

fn check_equivariance(a: EquivarianceArgs) -> Result<(), CliError> {
    let mut cfg: EquivarianceConfig = config::load(a.config.as_deref())?;
    if let Some(g) = a.grid {
        cfg.grid = g;
    }
    if let Some(k) = a.kernel {
        cfg.kernel = k;
    }
    if a.quadrature.is_some() {
        cfg.quadrature = a.quadrature;
    }
    if let Some(v) = a.angles {
        cfg.angles_deg = v;
    }
    if let Some(v) = a.axis {
        cfg.axis = v;
    }
    if let Some(n) = a.random_rotations {
        cfg.random_rotations = n;
    }
    if a.no_distance {
        cfg.distance = false;
    }
    let x = match &a.input {
        Some(p) => load_signal(p)?,
        None => synth_signal(
            &SynthKind::GaussianMixture {
                n: cfg.input_components,
                seed: cfg.input_seed,
            },
            cfg.grid.grid()?,
        )?,
    };
    let grid = x.grid();
    let q = quadrature(&grid, cfg.quadrature)?;
    let rows = if let Some(p) = &a.filters {
        let bank = load_bank(p)?;
        let op = Operator::Filter {
            bank: &bank,
            quadrature: &q,
            kernel: cfg.kernel,
        };
        experiments::run_equivariance(&cfg, &op, &x)?
    } else {
        let net = match &a.network {
            Some(p) => load_network(p)?.network,
            None => experiments::live_network(&cfg.network, std::slice::from_ref(&x), &q, cfg.kernel)?.0,
        };
        let op = Operator::Network {
            net: &net,
            quadrature: &q,
            kernel: cfg.kernel,
        };
        experiments::run_equivariance(&cfg, &op, &x)?
    };
    let csv = experiments::equivariance_csv(&rows, &grid)?;
    match &a.csv {
        Some(p) => write_atomic(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    if let Some(p) = &a.json {
        write_json(p, &experiments::equivariance_json(&rows, &cfg))?;
    }
    Ok(())
}

fn check_stability(a: StabilityArgs) -> Result<(), CliError> {
    let mut cfg: StabilityConfig = config::load(a.config.as_deref())?;
    if let Some(g) = a.grid {
        cfg.grid = g;
    }
    if let Some(e) = a.eps {
        cfg.eps = e;
    }
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(k) = a.kernel {
        cfg.kernel = k;
    }
    if a.no_types {
        cfg.types.enabled = false;
    }
    if let Some(s) = a.type_seeds {
        cfg.types.seeds = s;
    }
    let out = experiments::run_stability(&cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    write_json(&a.out_dir.join("stability.json"), &out.to_json(&cfg))?;
    write_atomic(&a.out_dir.join("stability.csv"), out.stability_csv()?.as_bytes())?;
    write_atomic(&a.out_dir.join("diffeo_types.csv"), out.types_csv()?.as_bytes())?;
    for s in out.summaries.iter().filter(|s| s.trials > 0) {
        println!(
            "{}: {}/{} within bound, median slack {:.3}{}",
            s.operator,
            s.passed,
            s.trials,
            s.median_slack,
            s.max_superlinearity
                .map(|v| format!(", superlinearity {v:.3}"))
                .unwrap_or_default()
        );
    }
    if let Some(t) = &out.types {
        let means: Vec<String> = t.mean_rmse.iter().map(|(k, v)| format!("type {k}: {v:.4}")).collect();
        println!("{}", means.join(", "));
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    let mut cfg: BenchConfig = config::load(a.config.as_deref())?;
    if let Some(r) = a.resolutions {
        cfg.resolutions = r;
    }
    if let Some(p) = a.pairs {
        cfg.pairs = p;
    }
    if cfg.pairs == 0 {
        return Err(CliError::validation("--pairs must be positive"));
    }
    let rows = experiments::run_bench(&cfg)?;
    let csv = experiments::bench_csv(&rows)?;
    match &a.output {
        Some(p) => write_atomic(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}
