use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latqpt::channels::{
    bloch_affine, diagnostics, ellipsoid_csv, ellipsoid_metrics, ellipsoid_svg, kraus_from_choi, ChoiMatrix,
};
use latqpt::lattice::{
    calibrate_theta, compute_bands, displacement_coefficients_in, landau_zener_rates, two_band_threshold,
    CouplingBasis, LatticeConfig,
};
use latqpt::mle::{fit_choi_with, Constraint, FitOptions, Objective, TomographyDataset};
use latqpt::sim::{synthesize_qpt_dataset, ExperimentConfig};
use latqpt::states::{reconstruct_linear, AnalysisBasis};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

mod manifest;

use manifest::{InputDigest, RunManifest, MANIFEST_FILE};

#[derive(Parser)]
#[command(name = "latqpt", version, about = "Process tomography of lattice vibrational states")]
struct Cli {
    /// Directory searched for relative input paths that do not exist in the working directory.
    #[arg(long, env = "LATQPT_CONFIG_DIR", global = true)]
    config_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Band structure, bound-band count and tunneling rates.
    Bands(BandsArgs),
    /// Displacement coefficients and the analysis angle they realize.
    Coeffs(CoeffsArgs),
    /// Synthesize a tomography dataset from an experiment config.
    Simulate(SimulateArgs),
    /// Reconstruct the input and output states of a dataset.
    StateTomo(StateTomoArgs),
    /// Maximum-likelihood Choi matrix of a dataset.
    ProcessTomo(ProcessTomoArgs),
    /// Kraus decomposition of a Choi matrix.
    Kraus(ChoiArgs),
    /// Bloch-sphere image of a Choi matrix.
    Bloch(BlochArgs),
    /// Channel diagnostics of a Choi matrix.
    Report(ChoiArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct LatticeArgs {
    /// Lattice depth in recoil energies.
    #[arg(long, default_value_t = 18.0)]
    depth: f64,
    /// Lattice constant in meters; the recoil energy is then derived from it.
    #[arg(long)]
    lattice_constant: Option<f64>,
    /// Recoil energy in Hz.
    #[arg(long)]
    recoil_energy: Option<f64>,
    /// Gravitational acceleration in m/s².
    #[arg(long)]
    gravity: Option<f64>,
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long)]
    q_grid: Option<usize>,
}

impl LatticeArgs {
    fn config(&self) -> LatticeConfig {
        let base = LatticeConfig::rb85_reference();
        let mut cfg = match self.lattice_constant {
            Some(l) => LatticeConfig::from_lattice_constant(self.depth, l, base.atom_mass),
            None => base.with_depth(self.depth),
        };
        if let Some(e) = self.recoil_energy {
            cfg.recoil_energy = e;
        }
        if let Some(g) = self.gravity {
            cfg.gravity = g;
        }
        if let Some(n) = self.cutoff {
            cfg.plane_wave_cutoff = n;
        }
        if let Some(n) = self.q_grid {
            cfg.q_grid_size = n;
        }
        cfg
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct BandsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    lattice: LatticeArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum BasisArg {
    ZoneCenter,
    Wannier,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct CoeffsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    lattice: LatticeArgs,
    /// Displacement in meters.
    #[arg(long, allow_hyphen_values = true)]
    dx: f64,
    #[arg(long, value_enum, default_value = "zone-center")]
    basis: BasisArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SimulateArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    Linear,
    Ml,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct StateTomoArgs {
    #[arg(long)]
    data: PathBuf,
    /// Analysis angle in radians; defaults to the dataset's calibrated angle.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, value_enum, default_value = "linear")]
    method: Method,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ConstraintArg {
    Cp,
    CpTp,
    CpTraceNonincreasing,
}

impl From<ConstraintArg> for Constraint {
    fn from(c: ConstraintArg) -> Self {
        match c {
            ConstraintArg::Cp => Constraint::Cp,
            ConstraintArg::CpTp => Constraint::CpTp,
            ConstraintArg::CpTraceNonincreasing => Constraint::CpTraceNonincreasing,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ObjectiveArg {
    Binomial,
    Gaussian,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ProcessTomoArgs {
    #[arg(long)]
    data: PathBuf,
    /// Defaults to cp-tp for survival-renormalized data, otherwise cp-trace-nonincreasing.
    #[arg(long, value_enum)]
    constraint: Option<ConstraintArg>,
    #[arg(long, value_enum, default_value = "binomial")]
    objective: ObjectiveArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Fit the input states jointly with the channel.
    #[arg(long)]
    refit_inputs: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ChoiArgs {
    /// Choi JSON, or a fit result / dataset file containing one.
    #[arg(long)]
    choi: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct BlochArgs {
    #[arg(long)]
    choi: PathBuf,
    #[arg(long, default_value_t = 400)]
    samples: usize,
    /// Also write an SVG of three projections.
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

impl From<latqpt::Error> for CliError {
    fn from(e: latqpt::Error) -> Self {
        Self::new("model", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("json", e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Everything a command produces; files are written by the caller.
struct Outcome {
    config: Value,
    seed: Option<u64>,
    files: Vec<(String, Vec<u8>)>,
}

fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

struct Inputs {
    config_dir: Option<PathBuf>,
    used: Vec<PathBuf>,
}

impl Inputs {
    /// Resolve against the working directory, then the config directory.
    fn resolve(&mut self, path: &Path) -> CliResult<PathBuf> {
        let candidate = if path.exists() {
            path.to_path_buf()
        } else {
            match &self.config_dir {
                Some(dir) if path.is_relative() && dir.join(path).exists() => dir.join(path),
                _ => return Err(CliError::new("io", format!("input {} not found", path.display()))),
            }
        };
        let abs = candidate
            .canonicalize()
            .map_err(|e| CliError::new("io", format!("{}: {e}", candidate.display())))?;
        self.used.push(abs.clone());
        Ok(abs)
    }

    fn read(&mut self, path: &mut PathBuf) -> CliResult<Vec<u8>> {
        *path = self.resolve(path)?;
        fs::read(&*path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
    }
}

fn load_choi(bytes: &[u8]) -> CliResult<ChoiMatrix> {
    let value: Value = serde_json::from_slice(bytes)?;
    let inner = if value.get("choi_convention").is_some() {
        value
    } else if let Some(c) = value.get("choi") {
        c.clone()
    } else if let Some(c) = value.get("ground_truth_choi") {
        c.clone()
    } else {
        return Err(CliError::new("input", "no Choi matrix found (expected choi_convention, choi or ground_truth_choi)"));
    };
    Ok(serde_json::from_value(inner)?)
}

fn run(command: &mut Command, inputs: &mut Inputs) -> CliResult<Outcome> {
    match command {
        Command::Bands(a) => {
            let cfg = a.lattice.config();
            let bands = compute_bands(&cfg)?;
            let mut csv = String::from("band,q,energy_er\n");
            for (b, q, e) in bands.rows() {
                csv.push_str(&format!("{b},{q},{e}\n"));
            }
            let gap = bands.center_gap();
            let rates = if cfg.gravity > 0.0 { Some(landau_zener_rates(&cfg, &bands)?) } else { None };
            let summary = json!({
                "schema": "latqpt.bands/v1",
                "depth_er": cfg.depth,
                "bound_band_count": bands.bound_band_count,
                "barrier_er": bands.barrier,
                "center_gap_er": gap,
                "center_gap_khz": gap * cfg.recoil_energy / 1e3,
                "zone_center_er": bands.zone_center,
                "zone_edge_er": bands.zone_edge,
                "band_edges_er": bands.band_edges,
                "two_band_threshold_er": two_band_threshold(&cfg)?,
                "landau_zener_rates_per_s": rates,
            });
            Ok(Outcome {
                config: serde_json::to_value(&cfg)?,
                seed: None,
                files: vec![("bands.csv".into(), csv.into_bytes()), ("bands_summary.json".into(), json_bytes(&summary)?)],
            })
        }
        Command::Coeffs(a) => {
            let cfg = a.lattice.config();
            let bands = compute_bands(&cfg)?;
            let states = latqpt::lattice::bound_states(&cfg, &bands)?;
            let basis = match a.basis {
                BasisArg::ZoneCenter => CouplingBasis::ZoneCenter,
                BasisArg::Wannier => CouplingBasis::Wannier,
            };
            let coeffs = displacement_coefficients_in(&states, a.dx, basis)?;
            let theta = calibrate_theta(&coeffs).ok();
            let body = json!({
                "schema": "latqpt.coefficients/v1",
                "basis": basis,
                "coefficients": coeffs,
                "theta": theta,
            });
            Ok(Outcome {
                config: serde_json::to_value(&cfg)?,
                seed: None,
                files: vec![("coefficients.json".into(), json_bytes(&body)?)],
            })
        }
        Command::Simulate(a) => {
            let mut config: ExperimentConfig = serde_json::from_slice(&inputs.read(&mut a.config)?)?;
            if let Some(seed) = a.seed {
                config.seed = seed;
            }
            let data = synthesize_qpt_dataset(&config)?;
            Ok(Outcome {
                config: serde_json::to_value(&config)?,
                seed: Some(config.seed),
                files: vec![("dataset.json".into(), json_bytes(&data)?)],
            })
        }
        Command::StateTomo(a) => {
            let data: TomographyDataset = serde_json::from_slice(&inputs.read(&mut a.data)?)?;
            let theta = a.theta.unwrap_or(data.theta);
            let basis = AnalysisBasis::new(theta)?;
            let mut states = Vec::new();
            for r in &data.records {
                let shots = data.shots_for(r);
                for (side, rec) in [("in", &r.input), ("out", &r.output)] {
                    let rho = match a.method {
                        Method::Linear => reconstruct_linear(rec, &basis)?,
                        Method::Ml => latqpt::mle::fit_state_ml(rec, theta, shots)?.inner(),
                    };
                    states.push(json!({
                        "label": r.label,
                        "side": side,
                        "rho": rho,
                        "physical": rho.is_physical(),
                        "eigenvalues": rho.eigenvalues(),
                    }));
                }
            }
            let body = json!({"schema": "latqpt.states/v1", "method": a.method, "theta": theta, "states": states});
            Ok(Outcome { config: json!({"theta": theta}), seed: None, files: vec![("states.json".into(), json_bytes(&body)?)] })
        }
        Command::ProcessTomo(a) => {
            let data: TomographyDataset = serde_json::from_slice(&inputs.read(&mut a.data)?)?;
            let options = FitOptions {
                constraint: a.constraint.map(Constraint::from).unwrap_or_else(|| Constraint::default_for(&data)),
                objective: match a.objective {
                    ObjectiveArg::Binomial => Objective::Binomial,
                    ObjectiveArg::Gaussian => Objective::Gaussian,
                },
                restarts: a.restarts,
                seed: a.seed,
                refit_inputs: a.refit_inputs,
                ..FitOptions::default()
            };
            let fit = fit_choi_with(&data, &options)?;
            Ok(Outcome {
                config: serde_json::to_value(options)?,
                seed: Some(a.seed),
                files: vec![("fit.json".into(), json_bytes(&fit)?), ("choi.json".into(), json_bytes(&fit.choi)?)],
            })
        }
        Command::Kraus(a) => {
            let choi = load_choi(&inputs.read(&mut a.choi)?)?;
            let kraus = kraus_from_choi(&choi)?;
            let body = json!({
                "kraus": kraus,
                "pauli_components": kraus.pauli_components().iter().map(|p| p.map(|z| [z.re, z.im])).collect::<Vec<_>>(),
                "dominant_terms": kraus.dominant_terms(),
            });
            Ok(Outcome { config: Value::Null, seed: None, files: vec![("kraus.json".into(), json_bytes(&body)?)] })
        }
        Command::Bloch(a) => {
            if a.samples == 0 {
                return Err(CliError::new("usage", "--samples must be positive"));
            }
            let choi = load_choi(&inputs.read(&mut a.choi)?)?;
            let map = bloch_affine(&choi);
            let body = json!({"schema": "latqpt.bloch/v1", "affine": map, "ellipsoid": ellipsoid_metrics(&map)});
            let mut files = vec![
                ("bloch.json".into(), json_bytes(&body)?),
                ("ellipsoid.csv".into(), ellipsoid_csv(&map, a.samples).into_bytes()),
            ];
            if a.svg {
                files.push(("ellipsoid.svg".into(), ellipsoid_svg(&map, a.samples).into_bytes()));
            }
            Ok(Outcome { config: json!({"samples": a.samples}), seed: None, files })
        }
        Command::Report(a) => {
            let choi = load_choi(&inputs.read(&mut a.choi)?)?;
            let map = bloch_affine(&choi);
            let kraus = kraus_from_choi(&choi).ok();
            let body = json!({
                "schema": "latqpt.report/v1",
                "diagnostics": diagnostics(&choi),
                "ellipsoid": ellipsoid_metrics(&map),
                "choi_eigenvalues": choi.eigenvalues(),
                "kraus_terms": kraus.as_ref().map(|k| k.dominant_terms()),
                "kraus_weights": kraus.as_ref().map(|k| k.weights.clone()),
            });
            Ok(Outcome { config: Value::Null, seed: None, files: vec![("report.json".into(), json_bytes(&body)?)] })
        }
        Command::Replay(_) => Err(CliError::new("usage", "replay cannot be nested")),
    }
}

fn out_dir(command: &mut Command) -> &mut PathBuf {
    match command {
        Command::Bands(a) => &mut a.out,
        Command::Coeffs(a) => &mut a.out,
        Command::Simulate(a) => &mut a.out,
        Command::StateTomo(a) => &mut a.out,
        Command::ProcessTomo(a) => &mut a.out,
        Command::Kraus(a) | Command::Report(a) => &mut a.out,
        Command::Bloch(a) => &mut a.out,
        Command::Replay(a) => &mut a.out,
    }
}

fn name(command: &Command) -> String {
    serde_json::to_value(command)
        .ok()
        .and_then(|v| v.get("command").and_then(|c| c.as_str()).map(str::to_string))
        .unwrap_or_default()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn execute(mut command: Command, config_dir: Option<PathBuf>) -> CliResult<Value> {
    let mut inputs = Inputs { config_dir, used: Vec::new() };
    if let Command::Replay(r) = &command {
        let mut path = r.manifest.clone();
        let manifest: RunManifest = serde_json::from_slice(&inputs.read(&mut path)?)?;
        for input in &manifest.inputs {
            let bytes = fs::read(&input.path)
                .map_err(|e| CliError::new("io", format!("{}: {e}", input.path.display())))?;
            if sha256_hex(&bytes) != input.sha256 {
                return Err(CliError::new("replay", format!("input {} changed since the run", input.path.display())));
            }
        }
        let out = r.out.clone();
        let mut recorded: Command = serde_json::from_value(manifest.args)?;
        if matches!(recorded, Command::Replay(_)) {
            return Err(CliError::new("replay", "manifest records a replay"));
        }
        *out_dir(&mut recorded) = out;
        // Inputs are resolved again, so the manifest itself is not recorded.
        inputs.used.clear();
        command = recorded;
    }

    let outcome = run(&mut command, &mut inputs)?;
    let dir = out_dir(&mut command).clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?;
    let mut listed = Vec::new();
    for (file, bytes) in &outcome.files {
        let path = dir.join(file);
        fs::write(&path, bytes).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
        listed.push(file.clone());
    }
    let digests = inputs
        .used
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
            Ok(InputDigest { path: p.clone(), sha256: sha256_hex(&bytes) })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let cmd_name = name(&command);
    let manifest = RunManifest::new(&cmd_name, serde_json::to_value(&command)?, outcome.config, outcome.seed, digests, listed.clone());
    fs::write(dir.join(MANIFEST_FILE), json_bytes(&manifest)?)
        .map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?;
    listed.push(MANIFEST_FILE.to_string());
    Ok(json!({"command": cmd_name, "out": dir, "outputs": listed}))
}

fn fail(err: CliError) -> ExitCode {
    let line = json!({"error": err.kind, "message": err.message.replace('\n', " ")});
    eprintln!("{line}");
    ExitCode::from(if err.kind == "usage" { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let first = match e.kind() {
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => "a subcommand is required; see --help".to_string(),
                _ => e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string(),
            };
            return fail(CliError::new("usage", first));
        }
    };
    match execute(cli.command, cli.config_dir) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}
