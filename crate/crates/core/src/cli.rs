//! Command-line front end. Every command reads a JSON config; flags only
//! override the output directory, seed, worker count and family index.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, StudySettings};
use crate::dump::{self, DumpHeader};
use crate::error::Error;
use crate::mesh::{Grid, ScalarField};
use crate::oracle::{self, EvenInstance1d};
use crate::problem::{self, FamilySpec, ProblemInstance};
use crate::solver::{self, SolverConfig};
use crate::spectral::{self, SpectralOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n_nodes: Vec<usize>,
    /// The box truncates an unbounded domain.
    #[serde(default)]
    pub truncated: bool,
}

impl GridSpec {
    pub fn build(&self) -> crate::Result<Arc<Grid>> {
        let g = Grid::new(self.dim, &self.lo, &self.hi, &self.n_nodes)?;
        Ok(if self.truncated {
            Arc::new((*g).clone().truncating())
        } else {
            g
        })
    }
}

/// A family given inline or as a path to its own JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilyRef {
    File {
        file: PathBuf,
    },
    Inline(FamilySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub family: FamilyRef,
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub analysis: StudySettings,
    #[serde(default)]
    pub spectral: SpectralOptions,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Config of the `oracle` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub instance: EvenInstance1d,
    /// Upper end of the `u(0)` scan.
    pub u0_max: f64,
    #[serde(default = "default_scan")]
    pub scan_samples: usize,
    pub rk_step: f64,
    /// Interior nodes of the grid the profile is sampled on.
    #[serde(default)]
    pub grid_nodes: Option<usize>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_scan() -> usize {
    400
}

#[derive(Debug, Parser)]
#[command(name = "gslab", version, about = "Ground states and concentration studies for sign-indefinite semilinear problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the family against the standing assumptions.
    Validate(CommonArgs),
    /// Solve one member of the family.
    Solve(CommonArgs),
    /// Solve every member and write the concentration report.
    Study(CommonArgs),
    /// Smallest eigenvalue of `−Δ + V_n` and the norm-equivalence constants.
    Spectrum(CommonArgs),
    /// Run the shooting oracle.
    Oracle(CommonArgs),
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Family index.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(short, long)]
    pub verbose: bool,
}

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }

    fn failed(e: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_FAILED,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> i32 {
    let args = match &cli.command {
        Command::Validate(a) | Command::Solve(a) | Command::Study(a) | Command::Spectrum(a) | Command::Oracle(a) => a.clone(),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.jobs.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let outcome = pool.install(|| match cli.command {
        Command::Validate(a) => cmd_validate(&a),
        Command::Solve(a) => cmd_solve(&a),
        Command::Study(a) => cmd_study(&a),
        Command::Spectrum(a) => cmd_spectrum(&a),
        Command::Oracle(a) => cmd_oracle(&a),
    });
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> std::result::Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(Error::io(path, e)))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

pub fn load_study_config(path: &Path) -> crate::Result<StudyConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// A loaded config with everything built that does not need solving.
struct Loaded {
    config: StudyConfig,
    family: Vec<ProblemInstance>,
    out: PathBuf,
}

fn load(args: &CommonArgs) -> std::result::Result<Loaded, Failure> {
    let mut config: StudyConfig = read_json(&args.config)?;
    let base = base_dir(&args.config);
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.solver.seed = config.seed;
    config.solver.validate().map_err(Failure::usage)?;
    let spec = match &config.family {
        FamilyRef::Inline(s) => s.clone(),
        FamilyRef::File { file } => read_json(&base.join(file))?,
    };
    let grid = config.grid.build().map_err(Failure::usage)?;
    let family = spec.build(&grid, &base).map_err(Failure::usage)?;
    let out = args.out.clone().unwrap_or_else(|| base.join(&config.output));
    Ok(Loaded { config, family, out })
}

fn ensure_dir(dir: &Path) -> std::result::Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::failed(Error::io(dir, e)))
}

fn write_text(path: &Path, text: &str) -> std::result::Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::failed(Error::io(path, e)))
}

fn probes(loaded: &Loaded) -> Vec<f64> {
    if !loaded.config.analysis.eps_list.is_empty() {
        return loaded.config.analysis.eps_list.clone();
    }
    let first = &loaded.family[0];
    analysis::default_eps_list(first.scale, first.grid.max_spacing())
}

pub fn cmd_validate(args: &CommonArgs) -> CmdResult {
    let loaded = load(args)?;
    let report = problem::validate_assumptions(&loaded.family, &probes(&loaded), &loaded.config.spectral).map_err(Failure::failed)?;
    let text = serde_json::to_string_pretty(&report).map_err(Failure::failed)?;
    println!("{text}");
    ensure_dir(&loaded.out)?;
    write_text(&loaded.out.join("assumptions.json"), &text)?;
    Ok(if report.passes() { EXIT_OK } else { EXIT_FAILED })
}

fn member(loaded: &Loaded, n: Option<usize>) -> std::result::Result<&ProblemInstance, Failure> {
    match n {
        None => Ok(&loaded.family[0]),
        Some(n) => loaded.family.iter().find(|i| i.n == n).ok_or_else(|| {
            let (a, b) = (loaded.family[0].n, loaded.family[loaded.family.len() - 1].n);
            Failure::usage(format!("n = {n} is outside the family range {a}..={b}"))
        }),
    }
}

pub fn cmd_solve(args: &CommonArgs) -> CmdResult {
    let loaded = load(args)?;
    let inst = Arc::new(member(&loaded, args.n)?.clone());
    let gs = solver::solve_ground_state(inst.clone(), &loaded.config.solver).map_err(Failure::failed)?;
    ensure_dir(&loaded.out)?;
    let stem = format!("u_n{}", inst.n);
    let mut header = DumpHeader::for_field(&gs.u, &stem);
    header.provenance = Some("solver".into());
    dump::write_dump(&gs.u, &header, &loaded.out.join(&stem)).map_err(Failure::failed)?;
    let sidecar = gs.sidecar(&loaded.config.solver.hash());
    let text = serde_json::to_string_pretty(&sidecar).map_err(Failure::failed)?;
    write_text(&loaded.out.join(format!("{stem}.sidecar.json")), &text)?;
    println!("n = {}", inst.n);
    println!("s = {}", gs.s);
    println!("residual = {:e}", gs.residual);
    println!("alpha_check = {:e}", gs.alpha_check);
    if args.verbose {
        for r in &gs.runs {
            println!("  {:<12} s = {:?} grad = {:e} iterations = {} converged = {}", r.label, r.s, r.grad, r.iterations, r.converged);
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_study(args: &CommonArgs) -> CmdResult {
    let loaded = load(args)?;
    let family: Vec<Arc<ProblemInstance>> = loaded.family.iter().cloned().map(Arc::new).collect();
    let (report, _) =
        analysis::run_concentration_study(&family, &loaded.config.solver, &loaded.config.analysis).map_err(Failure::failed)?;
    ensure_dir(&loaded.out)?;
    write_text(&loaded.out.join("report.csv"), &report.to_csv())?;
    let summary = serde_json::to_string_pretty(&report).map_err(Failure::failed)?;
    write_text(&loaded.out.join("summary.json"), &summary)?;
    let all_solved = report.members.iter().all(|m| m.solved());
    for m in report.members.iter().filter(|m| !m.solved()) {
        println!("n = {}: {:?}", m.n, m.status);
    }
    if report.verdicts.insufficient_n {
        println!("insufficient n: trends need at least two solved members");
    }
    println!("{}", serde_json::to_string_pretty(&report.verdicts).map_err(Failure::failed)?);
    Ok(if all_solved && report.verdicts.all_pass() {
        EXIT_OK
    } else {
        EXIT_FAILED
    })
}

#[derive(Debug, Serialize)]
struct SpectrumLine {
    n: usize,
    min_eig: f64,
    converged: bool,
    c1: f64,
    c2: f64,
}

pub fn cmd_spectrum(args: &CommonArgs) -> CmdResult {
    let loaded = load(args)?;
    let inst = member(&loaded, args.n)?;
    let opts: &SpectralOptions = &loaded.config.spectral;
    let res = spectral::smallest_eigenvalue(&inst.v, opts).map_err(Failure::failed)?;
    let bounds = spectral::bounds_from_min_eig(res.min_eig, &inst.k).map_err(Failure::failed)?;
    let line = SpectrumLine {
        n: inst.n,
        min_eig: res.min_eig,
        converged: res.converged,
        c1: bounds.c1,
        c2: bounds.c2,
    };
    println!("{}", serde_json::to_string(&line).map_err(Failure::failed)?);
    Ok(if res.min_eig > 0.0 { EXIT_OK } else { EXIT_FAILED })
}

#[derive(Debug, Serialize)]
struct OracleSummary {
    u0: f64,
    s_value: f64,
    match_norm: f64,
    bracket: (f64, f64),
    min_value: f64,
}

pub fn cmd_oracle(args: &CommonArgs) -> CmdResult {
    let config: OracleConfig = read_json(&args.config)?;
    let out = args.out.clone().unwrap_or_else(|| base_dir(&args.config).join(&config.output));
    let inst = &config.instance;
    let bracket = inst
        .find_bracket(config.u0_max, config.scan_samples, config.rk_step)
        .ok_or_else(|| Failure::failed(Error::NoBracket { lo: 0.0, hi: config.u0_max }))?;
    let res = oracle::shoot_1d(inst, bracket, config.rk_step).map_err(Failure::failed)?;
    let summary = OracleSummary {
        u0: res.u0,
        s_value: res.s_value,
        match_norm: res.match_norm,
        bracket,
        min_value: res.min_value(),
    };
    let text = serde_json::to_string_pretty(&summary).map_err(Failure::failed)?;
    println!("{text}");
    ensure_dir(&out)?;
    write_text(&out.join("oracle.json"), &text)?;
    if let Some(nodes) = args.n.or(config.grid_nodes) {
        let l = inst.half_width;
        let grid = Grid::new(1, &[-l], &[l], &[nodes]).map_err(Failure::usage)?;
        let field: ScalarField = res.to_field(&grid).map_err(Failure::failed)?;
        let mut header = DumpHeader::for_field(&field, "oracle");
        header.provenance = Some("oracle".into());
        dump::write_dump(&field, &header, &out.join("oracle")).map_err(Failure::failed)?;
    }
    Ok(EXIT_OK)
}
