//! Argument definitions and subcommand handlers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use axum::http::HeaderValue;
use clap::{Args, Parser, Subcommand, ValueEnum};
use driftscope::diffusion::{read_embedding, write_embedding, BandwidthPool, KernelTimeScale};
use driftscope::field::save_field;
use driftscope::landmarks::{eval_landmarks, summarize, write_eval_csv, EvalConfig, DEFAULT_STRIDE};
use driftscope::separation::{default_k, diffusion_separation, particle_separation};
use driftscope::similarity::{cluster_embedding, multi_source_field, similarity_neighborhood};
use driftscope::trajectory::{integrate_flow, load_trajectories, write_ptrj, PositionPrecision, SeedGrid};
use driftscope::{
    build_embedding, select_landmarks, DiffusionEmbedding, DiffusionParams, Direction, Flow, FlowSpec, LandmarkSet,
    Strategy, TrajectoryDataset,
};
use serde::Serialize;

use crate::server;
use crate::session::Session;

/// Diffusion-geometry analysis of particle trajectories.
#[derive(Debug, Parser)]
#[command(name = "driftscope", version, about)]
pub struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG also applies.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate an analytic flow from a seed grid and write a PTRJ file.
    Generate(GenerateArgs),
    /// Select landmarks and write them as JSON.
    Landmarks(LandmarksCmd),
    /// Build the diffusion embedding and write the DGEM cache.
    Build(BuildCmd),
    /// Particle (γ) or diffusion (γ_s) separation field.
    Separation(SeparationCmd),
    /// Multi-source diffusion distance field.
    Field(FieldCmd),
    /// Similarity neighborhood of one particle.
    Neighborhood(NeighborhoodCmd),
    /// k-means clusters of the scaled embedding.
    Clusters(ClustersCmd),
    /// Compare landmark strategies by subspace error; writes CSV.
    EvalLandmarks(EvalCmd),
    /// Serve the HTTP API for one dataset.
    Serve(ServeCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

fn parse_flow(s: &str) -> Result<Flow, String> {
    s.parse().map_err(|e: driftscope::Error| e.to_string())
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: driftscope::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: driftscope::Error| e.to_string())
}

/// Seed lattice resolution per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<usize>);

/// Seed box as `(lo, hi)` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain(pub Vec<(f64, f64)>);

/// `120x60` → `[120, 60]`.
fn parse_grid(s: &str) -> Result<Grid, String> {
    s.split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("invalid grid '{s}', expected e.g. 120x60")))
        .collect::<Result<_, _>>()
        .map(Grid)
}

/// `0,2,0,1` → `[(0, 2), (0, 1)]`.
fn parse_domain(s: &str) -> Result<Domain, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("invalid domain '{s}'")))
        .collect::<Result<_, _>>()?;
    if v.is_empty() || v.len() % 2 != 0 {
        return Err(format!("domain '{s}' needs lo,hi pairs"));
    }
    Ok(Domain(v.chunks(2).map(|c| (c[0], c[1])).collect()))
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("invalid list element '{p}'")))
        .collect()
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// double-gyre, abc, four-centers or sine-ridge.
    #[arg(long, value_parser = parse_flow)]
    pub flow: Flow,
    /// Seed lattice resolution, e.g. 120x60.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Grid,
    /// Seed box as lo,hi per axis; defaults to the flow's domain.
    #[arg(long, value_parser = parse_domain)]
    pub domain: Option<Domain>,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    #[arg(long)]
    pub tau: f64,
    #[arg(long)]
    pub steps: usize,
    /// Seed at this time and advect to --t0 before sampling.
    #[arg(long)]
    pub seed_time: Option<f64>,
    /// RK4 substeps per saved step.
    #[arg(long, default_value_t = 4)]
    pub substeps: usize,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Trajectories (PTRJ or CSV).
    #[arg(long, short = 'd')]
    pub data: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LandmarkArgs {
    /// Landmark count, or a landmark JSON file from `landmarks`.
    #[arg(long, default_value = "1000")]
    pub landmarks: String,
    #[arg(long, value_parser = parse_strategy, default_value = "tfps")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Temporal stride for T-FPS.
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    pub stride: usize,
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    /// Bandwidth scale α.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Neighbours averaged for each bandwidth.
    #[arg(long, default_value_t = 6)]
    pub neighbors: usize,
    /// Kernel entries below this are dropped.
    #[arg(long, default_value_t = 1e-6)]
    pub threshold: f64,
    /// Retained eigenpairs (default min(n_l, 300)).
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long, value_enum, default_value_t = OnOff::On, require_equals = false)]
    pub renormalize: OnOff,
    /// Points that bandwidth neighbours are drawn from.
    #[arg(long, value_enum, default_value_t = PoolArg::Landmarks)]
    pub pool: PoolArg,
    /// Divisor of the kernel exponent's time sum.
    #[arg(long, value_enum, default_value_t = TimeScaleArg::Steps)]
    pub time_scale: TimeScaleArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Landmarks,
    Particles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimeScaleArg {
    Steps,
    Duration,
}

impl KernelArgs {
    pub fn params(&self) -> DiffusionParams {
        DiffusionParams {
            n_neighbors: self.neighbors,
            alpha: self.alpha,
            threshold: self.threshold,
            modes: self.modes,
            renormalize: self.renormalize == OnOff::On,
            pool: match self.pool {
                PoolArg::Landmarks => BandwidthPool::Landmarks,
                PoolArg::Particles => BandwidthPool::Particles,
            },
            time_scale: match self.time_scale {
                TimeScaleArg::Steps => KernelTimeScale::Steps,
                TimeScaleArg::Duration => KernelTimeScale::Duration,
            },
        }
    }
}

/// Where the embedding comes from: a DGEM cache if it exists, otherwise a
/// fresh build (written to the cache path when one is given).
#[derive(Debug, Clone, Args)]
pub struct EmbeddingArgs {
    /// DGEM embedding cache.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[command(flatten)]
    pub landmarks: LandmarkArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
}

#[derive(Debug, Args)]
pub struct LandmarksCmd {
    #[command(flatten)]
    pub data: DataArg,
    #[command(flatten)]
    pub landmarks: LandmarkArgs,
    /// Output JSON (stdout if omitted).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildCmd {
    #[command(flatten)]
    pub data: DataArg,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
}

#[derive(Debug, Args)]
pub struct SeparationCmd {
    #[command(flatten)]
    pub data: DataArg,
    /// Diffusion scale; omit for particle separation.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, value_parser = parse_direction, default_value = "forward")]
    pub direction: Direction,
    /// Spatial neighbours (default 9 in 2D, 27 in 3D).
    #[arg(long)]
    pub k: Option<usize>,
    /// Field file (DGSF); metadata goes to `<out>.json`.
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
}

#[derive(Debug, Args)]
pub struct FieldCmd {
    #[command(flatten)]
    pub data: DataArg,
    /// Source particles, comma separated or repeated.
    #[arg(long, value_parser = parse_list::<usize>, required = true)]
    pub sources: Vec<Vec<usize>>,
    #[arg(long)]
    pub scale: f64,
    /// Also write the distance field as DGSF.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
}

#[derive(Debug, Args)]
pub struct NeighborhoodCmd {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub source: usize,
    #[arg(long)]
    pub scale: f64,
    #[arg(long)]
    pub radius: f64,
    #[arg(long, default_value_t = 200)]
    pub max: usize,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
}

#[derive(Debug, Args)]
pub struct ClustersCmd {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub scale: f64,
    /// k-means seed.
    #[arg(long, default_value_t = 0)]
    pub kmeans_seed: u64,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long, value_parser = parse_list::<Strategy>, default_value = "random,fps,tfps")]
    pub strategies: Vec<Vec<Strategy>>,
    #[arg(long, value_parser = parse_list::<usize>, default_value = "250,500,1000")]
    pub counts: Vec<Vec<usize>>,
    #[arg(long, value_parser = parse_list::<usize>, default_value = "50,150,250")]
    pub subspaces: Vec<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    pub stride: usize,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// CSV output (stdout if omitted).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeCmd {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Listening port; DRIFTSCOPE_PORT overrides it.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Allowed CORS origin (any if omitted).
    #[arg(long)]
    pub cors_origin: Option<String>,
    /// Seed for clustering requests.
    #[arg(long, default_value_t = 0)]
    pub kmeans_seed: u64,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Landmarks(a) => landmarks(a),
        Command::Build(a) => build(a),
        Command::Separation(a) => separation(a),
        Command::Field(a) => field(a),
        Command::Neighborhood(a) => neighborhood(a),
        Command::Clusters(a) => clusters(a),
        Command::EvalLandmarks(a) => eval(a),
        Command::Serve(a) => serve(a),
    }
}

pub fn load_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    load_trajectories(BufReader::new(file)).with_context(|| format!("cannot read {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer(&mut lock, value)?;
    writeln!(lock)?;
    Ok(())
}

fn resolve_landmarks(ds: &TrajectoryDataset, args: &LandmarkArgs) -> Result<LandmarkSet> {
    if let Ok(count) = args.landmarks.parse::<usize>() {
        if count > ds.n() {
            log::warn!("{count} landmarks requested for {} particles; using all particles", ds.n());
        }
        return Ok(select_landmarks(ds, count.min(ds.n()), args.strategy, args.seed, args.stride)?);
    }
    let path = Path::new(&args.landmarks);
    let file = File::open(path).with_context(|| format!("cannot open landmark file {}", path.display()))?;
    let lm: LandmarkSet = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("cannot parse landmark file {}", path.display()))?;
    lm.validate(ds.n())?;
    Ok(lm)
}

fn build_fresh(ds: &TrajectoryDataset, args: &EmbeddingArgs) -> Result<DiffusionEmbedding> {
    let start = Instant::now();
    let lm = resolve_landmarks(ds, &args.landmarks)?;
    let e = build_embedding(ds, &lm, &args.kernel.params()).context("embedding build failed")?;
    log::info!("built {} modes over {} landmarks in {:.2?}", e.modes(), lm.len(), start.elapsed());
    Ok(e)
}

fn write_cache(e: &DiffusionEmbedding, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    write_embedding(e, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Loads the cache when it exists, else builds (and saves when a cache path is set).
pub fn obtain_embedding(ds: &TrajectoryDataset, args: &EmbeddingArgs) -> Result<DiffusionEmbedding> {
    if let Some(path) = &args.cache {
        if path.exists() {
            let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            let e = read_embedding(BufReader::new(file)).with_context(|| format!("cannot read {}", path.display()))?;
            if e.n() != ds.n() {
                bail!("{} holds {} particles but the dataset has {}", path.display(), e.n(), ds.n());
            }
            return Ok(e);
        }
    }
    let e = build_fresh(ds, args)?;
    if let Some(path) = &args.cache {
        write_cache(&e, path)?;
    }
    Ok(e)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec = FlowSpec::new(a.flow, a.grid.0, a.t0, a.tau, a.steps)?;
    if let Some(Domain(domain)) = a.domain {
        spec.grid = SeedGrid::new(spec.grid.resolution.clone(), domain)?;
    }
    spec.seed_time = a.seed_time;
    spec.substeps = a.substeps;
    let ds = integrate_flow(&spec)?;
    let precision = match a.precision {
        Precision::F32 => PositionPrecision::F32,
        Precision::F64 => PositionPrecision::F64,
    };
    let mut w = create(&a.out)?;
    write_ptrj(&ds, &mut w, precision)?;
    w.flush()?;
    eprintln!("wrote {} particles × {} steps to {}", ds.n(), ds.steps(), a.out.display());
    Ok(())
}

fn landmarks(a: LandmarksCmd) -> Result<()> {
    let ds = load_dataset(&a.data.data)?;
    let lm = resolve_landmarks(&ds, &a.landmarks)?;
    match a.out {
        Some(path) => {
            let mut w = create(&path)?;
            serde_json::to_writer(&mut w, &lm)?;
            w.flush()?;
        }
        None => print_json(&lm)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct BuildSummary<'a> {
    n: usize,
    landmarks: usize,
    modes: usize,
    eigenvalues: &'a [f64],
    seconds: f64,
}

fn build(a: BuildCmd) -> Result<()> {
    let ds = load_dataset(&a.data.data)?;
    let start = Instant::now();
    let lm = resolve_landmarks(&ds, &a.embedding.landmarks)?;
    let e = build_embedding(&ds, &lm, &a.embedding.kernel.params()).context("embedding build failed")?;
    let seconds = start.elapsed().as_secs_f64();
    if let Some(path) = &a.embedding.cache {
        write_cache(&e, path)?;
    }
    let shown = e.modes().min(10);
    print_json(&BuildSummary {
        n: e.n(),
        landmarks: lm.len(),
        modes: e.modes(),
        eigenvalues: &e.eigenvalues()[..shown],
        seconds,
    })
}

fn separation(a: SeparationCmd) -> Result<()> {
    let ds = load_dataset(&a.data.data)?;
    let k = a.k.unwrap_or_else(|| default_k(ds.dim()));
    let field = match a.scale {
        None => particle_separation(&ds, a.direction, k)?,
        Some(s) => {
            let e = obtain_embedding(&ds, &a.embedding)?;
            diffusion_separation(&ds, &e, s, a.direction, k)?
        }
    };
    save_field(&field, &a.out)?;
    let (lo, hi) = field.min_max();
    eprintln!("wrote {} values in [{lo:.4}, {hi:.4}] to {}", field.len(), a.out.display());
    Ok(())
}

fn field(a: FieldCmd) -> Result<()> {
    let ds = load_dataset(&a.data.data)?;
    let e = obtain_embedding(&ds, &a.embedding)?;
    let sources = a.sources.concat();
    let part = multi_source_field(&e, &sources, a.scale)?;
    if let Some(path) = &a.out {
        save_field(&e.distance_field(&sources, a.scale)?, path)?;
    }
    print_json(&part)
}

fn neighborhood(a: NeighborhoodCmd) -> Result<()> {
    let ds = load_dataset(&a.data.data)?;
    let e = obtain_embedding(&ds, &a.embedding)?;
    print_json(&similarity_neighborhood(&e, a.source, a.scale, a.radius, a.max)?)
}

#[derive(Serialize)]
struct ClusterOutput<'a> {
    k: usize,
    scale: f64,
    seed: u64,
    labels: &'a [usize],
}

fn clusters(a: ClustersCmd) -> Result<()> {
    let ds = load_dataset(&a.data.data)?;
    let e = obtain_embedding(&ds, &a.embedding)?;
    let labels = cluster_embedding(&e, a.scale, a.k, a.kmeans_seed)?;
    print_json(&ClusterOutput { k: a.k, scale: a.scale, seed: a.kmeans_seed, labels: &labels })
}

fn eval(a: EvalCmd) -> Result<()> {
    let ds = load_dataset(&a.data.data)?;
    let config = EvalConfig {
        strategies: a.strategies.concat(),
        counts: a.counts.concat(),
        subspaces: a.subspaces.concat(),
        trials: a.trials,
        base_seed: a.seed,
        stride: a.stride,
        params: a.kernel.params(),
    };
    let records = eval_landmarks(&ds, &config)?;
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            write_eval_csv(&records, &mut w)?;
            w.flush()?;
        }
        None => write_eval_csv(&records, std::io::stdout().lock())?,
    }
    for s in summarize(&records) {
        eprintln!(
            "{:>6} n_l={:<5} subspace={:<4} median error {:.4}  median selection {:.3} s",
            s.strategy.to_string(),
            s.n_l,
            s.subspace,
            s.median_error,
            s.median_seconds
        );
    }
    Ok(())
}

/// `DRIFTSCOPE_PORT`, when set, takes precedence over `--port`.
pub fn resolve_port(flag: u16, env: Option<&str>) -> Result<u16> {
    match env {
        Some(raw) => raw.trim().parse().with_context(|| format!("DRIFTSCOPE_PORT='{raw}' is not a valid port")),
        None => Ok(flag),
    }
}

fn serve(a: ServeCmd) -> Result<()> {
    let env_port = std::env::var("DRIFTSCOPE_PORT").ok();
    let port = resolve_port(a.port, env_port.as_deref())?;
    let cors = a
        .cors_origin
        .as_deref()
        .map(HeaderValue::from_str)
        .transpose()
        .context("invalid --cors-origin")?;
    let ds = load_dataset(&a.data.data)?;
    let e = obtain_embedding(&ds, &a.embedding)?;
    let session = Arc::new(Session::new(ds, e, a.kmeans_seed)?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(server::serve(session, SocketAddr::new(a.host, port), cors))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_and_domain_parse() {
        assert!(parse_grid("120by60").is_err());
        assert!(parse_domain("0,2,0").is_err());
        let cli = Cli::try_parse_from([
            "driftscope", "generate", "--flow", "double-gyre", "--grid", "120x60", "--domain", "0,2,0,1", "--tau", "1",
            "--steps", "10", "-o", "x.ptrj",
        ])
        .unwrap();
        let Command::Generate(a) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(a.grid, Grid(vec![120, 60]));
        assert_eq!(a.domain, Some(Domain(vec![(0.0, 2.0), (0.0, 1.0)])));
    }

    #[test]
    fn env_port_overrides_flag() {
        assert_eq!(resolve_port(8080, None).unwrap(), 8080);
        assert_eq!(resolve_port(8080, Some("9001")).unwrap(), 9001);
        assert!(resolve_port(8080, Some("http")).is_err());
    }

    #[test]
    fn renormalize_takes_on_off() {
        let cli = Cli::try_parse_from(["driftscope", "build", "-d", "x.ptrj", "--renormalize=off"]).unwrap();
        let Command::Build(b) = cli.command else { panic!("expected build") };
        assert!(!b.embedding.kernel.params().renormalize);
        assert!(Cli::try_parse_from(["driftscope", "build", "-d", "x", "--renormalize=maybe"]).is_err());
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let err = Cli::try_parse_from(["driftscope", "build", "-d", "x", "--bogus"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
