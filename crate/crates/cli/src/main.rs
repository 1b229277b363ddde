//! `semsig` command-line tool: build signature databases from object files,
//! query them, and run reproducible benchmarks and parameter sweeps.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use manifest::Manifest;
use semsig::distortion::{DistortionConfig, DistortionLevel};
use semsig::evaluation::{self, SweepSetup};
use semsig::ingest::{self, Ingested, SyntheticCityConfig};
use semsig::retrieval;
use semsig::siggen;
use semsig::{
    alphabet_default, BuildParams, FusionPolicy, GeoBBox, GeoPoint, MetricKind, Protocol,
    SemanticObject, Signature, SignaturePart,
};

#[derive(Parser)]
#[command(name = "semsig", version, about = "Place recognition from semantic street-object signatures")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "SEMSIG_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a city on a grid and write a signature database.
    Build(BuildArgs),
    /// Rank database cells against one signature.
    Query(QueryArgs),
    /// Run a benchmark over sampled self-queries.
    Eval(EvalArgs),
    /// Rebuild the database for several parameter values and benchmark each.
    Sweep(SweepArgs),
    /// Generate a synthetic object CSV.
    Synth(SynthArgs),
    /// Print a database header or one record.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Csv,
    Geojson,
}

#[derive(Args)]
struct ObjectInput {
    /// Object file: CSV with header id,class,lon,lat or a GeoJSON FeatureCollection.
    #[arg(long)]
    objects: PathBuf,
    /// Input format (default: from the file extension).
    #[arg(long, value_enum)]
    format: Option<InputFormat>,
    /// Area to sample as LONMIN,LATMIN,LONMAX,LATMAX (default: extent of the objects).
    #[arg(long)]
    bbox: Option<GeoBBox>,
}

#[derive(Args)]
struct GridArgs {
    /// Visibility range R in meters.
    #[arg(long, default_value_t = 30.0)]
    range: f64,
    /// Grid step s in meters.
    #[arg(long, default_value_t = 10.0)]
    step: f64,
    /// Number of angle quantization levels Q.
    #[arg(long, default_value_t = 16)]
    qlevels: u16,
}

impl GridArgs {
    fn params(&self) -> BuildParams {
        BuildParams {
            visibility_range_m: self.range,
            grid_step_m: self.step,
            quantization_levels: self.qlevels,
        }
    }
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    input: ObjectInput,
    #[command(flatten)]
    grid: GridArgs,
    /// Database file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RankArgs {
    /// full, two-stage, or single-<jaccard|hist|edit>-<type|angle>.
    #[arg(long, default_value = "full")]
    protocol: Protocol,
    /// Part ranked first by two-stage fusion.
    #[arg(long, default_value = "type")]
    first_part: SignaturePart,
    /// Weight of the type part; the angle part gets 1 - alpha.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Percentage of records kept after the first stage.
    #[arg(long, default_value_t = 5.0)]
    k: f64,
    /// Number of candidates returned.
    #[arg(long, default_value_t = 100)]
    t: usize,
    /// Metric for the type part: jaccard, hist or edit.
    #[arg(long, default_value = "edit")]
    metric_type: MetricKind,
    /// Metric for the angle part: jaccard, hist or edit.
    #[arg(long, default_value = "edit")]
    metric_angle: MetricKind,
}

impl RankArgs {
    fn policy(&self) -> FusionPolicy {
        FusionPolicy {
            metric_type: self.metric_type,
            metric_angle: self.metric_angle,
            alpha: self.alpha,
            k_percent: self.k,
            t: self.t,
            ..FusionPolicy::default()
        }
    }

    fn protocol(&self) -> Protocol {
        match self.protocol {
            Protocol::TwoStage { .. } => Protocol::TwoStage {
                first: self.first_part,
            },
            p => p,
        }
    }

    fn describe(&self) -> serde_json::Value {
        json!({
            "protocol": self.protocol().to_string(),
            "policy": self.policy(),
        })
    }
}

#[derive(Args)]
struct QueryArgs {
    /// Signature database written by `build`
    #[arg(long)]
    db: PathBuf,
    /// Query signature, e.g. "BD|0;4".
    #[arg(long)]
    signature: String,
    #[command(flatten)]
    rank: RankArgs,
}

#[derive(Args, Clone)]
struct BenchArgs {
    /// Number of sampled queries.
    #[arg(long, default_value_t = 1000)]
    queries: usize,
    /// Master seed for query sampling and distortion.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// none, light, medium, strong, or an explicit operation count.
    #[arg(long, default_value = "none")]
    distortion: DistortionLevel,
    /// Standard deviation of bearing noise in degrees.
    #[arg(long, default_value_t = 5.0)]
    angle_sigma: f64,
    /// Bearing noise is clipped to ± this many degrees.
    #[arg(long, default_value_t = 30.0)]
    angle_clip: f64,
    #[command(flatten)]
    rank: RankArgs,
}

impl BenchArgs {
    fn distortion(&self) -> DistortionConfig {
        DistortionConfig {
            level: self.distortion,
            angle_noise_sigma: self.angle_sigma,
            angle_noise_clip: self.angle_clip,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Signature database written by `build`
    #[arg(long)]
    db: PathBuf,
    #[command(flatten)]
    bench: BenchArgs,
    /// Keep only queries whose signature occurs once in the database.
    #[arg(long)]
    unambiguous_only: bool,
    /// Output prefix P; writes P.cdf.csv, P.recall.csv, P.summary.csv,
    /// P.timing.csv and P.manifest.json.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: ObjectInput,
    /// Base build parameters; the swept one is overridden.
    #[command(flatten)]
    grid: GridArgs,
    /// range:R1,R2,... or qlevels:Q1,Q2,... (repeatable).
    #[arg(long, required = true, value_parser = parse_sweep)]
    sweep: Vec<SweepKey>,
    #[command(flatten)]
    bench: BenchArgs,
    /// Also write the table and a manifest to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// City extent in meters, WIDTHxHEIGHT.
    #[arg(long)]
    area: String,
    /// paris, paris-len:L (Paris proportions, mean signature length L at --range) or uniform:N (per km² and class).
    #[arg(long, default_value = "paris")]
    intensity_profile: String,
    /// Range used by paris-len profiles.
    #[arg(long, default_value_t = 30.0)]
    range: f64,
    /// South-west corner as LON,LAT.
    #[arg(long, default_value = "2.35,48.85")]
    origin: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Object CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Signature database written by `build`
    #[arg(long)]
    db: PathBuf,
    /// Print this record instead of the header.
    #[arg(long)]
    cell: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: cannot set worker count: {e}");
        }
    }
    let result = match &cli.command {
        Command::Build(a) => build(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_objects(input: &ObjectInput) -> Result<(Vec<SemanticObject>, GeoBBox)> {
    let alphabet = alphabet_default();
    let format = input.format.unwrap_or_else(|| {
        match input.objects.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("geojson") || e.eq_ignore_ascii_case("json") => {
                InputFormat::Geojson
            }
            _ => InputFormat::Csv,
        }
    });
    let Ingested { objects, errors } = match format {
        InputFormat::Csv => ingest::read_objects_csv(&input.objects, &alphabet),
        InputFormat::Geojson => ingest::read_objects_geojson(&input.objects, &alphabet),
    }
    .with_context(|| format!("reading {}", input.objects.display()))?;
    for e in errors.iter().take(10) {
        eprintln!("warning: {}:{}: {}", input.objects.display(), e.line, e.message);
    }
    if errors.len() > 10 {
        eprintln!("warning: {} more malformed rows skipped", errors.len() - 10);
    }
    if objects.is_empty() {
        bail!("no usable objects in {}", input.objects.display());
    }
    let bbox = match input.bbox {
        Some(b) => b,
        None => extent(&objects)?,
    };
    Ok((objects, bbox))
}

fn extent(objects: &[SemanticObject]) -> Result<GeoBBox> {
    let (mut lo, mut hi) = (objects[0].position, objects[0].position);
    for o in objects {
        lo.lon = lo.lon.min(o.position.lon);
        lo.lat = lo.lat.min(o.position.lat);
        hi.lon = hi.lon.max(o.position.lon);
        hi.lat = hi.lat.max(o.position.lat);
    }
    GeoBBox::new(lo.lon, lo.lat, hi.lon, hi.lat).context("object extent is degenerate; pass --bbox")
}

fn build(a: &BuildArgs) -> Result<()> {
    let (objects, bbox) = read_objects(&a.input)?;
    let params = a.grid.params();
    let db = siggen::build_database(&objects, &params, &bbox, &alphabet_default())?;
    ingest::save_database(&db, &a.out).with_context(|| format!("writing {}", a.out.display()))?;

    let size = fs::metadata(&a.out)?.len();
    let area_km2 = db.len() as f64 * params.grid_step_m * params.grid_step_m / 1e6;
    println!("objects: {}", objects.len());
    println!("records: {}", db.len());
    println!("mean_signature_length: {:.3}", db.mean_signature_length());
    println!("covered_area_km2: {area_km2:.4}");
    println!("file_bytes: {size}");
    if !db.is_empty() {
        println!("bytes_per_record: {:.1}", size as f64 / db.len() as f64);
    }

    let mut m = Manifest::new(
        "build",
        json!({
            "bbox": [bbox.lon_min, bbox.lat_min, bbox.lon_max, bbox.lat_max],
            "params": params,
        }),
    );
    m.input(&a.input.objects)?;
    m.output(&a.out)?;
    m.write(&sibling(&a.out, ".manifest.json"))
}

fn load(path: &Path) -> Result<semsig::SignatureDatabase> {
    ingest::load_database(path).with_context(|| format!("loading {}", path.display()))
}

fn query(a: &QueryArgs) -> Result<()> {
    let db = load(&a.db)?;
    let signature: Signature = a
        .signature
        .parse()
        .map_err(|e| anyhow!("invalid signature {:?}: {e}", a.signature))?;
    let policy = a.rank.policy();
    let ranking = retrieval::rank(&db, &signature, &policy, a.rank.protocol())?;
    println!("rank,cell_id,lon,lat,score");
    for c in ranking.top(&db, policy.t) {
        println!(
            "{},{},{:.7},{:.7},{:.6}",
            c.rank, c.cell_id, c.cell_center.lon, c.cell_center.lat, c.score
        );
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let db = load(&a.db)?;
    let b = &a.bench;
    let mut queries = evaluation::sample_query_set(&db, b.queries, b.seed)?;
    if a.unambiguous_only {
        let (kept, fraction) = evaluation::filter_unambiguous(&queries, &db);
        eprintln!("kept {} of {} queries ({:.4})", kept.len(), queries.len(), fraction);
        queries = kept;
    }
    let report = evaluation::run_benchmark(
        &db,
        &queries,
        &b.rank.policy(),
        &b.distortion(),
        b.rank.protocol(),
    )?;

    let outputs = [
        (".cdf.csv", report.cdf_csv()),
        (".recall.csv", report.recall_csv()),
        (".summary.csv", report.summary_csv()),
    ];
    let mut m = Manifest::new(
        "eval",
        json!({
            "queries": b.queries,
            "unambiguous_only": a.unambiguous_only,
            "distortion": b.distortion(),
            "ranking": b.rank.describe(),
        }),
    )
    .with_seed(b.seed);
    m.input(&a.db)?;
    for (suffix, body) in &outputs {
        let path = sibling(&a.out_prefix, suffix);
        write(&path, body)?;
        m.output(&path)?;
    }
    let timing = sibling(&a.out_prefix, ".timing.csv");
    write(&timing, report.timing_csv())?;
    m.unpinned(&timing);
    m.write(&sibling(&a.out_prefix, ".manifest.json"))?;

    print!("{}", report.summary_csv());
    eprintln!("mean query time: {:.3} ms", report.timing.mean_ms);
    Ok(())
}

#[derive(Clone, Debug)]
enum SweepKey {
    Range(Vec<f64>),
    Levels(Vec<u16>),
}

impl SweepKey {
    fn to_arg(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
        }
        match self {
            SweepKey::Range(v) => format!("range:{}", join(v)),
            SweepKey::Levels(v) => format!("qlevels:{}", join(v)),
        }
    }
}

fn parse_sweep(arg: &str) -> std::result::Result<SweepKey, String> {
    fn values<T: std::str::FromStr>(items: &str, what: &str) -> std::result::Result<Vec<T>, String> {
        let v = items
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| v.parse().map_err(|_| format!("bad {what} {v:?}")))
            .collect::<std::result::Result<Vec<T>, String>>()?;
        if v.is_empty() {
            return Err(format!("no {what} values given"));
        }
        Ok(v)
    }
    let (key, items) = arg
        .split_once(':')
        .ok_or_else(|| format!("expected key:v1,v2,... but got {arg:?}"))?;
    match key.trim() {
        "range" => values(items, "range").map(SweepKey::Range),
        "qlevels" => values(items, "quantization level").map(SweepKey::Levels),
        other => Err(format!("unknown sweep key {other:?} (expected range or qlevels)")),
    }
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let (objects, bbox) = read_objects(&a.input)?;
    let b = &a.bench;
    let setup = SweepSetup {
        policy: b.rank.policy(),
        protocol: b.rank.protocol(),
        distortion: b.distortion(),
        queries: b.queries,
        query_seed: b.seed,
    };
    let base = a.grid.params();
    let alphabet = alphabet_default();
    let mut table = String::from(
        "key,value,records,mean_signature_length,queries,p_error_le_50m,recall_at_10pct\n",
    );
    for key in &a.sweep {
        let (name, rows) = match key {
            SweepKey::Range(r) => (
                "range",
                evaluation::sweep_visibility(&objects, &bbox, &alphabet, &base, r, &setup)?,
            ),
            SweepKey::Levels(q) => (
                "qlevels",
                evaluation::sweep_quantization(&objects, &bbox, &alphabet, &base, q, &setup)?,
            ),
        };
        for r in rows {
            let value = match key {
                SweepKey::Range(_) => r.params.visibility_range_m.to_string(),
                SweepKey::Levels(_) => r.params.quantization_levels.to_string(),
            };
            table.push_str(&format!(
                "{name},{value},{},{:.4},{},{:.6},{:.6}\n",
                r.db_records, r.mean_signature_length, r.queries, r.p_error_le_50m, r.recall_at_10pct
            ));
        }
    }
    print!("{table}");
    if let Some(out) = &a.out {
        write(out, &table)?;
        let mut m = Manifest::new(
            "sweep",
            json!({
                "sweep": a.sweep.iter().map(SweepKey::to_arg).collect::<Vec<_>>(),
                "base_params": base,
                "bbox": [bbox.lon_min, bbox.lat_min, bbox.lon_max, bbox.lat_max],
                "queries": b.queries,
                "distortion": b.distortion(),
                "ranking": b.rank.describe(),
            }),
        )
        .with_seed(b.seed);
        m.input(&a.input.objects)?;
        m.output(out)?;
        m.write(&sibling(out, ".manifest.json"))?;
    }
    Ok(())
}

fn parse_pair(s: &str, sep: char, what: &str) -> Result<(f64, f64)> {
    let (x, y) = s
        .split_once(sep)
        .ok_or_else(|| anyhow!("{what} {s:?} must look like A{sep}B"))?;
    let parse = |v: &str| -> Result<f64> {
        v.trim().parse().map_err(|_| anyhow!("{what} {s:?}: {v:?} is not a number"))
    };
    Ok((parse(x)?, parse(y)?))
}

fn intensities(profile: &str, range: f64) -> Result<Vec<(u8, f64)>> {
    let alphabet = alphabet_default();
    if profile == "paris" {
        return Ok(ingest::paris_intensities());
    }
    if let Some(len) = profile.strip_prefix("paris-len:") {
        let len: f64 = len.parse().map_err(|_| anyhow!("bad mean length {len:?}"))?;
        return Ok(ingest::paris_intensities_for_mean_length(len, range));
    }
    if let Some(n) = profile.strip_prefix("uniform:") {
        let n: f64 = n.parse().map_err(|_| anyhow!("bad intensity {n:?}"))?;
        return Ok(ingest::uniform_intensities(&alphabet, n));
    }
    bail!("unknown intensity profile {profile:?} (expected paris, paris-len:L or uniform:N)")
}

fn synth(a: &SynthArgs) -> Result<()> {
    let (width, height) = parse_pair(&a.area.to_ascii_lowercase(), 'x', "area")?;
    let (lon, lat) = parse_pair(&a.origin, ',', "origin")?;
    let cfg = SyntheticCityConfig {
        origin: GeoPoint::new(lon, lat)?,
        width_m: width,
        height_m: height,
        intensities: intensities(&a.intensity_profile, a.range)?,
        seed: a.seed,
    };
    let city = ingest::generate_synthetic_city(&cfg)?;
    let file = fs::File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    ingest::write_objects_csv(std::io::BufWriter::new(file), &city.objects)?;
    let b = city.bbox;
    println!("objects: {}", city.objects.len());
    println!("bbox: {},{},{},{}", b.lon_min, b.lat_min, b.lon_max, b.lat_max);

    let mut m = Manifest::new("synth", serde_json::to_value(&cfg)?).with_seed(a.seed);
    m.output(&a.out)?;
    m.write(&sibling(&a.out, ".manifest.json"))
}

fn inspect(a: &InspectArgs) -> Result<()> {
    let db = load(&a.db)?;
    match a.cell {
        None => print!("{}", ingest::describe_database(&db)),
        Some(id) => {
            let rec = db.record(id).ok_or_else(|| anyhow!("no record with cell id {id}"))?;
            print!("{}", ingest::describe_record(rec));
        }
    }
    Ok(())
}
