use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use ets_core::analytics::{check_provenance, export_reports, ReportManifest, ReportSet, UsageData};
use ets_core::consensus::{Behavior, ByzantineSpec};
use ets_core::identity::Address;
use ets_core::ledger::{import_ndjson, read_ndjson, verify_blocks, ImportError, LedgerPolicy};
use ets_core::simulator::{
    self, collect_metrics, generate_synthetic, load_population, read_manifest, write_artifacts, write_partial_ledger,
    write_persons_csv, write_trips_csv, PopulationError, PopulationSource, RunManifest, SimulationConfig, SimulationError,
    SyntheticProfile, LEDGER_FILE, PERSONS_FILE, TRIPS_FILE,
};

#[derive(Parser)]
#[command(name = "ets", version, about = "Personal carbon-token trading ledger simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a day of trips through market and consensus and export the ledger
    Simulate(SimulateArgs),
    /// Compute the token-usage reports from a simulate output directory
    Report {
        /// Directory written by `simulate`
        dir: PathBuf,
        /// Report directory; defaults to `<dir>/reports`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit an exported ledger; exit 1 on any violation
    Verify {
        ledger: PathBuf,
        /// Run manifest holding the ledger policy; defaults to a `manifest.json`
        /// beside the ledger, else the policy is inferred from the genesis signers
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print a summary, one block, or one account of an exported ledger
    Inspect {
        ledger: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["user", "address"])]
        height: Option<u64>,
        /// Survey user id, resolved to its address
        #[arg(long, conflicts_with = "address")]
        user: Option<String>,
        #[arg(long)]
        address: Option<String>,
    },
    /// Write a synthetic persons.csv and trips.csv
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3186)]
        users: usize,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation config; relative paths inside resolve against its directory
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    active_nodes: Option<usize>,
    /// Byzantine validator as `<node>:<silent|equivocate|delay>`; repeatable
    #[arg(long, value_parser = parse_byzantine)]
    byzantine: Vec<ByzantineSpec>,
    /// Allow more byzantine validators than the protocol tolerates
    #[arg(long)]
    unsafe_faults: bool,
    /// Synthetic population profile; switches the run to a synthetic population
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Synthetic population size
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_byzantine(s: &str) -> Result<ByzantineSpec, String> {
    let (node, behavior) = s.split_once(':').ok_or("expected <node>:<behavior>")?;
    Ok(ByzantineSpec {
        node: node.parse().map_err(|_| format!("bad node index {node:?}"))?,
        behavior: behavior.parse::<Behavior>()?,
    })
}

/// A failed command: exit code plus the JSON written to stderr.
struct Failure {
    code: u8,
    payload: Value,
}

impl Failure {
    fn new(code: u8, error: &str, message: impl ToString) -> Self {
        Self {
            code,
            payload: json!({ "error": error, "message": message.to_string() }),
        }
    }

    fn input(error: &str, message: impl ToString) -> Self {
        Self::new(2, error, message)
    }

    fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.payload[key] = value.into();
        self
    }
}

fn population_failure(e: &PopulationError) -> Failure {
    match e {
        PopulationError::SchemaError {
            file, row, column, ..
        } => Failure::input("SchemaError", e)
            .with("file", file.as_str())
            .with("row", *row)
            .with("column", column.as_str()),
        PopulationError::DanglingUserRef { row, trip_id, user_id } => Failure::input("DanglingUserRef", e)
            .with("row", *row)
            .with("trip_id", trip_id.as_str())
            .with("user_id", user_id.as_str()),
    }
}

fn simulation_failure(e: &SimulationError) -> Failure {
    match e {
        SimulationError::Config(_) => Failure::input("ConfigError", e),
        SimulationError::Population(p) => population_failure(p),
        SimulationError::Emission(_) => Failure::input("EmissionError", e),
        SimulationError::Reconciliation { hour, .. } => Failure::new(1, "ReconciliationError", e).with("hour", *hour),
        SimulationError::Market(_) => Failure::new(1, "MarketError", e),
        SimulationError::Consensus(_) => Failure::new(1, "ConsensusError", e),
        SimulationError::Ledger(_) => Failure::new(1, "LedgerError", e),
        SimulationError::Registry(_) => Failure::new(1, "RegistryError", e),
    }
}

fn import_failure(e: &ImportError, path: &Path) -> Failure {
    let f = match e {
        ImportError::Parse { line, .. } => Failure::input("ParseError", e).with("line", *line),
        ImportError::Io(_) => Failure::input("IoError", e),
        _ => Failure::input("ImportError", e),
    };
    f.with("file", path.display().to_string())
}

fn io_failure(path: &Path, e: impl ToString) -> Failure {
    Failure::input("IoError", e).with("file", path.display().to_string())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn load_config(args: &SimulateArgs) -> Result<SimulationConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            let mut c = SimulationConfig::from_json(&text)
                .map_err(|e| Failure::input("ConfigError", e).with("file", path.display().to_string()))?;
            c.resolve_paths(path.parent().unwrap_or(Path::new(".")));
            c
        }
        None => SimulationConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.active_nodes {
        config.n_active_nodes = n;
    }
    if !args.byzantine.is_empty() {
        config.network.byzantine = args.byzantine.clone();
    }
    config.allow_unsafe_faults |= args.unsafe_faults;
    if args.profile.is_some() || args.users.is_some() {
        let current = match &config.population {
            PopulationSource::Synthetic { n_users, profile } => (*n_users, profile.clone()),
            PopulationSource::Files { .. } => match SimulationConfig::default().population {
                PopulationSource::Synthetic { n_users, .. } => (n_users, None),
                PopulationSource::Files { .. } => unreachable!("default population is synthetic"),
            },
        };
        config.population = PopulationSource::Synthetic {
            n_users: args.users.unwrap_or(current.0),
            profile: args.profile.clone().or(current.1),
        };
    }
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    Ok(config)
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let config = load_config(args)?;
    let out = config.out.clone();
    let result = match simulator::run(&config) {
        Ok(r) => r,
        Err(failure) => {
            let mut f = simulation_failure(&failure.error);
            if let Some(partial) = &failure.partial {
                let path = write_partial_ledger(partial, &out).map_err(|e| io_failure(&out, e))?;
                f = f.with("partial_ledger", path.display().to_string());
            }
            return Err(f);
        }
    };
    write_artifacts(&result, &out, &now()).map_err(|e| io_failure(&out, e))?;
    let metrics = collect_metrics(&result);
    let throughput = metrics.throughput.map_or("n/a".to_string(), |t| format!("{t:.2}"));
    println!(
        "users={} txs={} throughput={} head={}",
        result.population.persons.len(),
        result.ledger.tx_count(),
        throughput,
        result.ledger.head_hash().to_hex()
    );
    Ok(())
}

fn require(dir: &Path, name: &str) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Failure::input("MissingArtifact", format!("{} not found", path.display())).with("file", path.display().to_string()))
    }
}

fn report(dir: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let ledger_path = require(dir, LEDGER_FILE)?;
    let persons = require(dir, PERSONS_FILE)?;
    let trips = require(dir, TRIPS_FILE)?;
    require(dir, simulator::MANIFEST_FILE)?;
    let manifest = read_manifest(dir).map_err(|e| io_failure(&dir.join(simulator::MANIFEST_FILE), e))?;

    let provenance = |message: String| {
        Failure::new(3, "ProvenanceError", message)
            .with("expected", manifest.ledger_head.as_str())
            .with("file", ledger_path.display().to_string())
    };
    let file = File::open(&ledger_path).map_err(|e| io_failure(&ledger_path, e))?;
    let ledger =
        import_ndjson(BufReader::new(file), Some(manifest.policy.clone())).map_err(|e| provenance(e.to_string()))?;
    check_provenance(&manifest.ledger_head, &ledger).map_err(|e| provenance(e.to_string()))?;

    let population = load_population(&persons, &trips).map_err(|e| population_failure(&e))?;
    let data = UsageData::from_ledger(&ledger, &population.persons, &population.trips);
    let reports = ReportSet::compute(&data);
    let out = out.map_or_else(|| dir.join("reports"), Path::to_path_buf);
    let header = ReportManifest {
        seed: manifest.seed,
        config_hash: manifest.config_hash.clone(),
        ledger_head: manifest.ledger_head.clone(),
        generated_at: now(),
        reports: Vec::new(),
    };
    let files = export_reports(&reports, &header, &out).map_err(|e| io_failure(&out, e))?;
    println!("reports={} dir={}", files.len() - 1, out.display());
    Ok(())
}

/// Policy from an explicit or sibling run manifest, if any.
fn manifest_policy(ledger: &Path, manifest: Option<&Path>) -> Result<Option<LedgerPolicy>, Failure> {
    let dir = match manifest {
        Some(m) => m.parent().unwrap_or(Path::new(".")).to_path_buf(),
        None => ledger.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    let path = manifest.map_or_else(|| dir.join(simulator::MANIFEST_FILE), Path::to_path_buf);
    if manifest.is_none() && !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| Failure::input("ManifestError", e).with("file", path.display().to_string()))?;
    Ok(Some(m.policy))
}

fn verify(path: &Path, manifest: Option<&Path>) -> Result<(), Failure> {
    let policy = manifest_policy(path, manifest)?;
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    let blocks = read_ndjson(BufReader::new(file)).map_err(|e| import_failure(&e, path))?;
    if blocks.is_empty() {
        return Err(import_failure(&ImportError::Empty, path));
    }
    let policy = match policy {
        Some(p) => p,
        None => LedgerPolicy::infer_from_chain(&blocks).ok_or_else(|| import_failure(&ImportError::NoGenesisPolicy, path))?,
    };
    let report = verify_blocks(&policy, &blocks, None);
    if report.is_clean() {
        println!("ok blocks={}", report.blocks_checked);
        return Ok(());
    }
    for v in &report.violations {
        println!("{v}");
    }
    let heights: Vec<u64> = report.heights().into_iter().collect();
    Err(Failure::new(1, "VerificationFailed", format!("{} violation(s)", report.violations.len()))
        .with("heights", heights)
        .with("file", path.display().to_string()))
}

fn inspect(
    path: &Path,
    manifest: Option<&Path>,
    height: Option<u64>,
    user: Option<&str>,
    address: Option<&str>,
) -> Result<(), Failure> {
    let policy = manifest_policy(path, manifest)?;
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    let ledger = import_ndjson(BufReader::new(file), policy).map_err(|e| import_failure(&e, path))?;
    let value = if let Some(h) = height {
        let block = ledger
            .blocks()
            .get(h as usize)
            .ok_or_else(|| Failure::input("NotFound", format!("no block at height {h}")))?;
        serde_json::to_value(block.as_ref()).expect("block serializes")
    } else if let Some(addr) = user.map(Address::derive).or_else(|| address.map(Address::from_raw)) {
        let history: Vec<_> = ledger.transactions().filter(|t| t.touches(&addr)).collect();
        json!({
            "address": addr.as_str(),
            "balance": ledger.wallets().get(&addr).map(|b| b.to_string()),
            "transactions": history,
        })
    } else {
        json!({
            "blocks": ledger.len(),
            "transactions": ledger.tx_count(),
            "accounts": ledger.wallets().len(),
            "minted": ledger.minted().to_string(),
            "head": ledger.head_hash().to_hex(),
        })
    };
    println!("{}", serde_json::to_string_pretty(&value).expect("json"));
    Ok(())
}

fn synth(seed: u64, users: usize, profile: Option<&Path>, out: &Path) -> Result<(), Failure> {
    if users == 0 {
        return Err(Failure::input("ConfigError", "users must be at least 1"));
    }
    let profile = match profile {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
            SyntheticProfile::from_json(&text).map_err(|e| Failure::input("ConfigError", e).with("file", p.display().to_string()))?
        }
        None => SyntheticProfile::default(),
    };
    let population = generate_synthetic(seed, users, &profile);
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let persons = out.join(PERSONS_FILE);
    let trips = out.join(TRIPS_FILE);
    let create = |p: &Path| File::create(p).map_err(|e| io_failure(p, e));
    write_persons_csv(&population.persons, create(&persons)?).map_err(|e| io_failure(&persons, e))?;
    write_trips_csv(&population.trips, create(&trips)?).map_err(|e| io_failure(&trips, e))?;
    println!("users={} trips={}", population.persons.len(), population.trips.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", json!({ "error": "UsageError", "message": e.to_string().trim_end() }));
            return ExitCode::from(2);
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Report { dir, out } => report(dir, out.as_deref()),
        Command::Verify { ledger, manifest } => verify(ledger, manifest.as_deref()),
        Command::Inspect {
            ledger,
            manifest,
            height,
            user,
            address,
        } => inspect(ledger, manifest.as_deref(), *height, user.as_deref(), address.as_deref()),
        Command::Synth {
            seed,
            users,
            profile,
            out,
        } => synth(*seed, *users, profile.as_deref(), out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.payload);
            ExitCode::from(f.code)
        }
    }
}
