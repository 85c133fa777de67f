use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvlr::beam_alignment::{build_beam_lists, RegionAlignment};
use mvlr::harness::config::{parse_estimators, ExperimentConfig};
use mvlr::harness::persist::{get_beam_list, get_model, put_beam_list, put_model, Store};
use mvlr::harness::seeds::{self, STREAM_ALIGN, STREAM_TRAIN};
use mvlr::harness::sweep::{evaluate_fixed, expand_grid, train, write_rows, Models, PointSetup, SweepResult};
use mvlr::harness::Estimator;
use mvlr::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "mvlr", version, about = "Multi-vehicular beam alignment and low-rank channel estimation sweeps")]
struct Cli {
    /// TOML experiment file; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (CSV for sweep/evaluate, store for align/fit).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scenario preset (s1, s2); replaces the file's scenario.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Comma-separated subset of UML,JS,DS,PERFECT.
    #[arg(long, global = true)]
    estimators: Option<String>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn beam lists for every region and save them.
    Align,
    /// Fit JS/DS models on top of a saved alignment.
    Fit {
        #[arg(long)]
        store: PathBuf,
    },
    /// Score saved models on fresh test passages.
    Evaluate {
        #[arg(long)]
        store: PathBuf,
    },
    /// Align, fit and evaluate over the whole grid.
    Sweep,
    /// Print the effective configuration.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &cli.preset {
        cfg.scenario = ExperimentConfig::preset(p)?.scenario;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = &cli.estimators {
        cfg.estimators = parse_estimators(e)?;
    }
    if let Some(o) = &cli.out {
        cfg.output = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// align/fit/evaluate act on the first grid point.
fn first_point(cfg: &ExperimentConfig) -> Result<mvlr::harness::sweep::GridPoint> {
    let points = expand_grid(cfg)?;
    if points.len() > 1 {
        eprintln!("note: using the first of {} grid points; run `sweep` for the full grid", points.len());
    }
    Ok(points[0])
}

fn store_path(cfg: &ExperimentConfig, fallback: &Path) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| fallback.to_path_buf())
}

fn setup_from_store(cfg: &ExperimentConfig, store: &Store) -> Result<PointSetup> {
    let point = first_point(cfg)?;
    let hybrid = cfg.hybrid(point.architecture, point.rf);
    store.check_config(&hybrid)?;
    let lf = get_beam_list(store, "lf")?;
    let lw = get_beam_list(store, "lw")?;
    let pose = cfg.region()?.center_pose();
    let (f, w) = (lf.lookup(&pose)?, lw.lookup(&pose)?);
    let alignment = RegionAlignment {
        region: f.region,
        power: None,
        tx_indices: f.indices.clone(),
        rx_indices: w.indices.clone(),
        f_rf: f.analog.clone(),
        w_rf: w.analog.clone(),
    };
    PointSetup::with_alignment(cfg, point, alignment)
}

fn write_csv_output(cfg: &ExperimentConfig, result: &SweepResult) -> Result<()> {
    match &cfg.output {
        Some(p) => {
            let f = std::fs::File::create(p)?;
            result.write_csv(std::io::BufWriter::new(f))?;
            eprintln!("wrote {} rows to {}", result.rows().len(), p.display());
        }
        None => result.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::ShowConfig => {
            let s = cfg.to_toml_string()?;
            std::io::stdout().write_all(s.as_bytes())?;
        }
        Command::Sweep => {
            let result = mvlr::harness::run_sweep(&cfg)?;
            write_csv_output(&cfg, &result)?;
        }
        Command::Align => {
            let point = first_point(&cfg)?;
            let hybrid = cfg.hybrid(point.architecture, point.rf);
            let scenario = cfg.scenario.resolve()?;
            let mut rng = seeds::rng(cfg.seed, 0, 0, STREAM_ALIGN);
            let (lf, lw) = build_beam_lists(&scenario.environment, &scenario.regions, &hybrid, &cfg.alignment_settings(), &mut rng)?;
            let mut store = Store::new(&hybrid, cfg.seed)?;
            put_beam_list(&mut store, "lf", &lf);
            put_beam_list(&mut store, "lw", &lw);
            let path = store_path(&cfg, Path::new("mvlr_store.bin"));
            store.save(&path)?;
            for (k, (f, w)) in lf.entries.iter().zip(&lw.entries).enumerate() {
                eprintln!("region {k}: tx beams {:?}, rx beams {:?}", f.indices, w.indices);
            }
            eprintln!("wrote {}", path.display());
        }
        Command::Fit { store: input } => {
            let point = first_point(&cfg)?;
            let hybrid = cfg.hybrid(point.architecture, point.rf);
            let mut store = Store::load(input, &hybrid)?;
            let setup = setup_from_store(&cfg, &store)?;
            let mut rng = seeds::rng(cfg.seed, setup.seed_key, 0, STREAM_TRAIN);
            let models = train(&setup, &[Estimator::Js, Estimator::Ds], point.passages, &cfg.rank_rule, &mut rng)?;
            if let Some(m) = &models.js {
                put_model(&mut store, "js", m);
                eprintln!("JS rank {}", m.rank_label());
            }
            if let Some(m) = &models.ds {
                put_model(&mut store, "ds", m);
                eprintln!("DS rank {}", m.rank_label());
            }
            let path = store_path(&cfg, input);
            store.save(&path)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Evaluate { store: input } => {
            let point = first_point(&cfg)?;
            let hybrid = cfg.hybrid(point.architecture, point.rf);
            let store = Store::load(input, &hybrid)?;
            let setup = setup_from_store(&cfg, &store)?;
            let models = Models {
                js: if store.contains("js/meta") { Some(get_model(&store, "js")?) } else { None },
                ds: if store.contains("ds/meta") { Some(get_model(&store, "ds")?) } else { None },
            };
            let result = evaluate_fixed(&cfg, &setup, &models)?;
            let sweep = SweepResult { seed: cfg.seed, points: vec![result] };
            match &cfg.output {
                Some(p) => write_rows(&sweep.rows(), std::io::BufWriter::new(std::fs::File::create(p)?))?,
                None => write_rows(&sweep.rows(), std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Validation(_)) => {
            eprintln!("invalid configuration: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
