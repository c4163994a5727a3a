use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dnnsched_core::config::{file_sha256, validation_count};
use dnnsched_core::harness::{export, parse_methods, RunManifest};
use dnnsched_core::powernet::{make_dataset, read_samples_csv, train_power_net, write_samples_csv};
use dnnsched_core::schednet::{
    label_topologies, make_sched_dataset, mean_selected_wsr, predict_samples, top_rank_hit_rate,
    train_sched_net,
};
use dnnsched_core::{
    benchmark, generate_many, BenchSeeds, LinkProblem, Models, PowerNet, RunConfig, SchedNet,
    Topology,
};

const POWER_TRAIN: &str = "power_train.csv";
const POWER_VAL: &str = "power_val.csv";
const SCHED_TRAIN: &str = "sched_train.jsonl";
const SCHED_VAL: &str = "sched_val.jsonl";

#[derive(Parser)]
#[command(
    name = "dnnsched",
    version,
    about = "Link scheduling and power allocation: GP labels, neural approximators, benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw random topologies and write one JSON file per seed.
    GenTopo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// GP-label power samples and draw the schedule-network topologies.
    GenDataset {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the power network on a dataset directory.
    TrainPower {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        init_seed: u64,
    },
    /// Train the schedule-value network on power-network WSR targets.
    TrainSched {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        power_model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        init_seed: u64,
    },
    /// Paired, timed comparison of methods over fresh topologies.
    Bench {
        /// Comma-separated, e.g. exhaustive-gp,max-dnn,dqn-dnn-5,greedy-gp,random-gp
        #[arg(long)]
        methods: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        power_model: Option<PathBuf>,
        #[arg(long)]
        sched_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validation metrics of trained models on a dataset directory.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        power_model: PathBuf,
        #[arg(long)]
        sched_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn manifest(command: &str, cfg: &RunConfig, config_path: Option<&Path>) -> Result<RunManifest> {
    let mut m = RunManifest::new(command, cfg.hash()?);
    if let Some(p) = config_path {
        m.inputs.insert(p.display().to_string(), file_sha256(p)?);
    }
    Ok(m)
}

fn add_input(m: &mut RunManifest, path: &Path) -> Result<()> {
    m.inputs
        .insert(path.display().to_string(), file_sha256(path)?);
    Ok(())
}

fn write_topologies(path: &Path, topologies: &[Topology]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for t in topologies {
        serde_json::to_writer(&mut f, t)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn read_topologies(path: &Path) -> Result<Vec<Topology>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t = Topology::from_json(&line)
            .with_context(|| format!("{} line {}", path.display(), k + 1))?;
        out.push(t);
    }
    Ok(out)
}

fn gen_topo(config: Option<&Path>, seed: u64, count: usize, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    fs::create_dir_all(out)?;
    let topologies = generate_many(&cfg.system, seed, count)?;
    let mut m = manifest("gen-topo", &cfg, config)?;
    m.seeds.insert("first_topology".into(), seed);
    for (k, t) in topologies.iter().enumerate() {
        let name = format!("topo_{}.json", seed + k as u64);
        fs::write(out.join(&name), t.to_json()?)?;
        m.outputs.push(name);
    }
    m.write(&out.join("manifest.json"))?;
    println!("wrote {count} topologies to {}", out.display());
    Ok(())
}

fn gen_dataset(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let d = &cfg.dataset;
    fs::create_dir_all(out)?;

    let power_topos = generate_many(&cfg.system, d.seed, d.power_topologies)?;
    let n_val = validation_count(power_topos.len(), d.validation_fraction);
    let ds = make_dataset(&power_topos, &cfg.gp, n_val)?;
    write_samples_csv(&out.join(POWER_TRAIN), &ds.train)?;
    write_samples_csv(&out.join(POWER_VAL), &ds.validation)?;
    println!(
        "power samples: {} train, {} validation, {} dropped after GP failures",
        ds.train.len(),
        ds.validation.len(),
        ds.dropped
    );

    let sched_seed = d.seed.wrapping_add(d.power_topologies as u64);
    let sched_topos = generate_many(&cfg.system, sched_seed, d.sched_topologies)?;
    let n_val = validation_count(sched_topos.len(), d.validation_fraction);
    if n_val == 0 {
        bail!("need at least two schedule-network topologies");
    }
    let (train, val) = sched_topos.split_at(sched_topos.len() - n_val);
    write_topologies(&out.join(SCHED_TRAIN), train)?;
    write_topologies(&out.join(SCHED_VAL), val)?;
    println!(
        "schedule topologies: {} train, {} validation",
        train.len(),
        val.len()
    );

    let mut m = manifest("gen-dataset", &cfg, config)?;
    m.seeds.insert("power_topologies".into(), d.seed);
    m.seeds.insert("sched_topologies".into(), sched_seed);
    m.outputs = [POWER_TRAIN, POWER_VAL, SCHED_TRAIN, SCHED_VAL]
        .map(String::from)
        .to_vec();
    m.write(&out.join("manifest.json"))?;
    Ok(())
}

fn sidecar(model: &Path, suffix: &str) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train_power(config: Option<&Path>, data: &Path, out: &Path, init_seed: u64) -> Result<()> {
    let cfg = load_config(config)?;
    let train = read_samples_csv(&data.join(POWER_TRAIN)).context("reading power training set")?;
    let val = read_samples_csv(&data.join(POWER_VAL)).context("reading power validation set")?;
    let (net, report) = train_power_net(&train, &val, &cfg.system, &cfg.power_train, init_seed)?;
    net.save(out)?;
    let curve = sidecar(out, ".curve.csv");
    report.write_csv(&curve)?;

    let mut m = manifest("train-power", &cfg, config)?;
    m.seeds.insert("init".into(), init_seed);
    m.seeds
        .insert("shuffle".into(), cfg.power_train.shuffle_seed);
    add_input(&mut m, &data.join(POWER_TRAIN))?;
    add_input(&mut m, &data.join(POWER_VAL))?;
    m.outputs = vec![out.display().to_string(), curve.display().to_string()];
    m.write(&sidecar(out, ".manifest.json"))?;

    let (first, best) = (report.initial(), &report.epochs[report.best_epoch]);
    println!(
        "epochs {} (best {}), validation MSE {:.5} -> {:.5}, validation mean WSR {:.2} -> {:.2} Mbit/s",
        report.last().epoch,
        report.best_epoch,
        first.val_mse,
        best.val_mse,
        first.metric.unwrap_or(f64::NAN) / 1e6,
        best.metric.unwrap_or(f64::NAN) / 1e6
    );
    Ok(())
}

fn train_sched(
    config: Option<&Path>,
    power_model: &Path,
    data: &Path,
    out: &Path,
    init_seed: u64,
) -> Result<()> {
    let cfg = load_config(config)?;
    let power = PowerNet::load(power_model)
        .with_context(|| format!("loading {}", power_model.display()))?;
    let train = read_topologies(&data.join(SCHED_TRAIN))?;
    let val = read_topologies(&data.join(SCHED_VAL))?;
    let n_val = val.len();
    let all: Vec<Topology> = train.into_iter().chain(val).collect();
    let ds = make_sched_dataset(&all, &power, n_val)?;
    let (n, mu) = (cfg.system.n_cells, cfg.system.users_per_cell);
    let (net, report) = train_sched_net(
        &ds.train,
        &ds.validation,
        n,
        mu,
        &cfg.sched_train,
        init_seed,
    )?;
    net.save(out)?;
    let curve = sidecar(out, ".curve.csv");
    report.write_csv(&curve)?;

    let mut m = manifest("train-sched", &cfg, config)?;
    m.seeds.insert("init".into(), init_seed);
    m.seeds
        .insert("shuffle".into(), cfg.sched_train.shuffle_seed);
    add_input(&mut m, power_model)?;
    add_input(&mut m, &data.join(SCHED_TRAIN))?;
    add_input(&mut m, &data.join(SCHED_VAL))?;
    m.outputs = vec![out.display().to_string(), curve.display().to_string()];
    m.write(&sidecar(out, ".manifest.json"))?;

    let (first, best) = (report.initial(), &report.epochs[report.best_epoch]);
    println!(
        "epochs {} (best {}), validation MSE {:.5} -> {:.5}, validation mean selected WSR {:.2} -> {:.2} Mbit/s",
        report.last().epoch,
        report.best_epoch,
        first.val_mse,
        best.val_mse,
        first.metric.unwrap_or(f64::NAN) / 1e6,
        best.metric.unwrap_or(f64::NAN) / 1e6
    );
    Ok(())
}

fn bench(
    methods: &str,
    n: usize,
    config: Option<&Path>,
    power_model: Option<&Path>,
    sched_model: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    let methods = parse_methods(methods, cfg.bench.top_k)?;
    let power = power_model
        .map(PowerNet::load)
        .transpose()
        .context("loading power model")?;
    let sched = sched_model
        .map(SchedNet::load)
        .transpose()
        .context("loading schedule model")?;
    let models = Models {
        power: power.as_ref(),
        sched: sched.as_ref(),
    };
    let seeds = BenchSeeds {
        topology_seed: cfg.bench.seed,
        random_seed: cfg.bench.random_seed,
    };
    let report = benchmark(
        &methods,
        n,
        &cfg.system,
        &cfg.gp,
        &models,
        seeds,
        cfg.bench.warmup,
    )?;
    let files = export(&report, out)?;

    let mut m = manifest("bench", &cfg, config)?;
    m.seeds.insert("topologies".into(), seeds.topology_seed);
    m.seeds.insert("random_method".into(), seeds.random_seed);
    for p in [power_model, sched_model].into_iter().flatten() {
        add_input(&mut m, p)?;
    }
    m.outputs = files;
    m.write(&out.join("manifest.json"))?;

    println!(
        "{:<16} {:>14} {:>14} {:>9}",
        "method", "mean WSR Mb/s", "mean time s", "loss %"
    );
    for r in report.summary() {
        println!(
            "{:<16} {:>14.3} {:>14.6} {:>9}",
            r.method.to_string(),
            r.mean_wsr_bps / 1e6,
            r.mean_time_s,
            r.loss_pct.map(|l| format!("{l:.2}")).unwrap_or_default()
        );
    }
    for v in report.violations() {
        eprintln!("warning: {v}");
    }
    Ok(())
}

fn eval(
    config: Option<&Path>,
    data: &Path,
    power_model: &Path,
    sched_model: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    let power = PowerNet::load(power_model)?;
    let val = read_samples_csv(&data.join(POWER_VAL))?;
    let problems = val
        .iter()
        .map(|s| s.problem(&cfg.system))
        .collect::<dnnsched_core::Result<Vec<LinkProblem>>>()?;
    let refs: Vec<&LinkProblem> = problems.iter().collect();
    let pred = power.predict_batch(&refs)?;
    let mut mse = 0.0;
    let (mut net_wsr, mut gp_wsr) = (0.0, 0.0);
    for ((s, p), a) in val.iter().zip(&problems).zip(&pred) {
        for (k, t) in s.target.iter().enumerate() {
            mse += (a.powers_w[k] / p.p_max_w[k] - t).powi(2);
        }
        let gp_powers: Vec<f64> = s
            .target
            .iter()
            .zip(&p.p_max_w)
            .map(|(t, m)| t * m)
            .collect();
        gp_wsr += dnnsched_core::evaluate(p, &gp_powers)?.wsr_bps;
        net_wsr += a.wsr_bps;
    }
    let count = val.len().max(1) as f64;
    let mut summary = serde_json::json!({
        "power": {
            "validation_samples": val.len(),
            "mse": mse / (count * power.n_links as f64),
            "mean_wsr_bps": net_wsr / count,
            "gp_label_mean_wsr_bps": gp_wsr / count,
            "wsr_ratio": net_wsr / gp_wsr,
        }
    });
    if let Some(path) = sched_model {
        let sched = SchedNet::load(path)?;
        let samples = label_topologies(&read_topologies(&data.join(SCHED_VAL))?, &power)?;
        let pred = predict_samples(&sched, &samples)?;
        let best: f64 = samples
            .iter()
            .map(|s| s.targets.iter().cloned().fold(f64::MIN, f64::max))
            .sum();
        let selected = mean_selected_wsr(&pred.view(), &samples);
        summary["sched"] = serde_json::json!({
            "validation_topologies": samples.len(),
            "mean_selected_wsr_bps": selected,
            "mean_best_wsr_bps": best / samples.len().max(1) as f64,
            "top_quarter_hit_rate": top_rank_hit_rate(&pred.view(), &samples, 0.25),
        });
    }
    fs::create_dir_all(out)?;
    fs::write(
        out.join("eval.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    let mut m = manifest("eval", &cfg, config)?;
    add_input(&mut m, power_model)?;
    if let Some(p) = sched_model {
        add_input(&mut m, p)?;
    }
    m.outputs = vec!["eval.json".into()];
    m.write(&out.join("manifest.json"))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenTopo {
            config,
            seed,
            count,
            out,
        } => gen_topo(config.as_deref(), *seed, *count, out),
        Command::GenDataset { config, out } => gen_dataset(config.as_deref(), out),
        Command::TrainPower {
            config,
            data,
            out,
            init_seed,
        } => train_power(config.as_deref(), data, out, *init_seed),
        Command::TrainSched {
            config,
            power_model,
            data,
            out,
            init_seed,
        } => train_sched(config.as_deref(), power_model, data, out, *init_seed),
        Command::Bench {
            methods,
            n,
            config,
            power_model,
            sched_model,
            out,
        } => bench(
            methods,
            *n,
            config.as_deref(),
            power_model.as_deref(),
            sched_model.as_deref(),
            out,
        ),
        Command::Eval {
            config,
            data,
            power_model,
            sched_model,
            out,
        } => eval(
            config.as_deref(),
            data,
            power_model,
            sched_model.as_deref(),
            out,
        ),
    }
}
