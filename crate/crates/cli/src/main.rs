use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rtmdnet::checkpoint::Checkpoint;
use rtmdnet::dataset::{read_boxes, DomainDataset, Sequence};
use rtmdnet::eval::ablation::{format_table, load_suite, parse_matrix, run_ablation};
use rtmdnet::eval::bench::{benchmark_extraction, BenchConfig};
use rtmdnet::eval::config::{parse_pairs, RunConfig};
use rtmdnet::eval::metrics::evaluate;
use rtmdnet::eval::synth::{generate_sequence, suite, toy_domains, SyntheticSpec};
use rtmdnet::gradcheck::{run_suite, TOLERANCE};
use rtmdnet::network::Network;
use rtmdnet::pretrain::pretrain_loop;
use rtmdnet::tracker::{parse_results, Tracker, TrackerConfig};
use rtmdnet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "rtmdnet",
    version,
    about = "Real-time multi-domain CNN tracker"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut text = match &self.config {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?,
            None => String::new(),
        };
        for o in &self.overrides {
            text.push('\n');
            text.push_str(o);
        }
        RunConfig::from_text(&text)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Multi-domain pretraining; writes a network checkpoint.
    Pretrain {
        /// Dataset directory with one sub-directory per domain.
        #[arg(long, required_unless_present = "synth_domains")]
        data: Option<PathBuf>,
        /// Train on this many generated toy domains instead of `--data`.
        #[arg(long)]
        synth_domains: Option<usize>,
        /// Frames per generated domain.
        #[arg(long, default_value_t = 30)]
        synth_length: usize,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tracks a sequence from its first ground-truth box.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sequence directory (numbered PNG frames and groundtruth.txt).
        #[arg(long)]
        sequence: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Results file: `frame_index,x,y,w,h,score` per line.
        #[arg(long)]
        out: PathBuf,
        /// Also save the final tracker session here.
        #[arg(long)]
        session_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Success and precision curves of a results file.
    Eval {
        #[arg(long)]
        results: PathBuf,
        /// Ground-truth file, one `x,y,w,h` line per frame.
        #[arg(long)]
        groundtruth: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generates synthetic sequences.
    Synth {
        /// key = value sequence spec; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the fixed 12-sequence evaluation suite instead.
        #[arg(long, conflicts_with_all = ["spec", "domains"])]
        suite: bool,
        /// Write this many toy training domains instead.
        #[arg(long, conflicts_with = "spec")]
        domains: Option<usize>,
        /// Frames per toy domain.
        #[arg(long, default_value_t = 30)]
        length: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Times shared-map extraction against per-candidate forwards.
    Bench {
        /// Network keys plus `bench.n_rois`, `bench.reps`, `bench.warmup`
        /// and `bench.seed`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Runs an ablation matrix over the synthetic suite.
    Ablate {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn pretrain(
    data: Option<PathBuf>,
    synth_domains: Option<usize>,
    synth_length: usize,
    config: ConfigArgs,
    out: PathBuf,
    seed: u64,
) -> Result<()> {
    let cfg = config.load()?;
    if config.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let dataset = match (data, synth_domains) {
        (_, Some(n)) => DomainDataset::new(toy_domains(n, synth_length, seed)?)?,
        (Some(dir), None) => DomainDataset::load(dir)?,
        (None, None) => return Err(Error::Config("pass --data or --synth-domains".into())),
    };
    let outcome = pretrain_loop(&dataset, cfg.network.clone(), cfg.pretrain.clone(), seed)?;
    let mut ckpt = outcome.checkpoint;
    ckpt.metadata.insert("config.hash".into(), cfg.hash());
    ckpt.save(&out)?;
    let h = &outcome.history;
    let mean = |s: &[rtmdnet::head::LossBreakdown]| {
        s.iter().map(|l| l.total).sum::<f64>() / s.len().max(1) as f64
    };
    let k = (h.len() / 10).max(1);
    println!("domains = {}", dataset.len());
    println!("iterations = {}", h.len());
    println!("optimizer_steps = {}", outcome.flushes);
    println!("loss_first_10pct = {:.6}", mean(&h[..k.min(h.len())]));
    println!(
        "loss_last_10pct = {:.6}",
        mean(&h[h.len().saturating_sub(k)..])
    );
    println!("checkpoint = {}", out.display());
    Ok(())
}

fn track(
    checkpoint: PathBuf,
    sequence: PathBuf,
    config: ConfigArgs,
    out: PathBuf,
    session_out: Option<PathBuf>,
    seed: u64,
) -> Result<()> {
    let cfg = config.load()?;
    if config.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let network = Network::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
    let seq = Sequence::load(&sequence)?;
    let tracker_cfg: TrackerConfig = cfg.tracker.clone();
    let gt = seq.groundtruth[0];
    let (mut tracker, init) = Tracker::init(&network, &seq.frames[0], gt, tracker_cfg, seed)?;
    let (x, y, w, h) = gt.to_xywh();
    let mut text = format!("0,{x},{y},{w},{h},{}\n", init.gt_score);
    let mut failures = 0;
    for (i, frame) in seq.frames.iter().enumerate().skip(1) {
        let r = tracker.track_frame(i, frame)?;
        failures += usize::from(!r.success);
        let (x, y, w, h) = r.reported.to_xywh();
        text.push_str(&format!("{i},{x},{y},{w},{h},{}\n", r.score));
    }
    write_file(&out, &text)?;
    if let Some(p) = session_out {
        tracker.save_session(p)?;
    }
    println!("frames = {}", seq.len());
    println!("low_score_frames = {failures}");
    println!("forward_passes = {}", tracker.forward_passes());
    println!("results = {}", out.display());
    Ok(())
}

fn eval(results: PathBuf, groundtruth: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let rows = parse_results(&read_file(&results)?)?;
    for (expect, (idx, _, _)) in rows.iter().enumerate() {
        if *idx != expect {
            return Err(Error::Format {
                what: "results file",
                detail: format!(
                    "row {} has frame index {idx}, expected {expect}",
                    expect + 1
                ),
            });
        }
    }
    let tracked: Vec<_> = rows.iter().map(|r| r.1).collect();
    let report = evaluate(&tracked, &read_boxes(&groundtruth)?)?.to_text();
    match out {
        Some(p) => write_file(&p, &report),
        None => {
            print!("{report}");
            Ok(())
        }
    }
}

fn synth(
    spec: Option<PathBuf>,
    seed: u64,
    whole_suite: bool,
    domains: Option<usize>,
    length: usize,
    out: PathBuf,
) -> Result<()> {
    if whole_suite {
        for e in suite() {
            generate_sequence(&e.spec, e.seed)?.save(out.join(&e.name))?;
            println!("{}", e.name);
        }
        return Ok(());
    }
    if let Some(n) = domains {
        DomainDataset::new(toy_domains(n, length, seed)?)?.save(&out)?;
        println!("domains = {n}");
        return Ok(());
    }
    let spec = match spec {
        Some(p) => SyntheticSpec::from_text(&read_file(&p)?)?,
        None => SyntheticSpec::default(),
    };
    let seq = generate_sequence(&spec, seed)?;
    seq.save(&out)?;
    println!("frames = {}", seq.len());
    Ok(())
}

fn bench(config: Option<PathBuf>, overrides: Vec<String>) -> Result<()> {
    let mut text = match config {
        Some(p) => read_file(&p)?,
        None => String::new(),
    };
    for o in overrides {
        text.push('\n');
        text.push_str(&o);
    }
    let mut rest = String::new();
    let (mut n_rois, mut reps, mut warmup, mut seed) = (256usize, 10usize, 1usize, None);
    for (k, v) in parse_pairs(&text)? {
        let int = |v: &str| -> Result<u64> {
            v.parse()
                .map_err(|_| Error::Config(format!("{k}: cannot parse '{v}'")))
        };
        match k.as_str() {
            "bench.n_rois" => n_rois = int(&v)? as usize,
            "bench.reps" => reps = int(&v)? as usize,
            "bench.warmup" => warmup = int(&v)? as usize,
            "bench.seed" => seed = Some(int(&v)?),
            _ => rest.push_str(&format!("{k} = {v}\n")),
        }
    }
    let run = RunConfig::from_text(&rest)?;
    let mut cfg = BenchConfig::new(run.network, n_rois);
    cfg.reps = reps;
    cfg.warmup = warmup;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    print!("{}", benchmark_extraction(&cfg)?.to_text());
    Ok(())
}

fn gradcheck(instances: usize, seed: u64) -> Result<bool> {
    let report = run_suite(instances, seed)?;
    let mut ok = true;
    for r in &report {
        let pass = r.passed(TOLERANCE);
        ok &= pass;
        println!(
            "{:<20} instances={:<3} worst_rel_err={:.3e} {}",
            r.name,
            r.errors.len(),
            r.worst(),
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn ablate(matrix: PathBuf, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let dir = matrix.parent().unwrap_or(Path::new(".")).to_path_buf();
    let cells = parse_matrix(&read_file(&matrix)?, &dir)?;
    let table = format_table(&run_ablation(&cells, &load_suite()?, seed)?);
    match out {
        Some(p) => write_file(&p, &table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Pretrain {
            data,
            synth_domains,
            synth_length,
            config,
            out,
            seed,
        } => pretrain(data, synth_domains, synth_length, config, out, seed)?,
        Command::Track {
            checkpoint,
            sequence,
            config,
            out,
            session_out,
            seed,
        } => track(checkpoint, sequence, config, out, session_out, seed)?,
        Command::Eval {
            results,
            groundtruth,
            out,
        } => eval(results, groundtruth, out)?,
        Command::Synth {
            spec,
            seed,
            suite,
            domains,
            length,
            out,
        } => synth(spec, seed, suite, domains, length, out)?,
        Command::Bench { config, overrides } => bench(config, overrides)?,
        Command::Gradcheck { instances, seed } => return gradcheck(instances, seed),
        Command::Ablate { matrix, seed, out } => ablate(matrix, seed, out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
