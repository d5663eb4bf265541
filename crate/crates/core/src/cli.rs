//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 for user errors (bad flags, missing or invalid files), 2 for
//! numerical failures (divergence, SVD non-convergence, non-finite values).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{report, CurveTarget};
use crate::data::{generate, load_dataset, LoadedData};
use crate::error::Error;
use crate::model::{pretrain_base, MultiDomainNet};
use crate::persist::{
    layer_weights, load_base_weights, load_checkpoint, save_base_weights, write_atomic, RunConfig,
    TensorContainer,
};
use crate::subspace::decompose;
use crate::train::{evaluate, train_loop, OutputPaths};

pub const BASE_FILE: &str = "base.sslw";

#[derive(Debug, Parser)]
#[command(name = "sslora", version, about = "Subspace-constrained multi-domain LoRA on a small MLP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic multi-domain dataset into `data_dir`.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pretrain the backbone on pooled data and write `out_dir/base.sslw`.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Split each layer of a weight file into column space and left null space.
    Decompose {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        /// Per-layer JSON summary (layer, d, d', k, s, threshold).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Train adapters and heads; writes metrics.csv and checkpoint.sslw to `out_dir`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Per-domain accuracy and mean cross-entropy of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Val)]
        split: Split,
    },
    /// Adapter contribution curves (report CSV) and pairwise distances (pairs.csv).
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Target::B)]
        target: Target,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Target {
    B,
    DeltaW,
}

#[derive(Serialize)]
struct LayerSummary {
    layer: usize,
    d: usize,
    #[serde(rename = "d'")]
    d_in: usize,
    k: usize,
    s: usize,
    threshold: f64,
}

#[derive(Serialize)]
struct DomainEval {
    domain: usize,
    accuracy: f64,
    mean_ce: f64,
    count: usize,
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 1,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<Error>() {
        Some(inner) if inner.is_numerical() => 2,
        _ => 1,
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenData { config } => gen_data(&config),
        Command::Pretrain { config } => pretrain(&config),
        Command::Decompose {
            weights,
            threshold,
            out,
            summary,
        } => decompose_cmd(&weights, threshold, &out, summary.as_deref()),
        Command::Train { config, resume } => train(&config, resume.as_deref()),
        Command::Eval { ckpt, data, split } => eval(&ckpt, &data, split),
        Command::Analyze { ckpt, out, target } => analyze(&ckpt, &out, target),
    }
}

fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    Ok(RunConfig::load(path)?)
}

fn load_data(dir: &Path) -> anyhow::Result<LoadedData> {
    load_dataset(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn gen_data(config: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let data = generate(&cfg.data)?;
    crate::data::save_dataset(&data, &cfg.data_dir)?;
    println!("wrote dataset to {}", cfg.data_dir.display());
    Ok(())
}

fn pretrain(config: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let data = load_data(&cfg.data_dir)?;
    let pooled: Vec<_> = data.train.iter().collect();
    let (base, rep) = pretrain_base(&cfg.network, &pooled, &cfg.pretrain)?;
    let path = cfg.out_dir.join(BASE_FILE);
    save_base_weights(&path, &cfg.network, &base)?;
    write_atomic(
        &cfg.out_dir.join("pretrain.json"),
        serde_json::to_string_pretty(&rep)?.as_bytes(),
    )?;
    println!(
        "pretrained {} steps, pooled train accuracy {:.4}; wrote {}",
        rep.steps,
        rep.train_accuracy,
        path.display()
    );
    Ok(())
}

fn decompose_cmd(weights: &Path, threshold: f64, out: &Path, summary: Option<&Path>) -> anyhow::Result<()> {
    let c = TensorContainer::load(weights)?;
    let mut result = TensorContainer::new();
    let mut rows = Vec::new();
    for (l, w) in layer_weights(&c)?.iter().enumerate() {
        let dec = decompose(w, threshold)?;
        result.insert_matrix(format!("layer{l}.U_m"), &dec.u_m);
        result.insert_matrix(format!("layer{l}.U_n"), &dec.u_n);
        result.insert_matrix(format!("layer{l}.P_m"), &dec.p_m);
        result.insert_matrix(format!("layer{l}.P_n"), &dec.p_n);
        result.insert(format!("layer{l}.sigma"), crate::persist::Tensor::from_vector(&dec.sigma));
        rows.push(LayerSummary {
            layer: l,
            d: w.rows(),
            d_in: w.cols(),
            k: dec.k,
            s: dec.s,
            threshold,
        });
    }
    result.metadata.insert("threshold".into(), threshold.to_string());
    result.save(out)?;
    let text = serde_json::to_string_pretty(&rows)?;
    match summary {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => println!("{text}"),
    }
    Ok(())
}

fn train(config: &Path, resume: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let data = load_data(&cfg.data_dir)?;
    if data.manifest.num_domains != cfg.network.num_domains {
        bail!(
            "dataset has {} domains, network expects {}",
            data.manifest.num_domains,
            cfg.network.num_domains
        );
    }
    let (mut net, state) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path).with_context(|| format!("resuming from {}", path.display()))?;
            if ck.meta.network_spec != cfg.network {
                bail!("checkpoint network spec differs from the config");
            }
            (ck.net, ck.state)
        }
        None => {
            let base_path = cfg.out_dir.join(BASE_FILE);
            let base = load_base_weights(&base_path)
                .with_context(|| format!("reading {} (run `pretrain` first)", base_path.display()))?;
            (MultiDomainNet::build(&cfg.network, &base, cfg.adapter_seed)?, None)
        }
    };
    let paths = OutputPaths::in_dir(&cfg.out_dir);
    let outcome = train_loop(&mut net, &data.train, &data.val, &cfg.train, state, Some(&paths))?;
    for (d, r) in outcome.final_val.iter().enumerate() {
        println!("domain {d}: val accuracy {:.4}, mean CE {:.4}", r.accuracy, r.mean_ce);
    }
    println!("wrote {} and {}", paths.checkpoint.display(), paths.metrics.display());
    Ok(())
}

fn eval(ckpt: &Path, data_dir: &Path, split: Split) -> anyhow::Result<()> {
    let ck = load_checkpoint(ckpt)?;
    let data = load_data(data_dir)?;
    let sets = match split {
        Split::Train => &data.train,
        Split::Val => &data.val,
    };
    if sets.len() != ck.net.spec().num_domains {
        bail!("dataset has {} domains, checkpoint expects {}", sets.len(), ck.net.spec().num_domains);
    }
    let rows = sets
        .iter()
        .enumerate()
        .map(|(d, set)| {
            let r = evaluate(&ck.net, set, d)?;
            Ok(DomainEval {
                domain: d,
                accuracy: r.accuracy,
                mean_ce: r.mean_ce,
                count: r.count,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    println!("{}", serde_json::to_string_pretty(&rows)?);
    Ok(())
}

fn analyze(ckpt: &Path, out: &Path, target: Target) -> anyhow::Result<()> {
    let ck = load_checkpoint(ckpt)?;
    let target = match target {
        Target::B => CurveTarget::B,
        Target::DeltaW => CurveTarget::DeltaW,
    };
    let rep = report(&ck.net, target)?;
    write_atomic(out, rep.to_csv().as_bytes())?;
    let pairs = out.with_file_name("pairs.csv");
    write_atomic(&pairs, rep.pairs_csv().as_bytes())?;
    println!("wrote {} and {}", out.display(), pairs.display());
    Ok(())
}
