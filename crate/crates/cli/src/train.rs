use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mmembed_core::dataio::checkpoint::save_checkpoint;
use mmembed_core::dataio::read_embeddings;
use mmembed_core::encoder::{LowRankAdapter, ToyEncoder};
use mmembed_core::synthetic::{generate_cluster_task, held_out_hit_at_1, ClusterTaskSpec};
use mmembed_core::train::{train, FeatureSource};

use crate::{engine_config, GlobalArgs};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Checkpoint output path
    #[arg(long, value_name = "PATH", default_value = "model.ckpt")]
    out: PathBuf,
    /// Loss trace output path [default: <out>.loss.tsv]
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// Train on a generated 32-cluster task instead of the config sources
    #[arg(long)]
    synthetic: bool,
    /// Optimizer steps [default: train.steps]
    #[arg(long)]
    steps: Option<usize>,
    /// Gradient-cache chunk size [default: train.chunk_size]
    #[arg(long, value_name = "N")]
    chunk_size: Option<usize>,
    /// Examples per single-source sub-batch [default: sampling.sub_batch]
    #[arg(long, value_name = "N")]
    sub_batch: Option<usize>,
    /// Full batch size [default: sampling.full_batch]
    #[arg(long, value_name = "N")]
    batch: Option<usize>,
    /// Softmax temperature [default: loss.temperature]
    #[arg(long)]
    temperature: Option<f64>,
}

fn load_sources(
    specs: &[mmembed_core::dataio::config::SourceSpec],
) -> anyhow::Result<Vec<FeatureSource>> {
    specs
        .iter()
        .map(|s| {
            let q = read_embeddings(&s.queries)?;
            let t = read_embeddings(&s.targets)?;
            if q.len() != t.len() {
                bail!(
                    "source {:?}: {} has {} rows but {} has {}",
                    s.id,
                    s.queries.display(),
                    q.len(),
                    s.targets.display(),
                    t.len()
                );
            }
            let (_, qm) = q.into_parts();
            let (ids, tm) = t.into_parts();
            Ok(FeatureSource::new(s.id.clone(), s.weight, qm, tm, ids)?)
        })
        .collect()
}

pub fn run(global: &GlobalArgs, args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = engine_config(global)?;
    if let Some(n) = args.steps {
        cfg.train.steps = n;
    }
    if let Some(n) = args.chunk_size {
        cfg.train.chunk_size = n;
    }
    if let Some(n) = args.sub_batch {
        cfg.sampling.sub_batch = n;
    }
    if let Some(n) = args.batch {
        cfg.sampling.full_batch = n;
    }
    if let Some(t) = args.temperature {
        cfg.loss.temperature = t;
    }
    cfg.validate()?;

    let (sources, synthetic) = if args.synthetic {
        let task = generate_cluster_task(&ClusterTaskSpec {
            seed: cfg.seed,
            ..ClusterTaskSpec::default()
        })?;
        (task.sources.clone(), Some(task))
    } else {
        if cfg.train.sources.is_empty() {
            bail!("no [[train.sources]] in the config; pass --config or --synthetic");
        }
        (load_sources(&cfg.train.sources)?, None)
    };
    let d_in = sources[0].queries.cols();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut encoder = ToyEncoder::random(d_in, cfg.train.hidden, cfg.train.out_dim, &mut rng);
    if cfg.train.adapter_rank > 0 {
        let adapter = LowRankAdapter::init(
            cfg.train.hidden,
            cfg.train.out_dim,
            cfg.train.adapter_rank,
            cfg.train.adapter_alpha,
            &mut rng,
        )?;
        encoder = encoder.with_adapter(adapter)?;
    }

    let outcome = train(&cfg.train_config(), &sources, encoder)?;
    save_checkpoint(&args.out, &outcome.encoder)?;
    let trace_path = args.trace.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".loss.tsv");
        PathBuf::from(p)
    });
    let mut trace = String::from("step\tloss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        let _ = writeln!(trace, "{}\t{l:?}", i + 1);
    }
    fs::write(&trace_path, trace).with_context(|| format!("writing {}", trace_path.display()))?;

    let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
    eprintln!(
        "trained {} steps, final loss {last:.6}; checkpoint {}, trace {}",
        outcome.losses.len(),
        args.out.display(),
        trace_path.display()
    );
    if let Some(task) = synthetic {
        eprintln!(
            "held-out hit@1 {:.4}",
            held_out_hit_at_1(&outcome.encoder, &task)?
        );
    }
    Ok(())
}
