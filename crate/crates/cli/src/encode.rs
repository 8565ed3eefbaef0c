use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};

use mmembed_core::dataio::checkpoint::load_checkpoint;
use mmembed_core::dataio::{read_embeddings, write_embeddings, Dtype, Embeddings};
use mmembed_core::encoder::ToyEncoder;
use mmembed_core::formatting::sample_frame_indices;
use mmembed_core::DenseMatrix;

use crate::{engine_config, GlobalArgs};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StoredDtype {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Trained checkpoint
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// UEMB file of input feature rows
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// UEMB file to write
    #[arg(long, value_name = "PATH")]
    output: PathBuf,
    /// Stored value type
    #[arg(long, value_enum, default_value = "f64")]
    dtype: StoredDtype,
    /// Treat rows with ids `<item>#<frame>` as video frames: sample this many
    /// per item, encode and mean-pool [default when given bare: video.frames]
    #[arg(long, value_name = "K", num_args = 0..=1)]
    frames: Option<Option<usize>>,
}

/// Groups `<item>#<frame>` rows by item in first-seen order, frames sorted
/// by index.
fn group_frames(input: &Embeddings) -> anyhow::Result<Vec<(String, Vec<usize>)>> {
    let mut order: Vec<String> = Vec::new();
    let mut frames: BTreeMap<String, Vec<(u64, usize)>> = BTreeMap::new();
    for (row, id) in input.ids().iter().enumerate() {
        let Some((item, frame)) = id.rsplit_once('#') else {
            bail!("row id {id:?} is not of the form <item>#<frame>");
        };
        let frame: u64 = frame
            .parse()
            .with_context(|| format!("frame index in row id {id:?}"))?;
        let entry = frames.entry(item.to_string()).or_insert_with(|| {
            order.push(item.to_string());
            Vec::new()
        });
        entry.push((frame, row));
    }
    Ok(order
        .into_iter()
        .map(|item| {
            let mut f = frames.remove(&item).unwrap_or_default();
            f.sort_unstable();
            (item, f.into_iter().map(|(_, row)| row).collect())
        })
        .collect())
}

fn encode_videos(
    enc: &ToyEncoder,
    input: &Embeddings,
    k: usize,
) -> anyhow::Result<(Vec<String>, DenseMatrix)> {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (item, frame_rows) in group_frames(input)? {
        let picked: Vec<usize> = sample_frame_indices(frame_rows.len(), k)?
            .into_iter()
            .map(|i| frame_rows[i])
            .collect();
        let out = enc.encode_batch(&input.matrix().select_rows(&picked))?;
        let mut mean = vec![0.0; out.cols()];
        for r in out.row_iter() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= out.rows() as f64;
        }
        ids.push(item);
        rows.push(mean);
    }
    let m = if rows.is_empty() {
        DenseMatrix::zeros(0, enc.d_out())
    } else {
        DenseMatrix::from_rows(&rows)?
    };
    Ok((ids, m))
}

pub fn run(global: &GlobalArgs, args: EncodeArgs) -> anyhow::Result<()> {
    let cfg = engine_config(global)?;
    let enc = load_checkpoint(&args.checkpoint)?;
    let input = read_embeddings(&args.input)?;
    if input.dim() != enc.d_in() && !input.is_empty() {
        bail!(
            "{} has {}-dim rows, checkpoint expects {}",
            args.input.display(),
            input.dim(),
            enc.d_in()
        );
    }
    let (ids, out) = match args.frames {
        Some(k) => encode_videos(&enc, &input, k.unwrap_or(cfg.video.frames))?,
        None if input.is_empty() => (Vec::new(), DenseMatrix::zeros(0, enc.d_out())),
        None => (input.ids().to_vec(), enc.encode_batch(input.matrix())?),
    };
    let dtype = match args.dtype {
        StoredDtype::F32 => Dtype::F32,
        StoredDtype::F64 => Dtype::F64,
    };
    write_embeddings(&args.output, &ids, &out, dtype)?;
    eprintln!("encoded {} rows into {}", ids.len(), args.output.display());
    Ok(())
}
