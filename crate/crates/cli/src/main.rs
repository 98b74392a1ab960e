use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use adamatte_core::io::{
    read_sequence_dir, to_matte, write_sequence_dir, MetricsDocument, SequenceMeta, SequenceMetrics,
};
use adamatte_core::losses::pseudo_mask;
use adamatte_core::metrics::{Matte, MetricReport};
use adamatte_core::pipeline::train::{train_stage, TrainConfig};
use adamatte_core::pipeline::{bidirectional_infer, checkpoint};
use adamatte_core::synth::{generate_sequence, Corruption, SceneMode, SceneSpec};
use adamatte_core::{
    run_sequence, Ablation, AdaMatte, AttentionMode, Error, InitialMask, Result, UpdateMode,
};
use clap::{Parser, Subcommand, ValueEnum};

/// Memory-based video matting at desk scale: synthesize data, train,
/// run inference and score mattes.
#[derive(Parser)]
#[command(name = "adamatte", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled sequence directory.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        /// `N` or `HxW`, multiples of 16.
        #[arg(long, default_value = "64", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, value_enum, default_value_t = SceneArg::Dynamic)]
        mode: SceneArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model and write a checkpoint plus a JSON-lines trace.
    Train {
        /// JSON training configuration; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StageArg::All)]
        stage: StageArg,
        /// Continue from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Trace file; defaults to `<out>.trace.jsonl`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Predict mattes for a sequence directory.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `oracle`, `corrupted:R`, `corrupted:KIND:R` (dilate, erode,
        /// flip_region) or `file:PATH`.
        #[arg(long, default_value = "oracle", value_parser = parse_init)]
        init: InitialMask,
        #[arg(long, value_enum, default_value_t = DirectionArg::Forward)]
        direction: DirectionArg,
        #[arg(long, value_enum, default_value_t = AttnArg::Both)]
        ablate_attn: AttnArg,
        #[arg(long, value_enum, default_value_t = UpdateArg::Mask)]
        ablate_update: UpdateArg,
    },
    /// Score predicted mattes against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        conn: Switch,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneArg {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Forward,
    Bi,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttnArg {
    Both,
    Short,
    Long,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpdateArg {
    Mask,
    Alpha,
    None,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad size `{s}`: {e}"))
    };
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn parse_init(s: &str) -> std::result::Result<InitialMask, String> {
    if s == "oracle" {
        return Ok(InitialMask::Oracle);
    }
    if let Some(path) = s.strip_prefix("file:") {
        return Ok(InitialMask::File(path.into()));
    }
    let Some(rest) = s.strip_prefix("corrupted:") else {
        return Err(format!("unknown initial mask `{s}`"));
    };
    let (kind, radius) = match rest.split_once(':') {
        Some((k, r)) => {
            let kind = match k {
                "dilate" => Corruption::Dilate,
                "erode" => Corruption::Erode,
                "flip_region" => Corruption::FlipRegion,
                _ => return Err(format!("unknown corruption `{k}`")),
            };
            (kind, r)
        }
        None => (Corruption::Dilate, rest),
    };
    let magnitude = radius
        .parse()
        .map_err(|e| format!("bad corruption radius `{radius}`: {e}"))?;
    Ok(InitialMask::Corrupted {
        kind,
        magnitude,
        seed: 0,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            seed,
            frames,
            size,
            mode,
            out,
        } => synth(seed, frames, size, mode, &out),
        Command::Train {
            config,
            stage,
            from,
            out,
            trace,
        } => train(config.as_deref(), stage, from.as_deref(), &out, trace),
        Command::Infer {
            ckpt,
            input,
            out,
            init,
            direction,
            ablate_attn,
            ablate_update,
        } => {
            let ablation = Ablation {
                attention: match ablate_attn {
                    AttnArg::Both => AttentionMode::Both,
                    AttnArg::Short => AttentionMode::ShortOnly,
                    AttnArg::Long => AttentionMode::LongOnly,
                },
                update: match ablate_update {
                    UpdateArg::Mask => UpdateMode::Mask,
                    UpdateArg::Alpha => UpdateMode::Alpha,
                    UpdateArg::None => UpdateMode::None,
                },
            };
            infer(&ckpt, &input, &out, &init, direction, ablation)
        }
        Command::Eval {
            pred,
            gt,
            conn,
            out,
        } => eval(&pred, &gt, conn == Switch::On, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn synth(seed: u64, frames: usize, size: (usize, usize), mode: SceneArg, out: &Path) -> Result<()> {
    let mode = match mode {
        SceneArg::Static => SceneMode::StaticBg,
        SceneArg::Dynamic => SceneMode::DynamicBg,
    };
    let unit = size.0.min(size.1) as f64 / 64.0;
    let spec = SceneSpec::random(seed, frames, size, mode, (0.5 * unit, 2.0 * unit));
    let seq = generate_sequence(&spec)?;
    let meta = SequenceMeta {
        height: size.0,
        width: size.1,
        frames,
        fps: 30.0,
        mode: match mode {
            SceneMode::StaticBg => "static_bg".into(),
            SceneMode::DynamicBg => "dynamic_bg".into(),
        },
    };
    let mask = pseudo_mask(&seq.alpha[0], 0.5)?;
    write_sequence_dir(out, &meta, Some(&seq.frames), &seq.alpha, Some(&mask))?;
    println!(
        "wrote {frames} frames of {}×{} to {}",
        size.0,
        size.1,
        out.display()
    );
    Ok(())
}

fn train(
    config: Option<&Path>,
    stage: StageArg,
    from: Option<&Path>,
    out: &Path,
    trace: Option<PathBuf>,
) -> Result<()> {
    let cfg: TrainConfig = match config {
        Some(path) => serde_json::from_slice(&std::fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?)?,
        None => TrainConfig::default(),
    };
    cfg.validate()?;
    let mut model = match from {
        Some(path) => checkpoint::load(path)?,
        None => AdaMatte::new(cfg.model.clone(), cfg.seed)?,
    };
    let trace_path = trace.unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".trace.jsonl");
        PathBuf::from(name)
    });
    let file = File::create(&trace_path).map_err(|e| Error::Io {
        path: trace_path.clone(),
        source: e,
    })?;
    let mut writer = BufWriter::new(file);
    let stages: Vec<u8> = match stage {
        StageArg::One => vec![1],
        StageArg::Two => vec![2],
        StageArg::Three => vec![3],
        StageArg::All => vec![1, 2, 3],
    };
    let mut write_error = None;
    for s in stages {
        let result = train_stage(&mut model, &cfg, s, |record| {
            let line = serde_json::to_string(record).expect("trace records serialize");
            if let Err(e) = writeln!(writer, "{line}") {
                write_error.get_or_insert(e);
            }
        });
        writer.flush().ok();
        if let Err(e) = result {
            if matches!(e, Error::NonFiniteLoss { .. }) {
                let mut dump = out.as_os_str().to_owned();
                dump.push(".failed");
                checkpoint::save(&model, Path::new(&dump))?;
                eprintln!(
                    "state before the failing step saved to {}",
                    Path::new(&dump).display()
                );
            }
            return Err(e);
        }
        println!("stage {s} done");
    }
    if let Some(e) = write_error {
        return Err(Error::Io {
            path: trace_path,
            source: e,
        });
    }
    checkpoint::save(&model, out)?;
    println!(
        "checkpoint written to {}, trace to {}",
        out.display(),
        trace_path.display()
    );
    Ok(())
}

fn infer(
    ckpt: &Path,
    input: &Path,
    out: &Path,
    init: &InitialMask,
    direction: DirectionArg,
    ablation: Ablation,
) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let data = read_sequence_dir(input)?;
    let frames = data
        .frames
        .ok_or_else(|| Error::Contract(format!("{} contains no frames", input.display())))?;
    let mask = match init {
        InitialMask::Oracle | InitialMask::Corrupted { .. } => {
            let alphas = data.alphas.as_ref().ok_or_else(|| {
                Error::Contract(format!(
                    "{} has no ground-truth alpha for an oracle mask",
                    input.display()
                ))
            })?;
            init.resolve(Some(&alphas[0]))?
        }
        InitialMask::File(_) => init.resolve(None)?,
    };
    let (alphas, timings) = match direction {
        DirectionArg::Forward => {
            let o = run_sequence(&model, &frames, &mask, ablation)?;
            (o.alphas, o.timings)
        }
        DirectionArg::Bi => {
            let o = bidirectional_infer(&model, &frames, &mask, ablation)?;
            let timings = o
                .forward
                .timings
                .iter()
                .zip(&o.reverse.timings)
                .map(|(a, b)| *a + *b)
                .collect();
            (o.reverse.alphas, timings)
        }
    };
    let (h, w) = (frames[0].shape()[1], frames[0].shape()[2]);
    let meta = SequenceMeta {
        height: h,
        width: w,
        frames: alphas.len(),
        fps: data.meta.map_or(30.0, |m| m.fps),
        mode: "inferred".into(),
    };
    write_sequence_dir(out, &meta, None, &alphas, None)?;
    let total: Duration = timings.iter().sum();
    println!(
        "wrote {} mattes to {} ({:.1} ms/frame)",
        alphas.len(),
        out.display(),
        total.as_secs_f64() * 1e3 / timings.len().max(1) as f64
    );
    Ok(())
}

fn mattes(dir: &Path) -> Result<Option<Vec<Matte>>> {
    read_sequence_dir(dir)?
        .alphas
        .map(|a| a.iter().map(to_matte).collect())
        .transpose()
}

/// `(name, pred dir, gt dir)` for a single sequence directory or for every
/// subdirectory of `pred` that `gt` also has.
fn pairs(pred: &Path, gt: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let name = |p: &Path| {
        p.file_name().map_or_else(
            || p.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        )
    };
    if read_sequence_dir(pred)?.alphas.is_some() {
        return Ok(vec![(name(pred), pred.to_path_buf(), gt.to_path_buf())]);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(pred)
        .map_err(|e| Error::Io {
            path: pred.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::Contract(format!(
            "{} holds no mattes",
            pred.display()
        )));
    }
    Ok(subdirs
        .into_iter()
        .map(|p| {
            let n = name(&p);
            (n.clone(), p, gt.join(n))
        })
        .collect())
}

fn eval(pred: &Path, gt: &Path, conn: bool, out: &Path) -> Result<()> {
    let mut sequences = Vec::new();
    for (name, p, g) in pairs(pred, gt)? {
        let missing = |d: &Path| Error::Contract(format!("{} holds no mattes", d.display()));
        let pm = mattes(&p)?.ok_or_else(|| missing(&p))?;
        let gm = mattes(&g)?.ok_or_else(|| missing(&g))?;
        let report = MetricReport::compute(&pm, &gm, conn)?;
        sequences.push(SequenceMetrics { name, report });
    }
    let config = serde_json::json!({
        "pred": pred.display().to_string(),
        "gt": gt.display().to_string(),
        "conn": conn,
    });
    let doc = MetricsDocument::new(config, sequences);
    adamatte_core::io::atomic_write(out, &serde_json::to_vec_pretty(&doc)?)?;
    if let Some(a) = &doc.aggregate {
        let opt = |v: Option<f64>| v.map_or("n/a".to_owned(), |x| format!("{x:.3}"));
        println!(
            "MAD {:.3}  MSE {:.3}  Grad {:.3}  Conn {}  dtSSD {}",
            a.mad,
            a.mse,
            a.grad,
            opt(a.conn),
            opt(a.dtssd)
        );
    }
    Ok(())
}
