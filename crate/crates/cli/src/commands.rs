use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _};
use log::{info, warn};

use scaleood::detector::{evaluate, score_items, ScoredItem};
use scaleood::embedding_store::{generate_synthetic, load_bundle, write_bundle, SyntheticSpec};
use scaleood::gradcheck::{check_seed, GradCheckConfig};
use scaleood::trainer::{Checkpoint, Trainer};
use scaleood::{Bundle, EmbeddingBundle};

use crate::config::RunConfig;
use crate::{EvalArgs, Failure, GradcheckArgs, ScoreArgs, SynthArgs, TrainArgs, ValidateArgs};

pub struct Context {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
}

type CmdResult = Result<(), Failure>;

fn base_config(ctx: &Context, command: &str) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(ctx.config.as_deref())?;
    cfg.command = command.to_string();
    Ok(cfg)
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> anyhow::Result<&'a Path> {
    p.as_deref().ok_or_else(|| anyhow!("no {what} given (flag or config file)"))
}

fn load(path: &Path) -> anyhow::Result<EmbeddingBundle> {
    if !path.is_dir() {
        bail!("bundle directory {} does not exist", path.display());
    }
    load_bundle(path).with_context(|| format!("loading bundle {}", path.display()))
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint<f64>> {
    if !path.is_file() {
        bail!("checkpoint {} does not exist", path.display());
    }
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_jsonl<T: serde::Serialize>(w: impl Write, rows: &[T]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(w);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn summary(bundle: &Bundle<f64>) -> serde_json::Value {
    let labeled = bundle.labeled().count();
    serde_json::json!({
        "items": bundle.items.len(),
        "id_items": labeled,
        "ood_items": bundle.items.len() - labeled,
        "d": bundle.d,
        "n": bundle.n,
        "num_classes": bundle.num_classes(),
    })
}

pub fn synth(ctx: &Context, args: SynthArgs) -> CmdResult {
    let mut cfg = base_config(ctx, "synth")?;
    if let Some(path) = &args.spec {
        let text = fs::read_to_string(path).with_context(|| format!("reading spec {}", path.display()))?;
        cfg.synth = Some(serde_json::from_str(&text).with_context(|| format!("parsing spec {}", path.display()))?);
    }
    let spec = cfg.synth.clone().unwrap_or_else(SyntheticSpec::benchmark);
    cfg.synth = Some(spec.clone());
    if let Some(s) = ctx.seed {
        cfg.train.seed = s;
    }
    cfg.output = Some(args.out.clone());
    let seed = cfg.train.seed;

    let out = generate_synthetic(&spec, seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let report = match args.train_per_class {
        Some(k) => {
            let (train, test) = out.bundle.split_per_class(k);
            write_bundle(&train, &args.out.join("train"))?;
            write_bundle(&test, &args.out.join("test"))?;
            serde_json::json!({ "train": summary(&train), "test": summary(&test) })
        }
        None => {
            write_bundle(&out.bundle, &args.out)?;
            summary(&out.bundle)
        }
    };
    let hash = cfg.write_echo(&args.out.join("synth_config.json"))?;
    info!("synthetic bundle written to {} (seed {seed}, config sha256 {hash})", args.out.display());
    println!("{report}");
    Ok(())
}

pub fn validate(_ctx: &Context, args: ValidateArgs) -> CmdResult {
    let bundle = load(&args.bundle)?;
    info!("{} is a valid bundle", args.bundle.display());
    println!("{}", summary(&bundle));
    Ok(())
}

fn has_overrides(a: &TrainArgs) -> bool {
    a.epochs.is_some()
        || a.batch_size.is_some()
        || a.lr.is_some()
        || a.tau.is_some()
        || a.k.is_some()
        || a.lambda_ood.is_some()
        || a.renormalize_aggregates
        || a.disable_ood_loss
        || a.disable_entropy_gain_selection
        || a.disable_cross_scale_fusion
        || a.disable_lower_scale_propagation
}

fn apply_overrides(cfg: &mut RunConfig, ctx: &Context, a: &TrainArgs) {
    let t = &mut cfg.train;
    if let Some(s) = ctx.seed {
        t.seed = s;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.tau {
        t.tau = v;
    }
    if let Some(v) = a.k {
        t.k = v;
    }
    if let Some(v) = a.lambda_ood {
        t.lambda_ood = v;
    }
    t.renormalize_aggregates |= a.renormalize_aggregates;
    t.ablations.disable_ood_loss |= a.disable_ood_loss;
    t.ablations.disable_entropy_gain_selection |= a.disable_entropy_gain_selection;
    t.ablations.disable_cross_scale_fusion |= a.disable_cross_scale_fusion;
    t.ablations.disable_lower_scale_propagation |= a.disable_lower_scale_propagation;
}

pub fn train(ctx: &Context, args: TrainArgs) -> CmdResult {
    let mut cfg = base_config(ctx, "train")?;
    if let Some(b) = &args.bundle {
        cfg.bundle = Some(b.clone());
    }
    if let Some(o) = &args.out {
        cfg.output = Some(o.clone());
    }
    let bundle = load(require(&cfg.bundle, "bundle")?)?;
    let out_dir = require(&cfg.output, "output directory")?.to_path_buf();

    let resumed = match &args.resume {
        Some(path) => {
            if has_overrides(&args) || ctx.seed.is_some() {
                return Err(Failure::Usage(anyhow!(
                    "hyperparameter flags cannot be combined with --resume; the checkpoint's config governs"
                )));
            }
            let ckpt = load_checkpoint(path)?;
            cfg.train = ckpt.config.clone();
            cfg.checkpoint = Some(path.clone());
            Some(ckpt)
        }
        None => {
            apply_overrides(&mut cfg, ctx, &args);
            None
        }
    };

    let mut trainer = match resumed {
        Some(ckpt) => Trainer::resume(&bundle, ckpt)?,
        None => Trainer::new(&bundle, cfg.train.clone())?,
    };
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let hash = cfg.write_echo(&out_dir.join("config.json"))?;
    info!("effective config sha256 {hash}");

    let log_path = out_dir.join("train_log.jsonl");
    let mut log_file = if args.resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .with_context(|| format!("opening {}", log_path.display()))?;

    let end = args.stop_after.unwrap_or(usize::MAX).min(cfg.train.epochs);
    while trainer.epoch() < end {
        let entry = trainer.run_epoch()?;
        serde_json::to_writer(&mut log_file, &entry).context("writing training log")?;
        log_file.write_all(b"\n").context("writing training log")?;
    }
    let ckpt_path = out_dir.join("checkpoint.bin");
    trainer.checkpoint().save(&ckpt_path)?;
    info!(
        "checkpoint after epoch {}/{} written to {}",
        trainer.epoch(),
        cfg.train.epochs,
        ckpt_path.display()
    );
    Ok(())
}

fn eval_inputs(
    ctx: &Context,
    command: &str,
    checkpoint: &Option<PathBuf>,
    bundle: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> anyhow::Result<(RunConfig, Checkpoint<f64>, EmbeddingBundle)> {
    let mut cfg = base_config(ctx, command)?;
    if let Some(c) = checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(b) = bundle {
        cfg.bundle = Some(b.clone());
    }
    if let Some(o) = out {
        cfg.output = Some(o.clone());
    }
    let ckpt = load_checkpoint(require(&cfg.checkpoint, "checkpoint")?)?;
    let bundle = load(require(&cfg.bundle, "bundle")?)?;
    if ckpt.params.dim() != bundle.d || ckpt.params.num_classes() != bundle.num_classes() {
        bail!(
            "checkpoint is for d = {}, C = {} but the bundle has d = {}, C = {}",
            ckpt.params.dim(),
            ckpt.params.num_classes(),
            bundle.d,
            bundle.num_classes()
        );
    }
    if bundle.n != ckpt.config.n {
        bail!("bundle has n = {}, checkpoint was trained with n = {}", bundle.n, ckpt.config.n);
    }
    cfg.train = ckpt.config.clone();
    Ok((cfg, ckpt, bundle))
}

pub fn eval(ctx: &Context, args: EvalArgs) -> CmdResult {
    let (cfg, ckpt, bundle) = eval_inputs(ctx, "eval", &args.checkpoint, &args.bundle, &args.out)?;
    let out_dir = require(&cfg.output, "output directory")?.to_path_buf();
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let hash = cfg.write_echo(&out_dir.join("config.json"))?;

    let (mut report, scores) = evaluate(&bundle.items, &ckpt.params, &bundle.text, &cfg.train.objective())?;
    report.config_hash = Some(hash);
    if !report.ood_metrics_available {
        warn!("test bundle has no OOD items; FPR95 and AUROC are absent");
    }
    let report_path = out_dir.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    let scores_path = out_dir.join("scores.jsonl");
    write_jsonl(
        File::create(&scores_path).with_context(|| format!("creating {}", scores_path.display()))?,
        &scores,
    )?;
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    info!(
        "acc {:.4}  fpr95 {}  auroc {}  ({} ID, {} OOD)",
        report.acc,
        fmt(report.fpr95),
        fmt(report.auroc),
        report.counts.id_items,
        report.counts.ood_items
    );
    println!("{}", serde_json::to_string(&report).map_err(anyhow::Error::from)?);
    Ok(())
}

pub fn score(ctx: &Context, args: ScoreArgs) -> CmdResult {
    let (cfg, ckpt, bundle) = eval_inputs(ctx, "score", &args.checkpoint, &args.bundle, &args.out)?;
    cfg.train.objective().alignment.validate()?;
    let scores: Vec<ScoredItem> = score_items(&bundle.items, &ckpt.params, &bundle.text, &cfg.train.objective());
    match &cfg.output {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_jsonl(f, &scores)?;
            info!("{} scores written to {} (config sha256 {})", scores.len(), path.display(), cfg.hash());
        }
        None => write_jsonl(io::stdout().lock(), &scores)?,
    }
    Ok(())
}

pub fn gradcheck(ctx: &Context, args: GradcheckArgs) -> CmdResult {
    let gc = GradCheckConfig {
        d: args.d,
        num_classes: args.classes,
        n: args.n,
        batch: args.batch,
        k: args.k,
        ..GradCheckConfig::default()
    };
    gc.validate()?;
    if args.seeds == 0 {
        return Err(Failure::Usage(anyhow!("--seeds must be >= 1")));
    }
    let first = ctx.seed.unwrap_or(0);
    let mut worst: Option<scaleood::gradcheck::GradCheckReport> = None;
    for seed in first..first + args.seeds {
        let r = check_seed(&gc, seed, args.inject_fault)?;
        info!("seed {seed}: max relative error {:.3e} over {} coordinates", r.max_rel_error, r.coordinates);
        if worst.as_ref().is_none_or(|w| r.max_rel_error > w.max_rel_error) {
            worst = Some(r);
        }
    }
    let worst = worst.expect("at least one seed");
    println!(
        "{}",
        serde_json::json!({
            "max_rel_error": worst.max_rel_error,
            "tolerance": gc.tolerance,
            "worst_seed": worst.seed,
            "worst_coordinate": worst.worst_coordinate,
            "seeds": args.seeds,
        })
    );
    if worst.max_rel_error > gc.tolerance {
        return Err(Failure::Verification(format!(
            "max relative error {:.3e} at seed {} coordinate {} exceeds {:.0e}",
            worst.max_rel_error, worst.seed, worst.worst_coordinate, gc.tolerance
        )));
    }
    Ok(())
}
