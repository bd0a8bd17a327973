//! Command-line front end for training, attacking, defending and scoring.

mod jobs;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use wmocr_core::attacks::{run_attack, AttackConfig, Sidecar, Variant};
use wmocr_core::harness::{
    self, asr_metrics, build_corpus, emit_report, load_corpus, merge_reports, save_corpus, CorpusSpec, EvalOptions,
    ExperimentSpec, Outcome, ReportRow,
};
use wmocr_core::imaging::{pgm, quality_report, Defense, QualityReport};
use wmocr_core::model::{train_with_progress, Decoder, ModelWeights};
use wmocr_core::textgen::{build_dataset, random_strings, FontAtlas};

use jobs::{parse_charset, TrainJob};

#[derive(Parser)]
#[command(name = "wmocr", version, about = "Watermark-shaped adversarial attacks on a micro OCR model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset and train a recognizer.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the synthetic dataset here.
        #[arg(long)]
        save_dataset: Option<PathBuf>,
    },
    /// Write a synthetic dataset (PGM files plus manifest.jsonl).
    Dataset {
        #[arg(long, default_value = "compact")]
        charset: String,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an attack corpus from confusable character pairs.
    Corpus {
        #[arg(long, default_value = "compact")]
        charset: String,
        #[arg(long, default_value_t = 150)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attack every corpus item with one variant.
    Attack {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        timing: Timing,
    },
    /// Post-process attack outputs with a defense such as `MedianBlur@3x3`.
    Defend {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        defense: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a directory of attack (or defended) outputs.
    Eval {
        #[arg(long = "in")]
        input: PathBuf,
        /// Re-recognize the stored images with this model.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Also score transfer to this second model.
        #[arg(long)]
        transfer: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Concatenate report CSVs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        merge: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus, all variants, transfer and the defense battery in one run.
    Experiment {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        transfer: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 150)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated variants (default: all).
        #[arg(long)]
        variants: Option<String>,
        /// Comma-separated defenses (default: none plus the standard battery).
        #[arg(long)]
        defenses: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        timing: Timing,
    },
}

#[derive(Args)]
struct Timing {
    /// Write zero attack times so reports are byte-identical across runs.
    #[arg(long)]
    no_timing: bool,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train {
            config,
            out,
            save_dataset,
        } => train(config.as_deref(), &out, save_dataset.as_deref()),
        Command::Dataset {
            charset,
            count,
            seed,
            out,
        } => {
            let cs = parse_charset(&charset)?;
            let texts = random_strings(&cs, count, 1, 10, seed);
            build_dataset(&texts, count, seed, &FontAtlas::default())?.save(&out)?;
            println!("wrote {count} samples to {}", out.display());
            Ok(())
        }
        Command::Corpus {
            charset,
            count,
            seed,
            threshold,
            out,
        } => {
            let cs = parse_charset(&charset)?;
            let spec = CorpusSpec {
                pair_threshold: threshold,
                ..CorpusSpec::for_charset(&cs, count, seed)
            };
            let items = build_corpus(&cs, &FontAtlas::default(), &spec)?;
            save_corpus(&items, &out)?;
            println!("wrote {} corpus items to {}", items.len(), out.display());
            Ok(())
        }
        Command::Attack {
            weights,
            variant,
            config,
            corpus,
            out,
            timing,
        } => attack(&weights, variant.as_deref(), config.as_deref(), &corpus, &out, timing.no_timing),
        Command::Defend {
            input,
            defense,
            out,
            seed,
        } => defend(&input, &defense, &out, seed),
        Command::Eval {
            input,
            weights,
            transfer,
            report,
        } => eval(&input, weights.as_deref(), transfer.as_deref(), &report),
        Command::Report { merge, out } => {
            let rows = merge_reports(&merge)?;
            emit_report(&rows, &[], &out)?;
            println!("merged {} rows into {}", rows.len(), out.join("report.csv").display());
            Ok(())
        }
        Command::Experiment {
            weights,
            transfer,
            config,
            count,
            seed,
            variants,
            defenses,
            out,
            timing,
        } => {
            let model = ModelWeights::load(&weights).context("loading source weights")?;
            let attack = load_attack_config(config.as_deref())?;
            let variants = match variants {
                Some(list) => list.split(',').map(|v| v.trim().parse()).collect::<Result<_, _>>()?,
                None => Variant::ALL.to_vec(),
            };
            let defenses = match defenses {
                Some(list) => list.split(',').map(|d| d.trim().parse()).collect::<Result<_, _>>()?,
                None => std::iter::once(Defense::None).chain(Defense::standard_battery()).collect(),
            };
            let spec = ExperimentSpec {
                source_weights: weights,
                transfer_weights: transfer,
                corpus: CorpusSpec::for_charset(model.charset(), count, seed),
                eval: EvalOptions {
                    attack,
                    variants,
                    record_timing: !timing.no_timing,
                },
                defenses,
                out_dir: out.clone(),
                seed,
            };
            let report = harness::run_experiment(&spec)?;
            print!("{}", harness::rows_to_csv(&report.all_rows()));
            eprintln!("wrote {} ({:.1} s)", out.join("report.csv").display(), report.elapsed_s);
            Ok(())
        }
    }
}

fn train(config: Option<&Path>, out: &Path, save_dataset: Option<&Path>) -> Result<()> {
    let job = match config {
        Some(p) => TrainJob::load(p)?,
        None => TrainJob::default(),
    };
    let texts = random_strings(&job.charset, job.samples, job.min_len, job.max_len, job.data_seed);
    let dataset = build_dataset(&texts, job.samples, job.data_seed, &FontAtlas::default())?;
    if let Some(dir) = save_dataset {
        dataset.save(dir)?;
    }
    let model = train_with_progress(&job.charset, &dataset, &job.hp, |r| {
        eprintln!(
            "epoch {:2}  lr {:.5}  loss {:.4}  val acc {:.4}",
            r.epoch, r.learning_rate, r.mean_loss, r.val_accuracy
        )
    })?;
    model.save(out)?;
    println!(
        "saved {} (epochs {}, validation accuracy {:.4})",
        out.display(),
        model.epochs,
        model.val_accuracy
    );
    if model.val_accuracy < job.hp.target_accuracy {
        eprintln!("warning: validation accuracy is below the {} target", job.hp.target_accuracy);
    }
    Ok(())
}

fn load_attack_config(path: Option<&Path>) -> Result<AttackConfig> {
    Ok(match path {
        Some(p) => AttackConfig::load(p)?,
        None => AttackConfig::default(),
    })
}

fn attack(weights: &Path, variant: Option<&str>, config: Option<&Path>, corpus: &Path, out: &Path, no_timing: bool) -> Result<()> {
    let model = ModelWeights::load(weights).context("loading weights")?;
    let mut cfg = load_attack_config(config)?;
    if let Some(v) = variant {
        cfg.variant = v.parse()?;
    }
    cfg.validate()?;
    let items = load_corpus(corpus).context("loading corpus")?;
    fs::create_dir_all(out)?;
    let (mut hits, mut errors) = (0, 0);
    for item in &items {
        let stem = format!("{:04}", item.index);
        match run_attack(&model, &item.image, &item.target, &cfg) {
            Ok(mut r) => {
                r.source_text = item.source.clone();
                if no_timing {
                    r.time_s = 0.0;
                }
                hits += r.targeted_success() as usize;
                r.write(out, &stem)?;
            }
            Err(e) => {
                errors += 1;
                fs::write(out.join(format!("{stem}.error")), format!("{e}\n"))?;
            }
        }
    }
    fs::write(out.join("attack.conf"), cfg.to_kv())?;
    println!(
        "{}: {hits}/{} targeted successes, {errors} errors -> {}",
        cfg.variant,
        items.len(),
        out.display()
    );
    Ok(())
}

/// Stems (`NNNN`) of every attack output in `dir`, sorted.
fn stems(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".json") {
            out.push(stem.to_string());
        }
    }
    out.sort();
    Ok(out)
}

fn read_sidecar(dir: &Path, stem: &str) -> Result<Sidecar> {
    let path = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn defend(input: &Path, defense: &str, out: &Path, seed: u64) -> Result<()> {
    let defense: Defense = defense.parse()?;
    fs::create_dir_all(out)?;
    let stems = stems(input)?;
    for stem in &stems {
        let mut sc = read_sidecar(input, stem)?;
        if defense.needs_mask() && !sc.variant.is_watermark() {
            bail!("{defense} needs a watermark mask but {stem} was produced by {}", sc.variant);
        }
        let adv = pgm::read(input.join(format!("{stem}.pgm")))?;
        let mask = pgm::read_mask(input.join(format!("{stem}.mask.pgm")))?;
        let index: u64 = stem.parse().unwrap_or(0);
        let defended = defense.apply(&adv, Some(&mask), seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))?;
        pgm::write(out.join(format!("{stem}.pgm")), &defended)?;
        for suffix in ["orig.pgm", "mask.pgm"] {
            fs::copy(input.join(format!("{stem}.{suffix}")), out.join(format!("{stem}.{suffix}")))?;
        }
        sc.defense = Some(defense.to_string());
        fs::write(out.join(format!("{stem}.json")), serde_json::to_string_pretty(&sc)? + "\n")?;
    }
    println!("applied {defense} to {} images -> {}", stems.len(), out.display());
    Ok(())
}

fn eval(input: &Path, weights: Option<&Path>, transfer: Option<&Path>, report: &Path) -> Result<()> {
    let model = weights.map(ModelWeights::load).transpose().context("loading weights")?;
    let transfer = transfer.map(ModelWeights::load).transpose().context("loading transfer weights")?;
    let stems = stems(input)?;
    if stems.is_empty() {
        bail!("no attack outputs in {}", input.display());
    }
    let mut variant = String::new();
    let mut defense = "none".to_string();
    let mut scored: Vec<(Outcome, QualityReport, f64)> = Vec::new();
    let mut transferred = Vec::new();
    for stem in &stems {
        let sc = read_sidecar(input, stem)?;
        variant = sc.variant.to_string();
        let adv_path = input.join(format!("{stem}.pgm"));
        let orig_path = input.join(format!("{stem}.orig.pgm"));
        let (outcome, quality) = match &model {
            Some(m) => {
                let (adv, orig) = (pgm::read(&adv_path)?, pgm::read(&orig_path)?);
                let outcome = Outcome {
                    clean: m.recognize(&orig, Decoder::Greedy)?,
                    adversarial: m.recognize(&adv, Decoder::Greedy)?,
                    target: sc.target_text.clone(),
                };
                (outcome, quality_report(&orig, &adv)?)
            }
            None => {
                if let Some(d) = &sc.defense {
                    bail!("{stem} was post-processed by {d}; pass --weights to re-recognize it");
                }
                let outcome = Outcome {
                    clean: sc.clean_prediction.clone(),
                    adversarial: sc.prediction.clone(),
                    target: sc.target_text.clone(),
                };
                (outcome, sc.quality)
            }
        };
        if let Some(d) = &sc.defense {
            defense = d.clone();
        }
        if let Some(t) = &transfer {
            let (adv, orig) = (pgm::read(&adv_path)?, pgm::read(&orig_path)?);
            transferred.push(Outcome {
                clean: t.recognize(&orig, Decoder::Greedy)?,
                adversarial: t.recognize(&adv, Decoder::Greedy)?,
                target: sc.target_text.clone(),
            });
        }
        scored.push((outcome, quality, sc.time_s));
    }
    let mut rows = vec![summarize(&variant, &defense, &scored)?];
    if !transferred.is_empty() {
        let (asr_star, asr) = asr_metrics(&transferred)?;
        rows.push(ReportRow {
            defense: "transfer".into(),
            asr_star,
            asr,
            ..rows[0].clone()
        });
    }
    emit_report(&rows, &[], report)?;
    print!("{}", harness::rows_to_csv(&rows));
    Ok(())
}

fn summarize(variant: &str, defense: &str, scored: &[(Outcome, QualityReport, f64)]) -> Result<ReportRow> {
    let outcomes: Vec<Outcome> = scored.iter().map(|s| s.0.clone()).collect();
    let (asr_star, asr) = asr_metrics(&outcomes)?;
    let hits: Vec<&QualityReport> = scored.iter().filter(|s| s.0.hit()).map(|s| &s.1).collect();
    let mean = |f: fn(&QualityReport) -> f64| {
        if hits.is_empty() {
            f64::NAN
        } else {
            hits.iter().map(|q| f(q)).sum::<f64>() / hits.len() as f64
        }
    };
    Ok(ReportRow {
        variant: variant.to_string(),
        defense: defense.to_string(),
        mse: mean(|q| q.mse),
        psnr: mean(|q| q.psnr),
        ssim: mean(|q| q.ssim),
        asr_star,
        asr,
        time_s: scored.iter().map(|s| s.2).sum::<f64>() / scored.len() as f64,
    })
}
