//! End-to-end evaluation: corpus construction from confusable character
//! pairs, batch attacks, transfer to a second model, the defense battery, and
//! report files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{attack_mask, run_attack, AttackConfig, AttackResult, Variant};
use crate::charset::Charset;
use crate::error::{invalid, Error, Result};
use crate::imaging::{lenient_f64, pgm, quality_report, Defense, Image, QualityReport};
use crate::model::{Decoder, ModelWeights};
use crate::textgen::{mine_confusable_pairs, paste_watermark, render_line, FontAtlas, LineSpec, WatermarkSpec};

/// Kind of single-character change an item asks for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Substitution,
    Deletion,
    Insertion,
}

/// A one-character edit at a character position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edit {
    Substitute { at: usize, with: char },
    Delete { at: usize },
    /// Inserts `ch` before position `at`.
    Insert { at: usize, ch: char },
}

impl Edit {
    pub fn kind(&self) -> EditKind {
        match self {
            Edit::Substitute { .. } => EditKind::Substitution,
            Edit::Delete { .. } => EditKind::Deletion,
            Edit::Insert { .. } => EditKind::Insertion,
        }
    }
}

pub fn apply_edit(text: &str, edit: Edit) -> Result<String> {
    let mut chars: Vec<char> = text.chars().collect();
    let out_of_range = |at: usize| invalid(format!("edit position {at} outside {text:?}"));
    match edit {
        Edit::Substitute { at, with } => *chars.get_mut(at).ok_or_else(|| out_of_range(at))? = with,
        Edit::Delete { at } => {
            if at >= chars.len() {
                return Err(out_of_range(at));
            }
            chars.remove(at);
        }
        Edit::Insert { at, ch } => {
            if at > chars.len() {
                return Err(out_of_range(at));
            }
            chars.insert(at, ch);
        }
    }
    Ok(chars.into_iter().collect())
}

/// Sentence templates made of characters in `charset`.
pub fn default_templates(charset: &Charset) -> Vec<String> {
    const CANDIDATES: &[&str] = &[
        "CLASS AT 1",
        "CAST 2019",
        "SALT 4560",
        "LAST CALL",
        "TALL CAT 7",
        "CATS 2024",
        "ACT 38 CLS",
        "STALL 96",
        "COAST 1837",
        "TACT 5 LOT",
        "ATLAS 2 3",
        "SCALA 0789",
        "class is over at 1",
        "call at 9 pm",
        "total 4.35",
    ];
    CANDIDATES
        .iter()
        .filter(|t| t.chars().all(|c| charset.contains(c)))
        .map(|t| t.to_string())
        .collect()
}

/// How the attack corpus is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub count: usize,
    /// Minimum glyph similarity for a confusable pair.
    pub pair_threshold: f64,
    pub templates: Vec<String>,
    /// In every block of this many items the second-to-last asks for a
    /// deletion and the last for an insertion (values below 3 disable both).
    pub edit_period: usize,
    /// Restrict edits to characters under this watermark, when it fits.
    pub focus: Option<WatermarkSpec>,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn for_charset(charset: &Charset, count: usize, seed: u64) -> Self {
        Self {
            count,
            pair_threshold: 0.8,
            templates: default_templates(charset),
            edit_period: 10,
            focus: Some(WatermarkSpec::default()),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub index: usize,
    pub image: Image,
    pub source: String,
    pub target: String,
    pub kind: EditKind,
}

/// Character positions of `text` whose glyph cell is at least half covered
/// by the focus watermark (all positions when there is no focus or it does not fit).
fn candidate_positions(text: &str, atlas: &FontAtlas, focus: Option<&WatermarkSpec>) -> Vec<usize> {
    let n = text.chars().count();
    let all: Vec<usize> = (0..n).collect();
    let Some(spec) = focus else { return all };
    let width = crate::textgen::line_width(text, atlas);
    let Ok(mask) = crate::textgen::watermark_mask(spec, crate::textgen::LINE_HEIGHT, width) else {
        return all;
    };
    let cell = atlas.cell_width();
    let covered: Vec<usize> = (0..n)
        .filter(|&i| {
            let hit = (i * cell..(i + 1) * cell)
                .filter(|&x| (0..mask.height()).any(|y| mask.get(y, x)))
                .count();
            2 * hit >= cell
        })
        .collect();
    if covered.is_empty() {
        all
    } else {
        covered
    }
}

/// Renders one clean line per item and derives its target by a single
/// confusable substitution (or, periodically, a deletion or insertion).
pub fn build_corpus(charset: &Charset, atlas: &FontAtlas, spec: &CorpusSpec) -> Result<Vec<CorpusItem>> {
    if spec.count == 0 {
        return Err(invalid("corpus count must be at least 1"));
    }
    if spec.templates.is_empty() {
        return Err(invalid("no corpus templates"));
    }
    let pairs = mine_confusable_pairs(charset, atlas, spec.pair_threshold)?;
    if pairs.is_empty() {
        return Err(invalid(format!(
            "no confusable pairs above similarity {}",
            spec.pair_threshold
        )));
    }
    let partners = |c: char| -> Vec<char> {
        pairs
            .iter()
            .filter(|&&(a, b, _)| a != ' ' && b != ' ')
            .filter_map(|&(a, b, _)| {
                if a == c {
                    Some(b)
                } else if b == c {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    };
    let usable: Vec<(&String, Vec<usize>)> = spec
        .templates
        .iter()
        .map(|t| {
            let chars: Vec<char> = t.chars().collect();
            let positions = candidate_positions(t, atlas, spec.focus.as_ref())
                .into_iter()
                .filter(|&i| chars[i] != ' ' && !partners(chars[i]).is_empty())
                .collect::<Vec<_>>();
            (t, positions)
        })
        .filter(|(_, p)| !p.is_empty())
        .collect();
    if usable.is_empty() {
        return Err(invalid("no template has a character with a confusable partner"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut items = Vec::with_capacity(spec.count);
    for index in 0..spec.count {
        let (template, positions) = &usable[index % usable.len()];
        let source = (*template).clone();
        let chars: Vec<char> = source.chars().collect();
        let at = *positions.choose(&mut rng).expect("nonempty");
        let options = partners(chars[at]);
        let partner = options[rng.gen_range(0..options.len())];
        let period = spec.edit_period;
        let edit = match index % period.max(1) {
            p if period >= 3 && p == period - 2 => Edit::Delete { at },
            p if period >= 3 && p == period - 1 => Edit::Insert { at, ch: partner },
            _ => Edit::Substitute { at, with: partner },
        };
        let target = apply_edit(&source, edit)?;
        let image = render_line(&LineSpec::new(source.as_str()), atlas)?;
        items.push(CorpusItem {
            index,
            image,
            source,
            target,
            kind: edit.kind(),
        });
    }
    Ok(items)
}

/// Writes `NNNN.pgm` plus `corpus.jsonl` with `{"file","source","target","kind"}`.
pub fn save_corpus(items: &[CorpusItem], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut lines = String::new();
    for item in items {
        let file = format!("{:04}.pgm", item.index);
        pgm::write(dir.join(&file), &item.image)?;
        let entry = CorpusEntry {
            file,
            source: item.source.clone(),
            target: item.target.clone(),
            kind: item.kind,
        };
        lines.push_str(&serde_json::to_string(&entry)?);
        lines.push('\n');
    }
    fs::write(dir.join("corpus.jsonl"), lines)?;
    Ok(())
}

pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<CorpusItem>> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join("corpus.jsonl"))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(index, line)| {
            let e: CorpusEntry = serde_json::from_str(line)?;
            Ok(CorpusItem {
                index,
                image: pgm::read(dir.join(&e.file))?,
                source: e.source,
                target: e.target,
                kind: e.kind,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusEntry {
    file: String,
    source: String,
    target: String,
    kind: EditKind,
}

/// What the recognizer said before and after an attack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub clean: String,
    pub adversarial: String,
    pub target: String,
}

impl Outcome {
    pub fn hit(&self) -> bool {
        self.adversarial == self.target
    }

    pub fn changed_or_hit(&self) -> bool {
        self.hit() || self.adversarial != self.clean
    }
}

/// `(ASR*, ASR)`: the targeted-success rate and the rate of outputs that hit
/// the target or differ from the clean prediction.
pub fn asr_metrics(outcomes: &[Outcome]) -> Result<(f64, f64)> {
    if outcomes.is_empty() {
        return Err(invalid("no outcomes to score"));
    }
    let n = outcomes.len() as f64;
    let hits = outcomes.iter().filter(|o| o.hit()).count() as f64;
    let any = outcomes.iter().filter(|o| o.changed_or_hit()).count() as f64;
    Ok((hits / n, any / n))
}

/// One line of a results table. Noise metrics are means over items whose
/// attack hit the target (`NaN` when there are none).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub defense: String,
    #[serde(with = "lenient_f64")]
    pub mse: f64,
    #[serde(with = "lenient_f64")]
    pub psnr: f64,
    #[serde(with = "lenient_f64")]
    pub ssim: f64,
    pub asr_star: f64,
    pub asr: f64,
    pub time_s: f64,
}

pub const CSV_HEADER: &str = "variant,defense,mse,psnr,ssim,asr_star,asr,time_s";

/// Name of the paste-only baseline row.
pub const WM0: &str = "WM0";

/// Per-item result of one variant: the attack output or the error message.
pub type ItemResult = std::result::Result<AttackResult, String>;

/// All item results of one variant, in corpus order.
#[derive(Clone, Debug)]
pub struct VariantRun {
    pub name: String,
    pub items: Vec<ItemResult>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn make_row(variant: &str, defense: &str, scored: &[(Outcome, QualityReport, f64)], noise_over_all: bool) -> Result<ReportRow> {
    let outcomes: Vec<Outcome> = scored.iter().map(|s| s.0.clone()).collect();
    let (asr_star, asr) = asr_metrics(&outcomes)?;
    let noisy: Vec<&QualityReport> = scored
        .iter()
        .filter(|s| noise_over_all || s.0.hit())
        .map(|s| &s.1)
        .collect();
    Ok(ReportRow {
        variant: variant.to_string(),
        defense: defense.to_string(),
        mse: mean(noisy.iter().map(|q| q.mse)),
        psnr: mean(noisy.iter().map(|q| q.psnr)),
        ssim: mean(noisy.iter().map(|q| q.ssim)),
        asr_star,
        asr,
        time_s: mean(scored.iter().map(|s| s.2)),
    })
}

fn failed_entry(item: &CorpusItem, clean: &str) -> (Outcome, QualityReport, f64) {
    (
        Outcome {
            clean: clean.to_string(),
            adversarial: clean.to_string(),
            target: item.target.clone(),
        },
        QualityReport {
            mse: 0.0,
            psnr: f64::INFINITY,
            psnr_8bit: f64::INFINITY,
            ssim: 1.0,
        },
        0.0,
    )
}

fn score_run(run: &VariantRun, corpus: &[CorpusItem], clean: &[String]) -> Vec<(Outcome, QualityReport, f64)> {
    run.items
        .iter()
        .zip(corpus)
        .zip(clean)
        .map(|((r, item), c)| match r {
            Ok(r) => (
                Outcome {
                    clean: r.clean_prediction.clone(),
                    adversarial: r.prediction.clone(),
                    target: r.target_text.clone(),
                },
                r.quality,
                r.time_s,
            ),
            Err(_) => failed_entry(item, c),
        })
        .collect()
}

/// Attack settings shared by a whole evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub attack: AttackConfig,
    pub variants: Vec<Variant>,
    /// Write zero instead of wall-clock seconds so reports are byte-stable.
    pub record_timing: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            attack: AttackConfig::default(),
            variants: Variant::ALL.to_vec(),
            record_timing: true,
        }
    }
}

/// Output of [`evaluate_attacks`].
#[derive(Clone, Debug)]
pub struct AttackTable {
    pub rows: Vec<ReportRow>,
    pub runs: Vec<VariantRun>,
    /// Clean predictions of the source model, per item.
    pub clean: Vec<String>,
}

/// Runs every variant on every item (items in parallel) and aggregates one
/// row per variant, preceded by the paste-only WM0 row whose noise metrics
/// cover all items.
pub fn evaluate_attacks(model: &ModelWeights, corpus: &[CorpusItem], opts: &EvalOptions) -> Result<AttackTable> {
    if corpus.is_empty() {
        return Err(invalid("corpus is empty"));
    }
    let clean: Vec<String> = corpus
        .par_iter()
        .map(|item| model.recognize(&item.image, Decoder::Greedy))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut runs = Vec::new();

    let wm0_cfg = AttackConfig {
        variant: Variant::WmInit,
        iterations: 0,
        ..opts.attack.clone()
    };
    let wm0 = run_variant(model, corpus, &wm0_cfg, WM0, opts.record_timing);
    rows.push(make_row(WM0, "none", &score_run(&wm0, corpus, &clean), true)?);

    for &variant in &opts.variants {
        let cfg = AttackConfig {
            variant,
            ..opts.attack.clone()
        };
        let run = run_variant(model, corpus, &cfg, variant.name(), opts.record_timing);
        rows.push(make_row(variant.name(), "none", &score_run(&run, corpus, &clean), false)?);
        log::info!(
            "{}: ASR* {:.3} ASR {:.3}",
            variant,
            rows.last().expect("row").asr_star,
            rows.last().expect("row").asr
        );
        runs.push(run);
    }
    Ok(AttackTable { rows, runs, clean })
}

fn run_variant(model: &ModelWeights, corpus: &[CorpusItem], cfg: &AttackConfig, name: &str, timing: bool) -> VariantRun {
    let items = corpus
        .par_iter()
        .map(|item| {
            run_attack(model, &item.image, &item.target, cfg)
                .map(|mut r| {
                    r.source_text = item.source.clone();
                    if !timing {
                        r.time_s = 0.0;
                    }
                    r
                })
                .map_err(|e| e.to_string())
        })
        .collect();
    VariantRun {
        name: name.to_string(),
        items,
    }
}

/// Re-recognizes adversarial images with another model. Success is scored
/// against that model's own clean predictions.
pub fn evaluate_transfer(run: &VariantRun, corpus: &[CorpusItem], target_model: &ModelWeights) -> Result<(f64, f64)> {
    let outcomes = transfer_outcomes(run, corpus, target_model)?;
    asr_metrics(&outcomes)
}

fn transfer_outcomes(run: &VariantRun, corpus: &[CorpusItem], target_model: &ModelWeights) -> Result<Vec<Outcome>> {
    let needed: Vec<&Image> = run
        .items
        .iter()
        .zip(corpus)
        .map(|(r, item)| r.as_ref().map_or(&item.image, |r| &r.adversarial))
        .collect();
    for item in corpus {
        for c in item.target.chars() {
            if !target_model.charset().contains(c) {
                return Err(invalid(format!("transfer model charset lacks {c:?}")));
            }
        }
    }
    corpus
        .par_iter()
        .zip(needed.par_iter())
        .map(|(item, adv)| {
            Ok(Outcome {
                clean: target_model.recognize(&item.image, Decoder::Greedy)?,
                adversarial: target_model.recognize(adv, Decoder::Greedy)?,
                target: item.target.clone(),
            })
        })
        .collect()
}

/// Transfer rows, one per variant, labelled with defense `transfer`.
pub fn transfer_rows(table: &AttackTable, corpus: &[CorpusItem], target_model: &ModelWeights) -> Result<Vec<ReportRow>> {
    table
        .runs
        .iter()
        .map(|run| {
            let outcomes = transfer_outcomes(run, corpus, target_model)?;
            let base = score_run(run, corpus, &table.clean);
            let scored: Vec<_> = outcomes.into_iter().zip(base).map(|(o, (_, q, t))| (o, q, t)).collect();
            make_row(&run.name, "transfer", &scored, false)
        })
        .collect()
}

/// Applies each defense to every adversarial image and re-scores. Defenses
/// that need the attack mask are applied to watermark variants only. Success
/// after a defense is judged against the clean, undefended prediction.
pub fn evaluate_defenses(
    model: &ModelWeights,
    table: &AttackTable,
    corpus: &[CorpusItem],
    defenses: &[Defense],
    seed: u64,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for run in &table.runs {
        let is_wm = run.name.parse::<Variant>().map_or(false, |v| v.is_watermark());
        for defense in defenses {
            if defense.needs_mask() && !is_wm {
                continue;
            }
            let scored: Vec<(Outcome, QualityReport, f64)> = run
                .items
                .par_iter()
                .zip(corpus.par_iter())
                .zip(table.clean.par_iter())
                .map(|((r, item), clean)| match r {
                    Ok(r) => {
                        let item_seed = seed ^ (item.index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                        let defended = defense.apply(&r.adversarial, Some(&r.mask), item_seed)?;
                        let quality = if *defense == Defense::None {
                            r.quality
                        } else {
                            quality_report(&r.original, &defended)?
                        };
                        Ok((
                            Outcome {
                                clean: clean.clone(),
                                adversarial: model.recognize(&defended, Decoder::Greedy)?,
                                target: r.target_text.clone(),
                            },
                            quality,
                            r.time_s,
                        ))
                    }
                    Err(_) => Ok(failed_entry(item, clean)),
                })
                .collect::<Result<_>>()?;
            rows.push(make_row(&run.name, &defense.to_string(), &scored, false)?);
        }
    }
    Ok(rows)
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.6}")
    }
}

fn csv_error(e: csv::Error) -> Error {
    invalid(format!("CSV: {e}"))
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.variant.clone(),
            r.defense.clone(),
            fmt_num(r.mse),
            fmt_num(r.psnr),
            fmt_num(r.ssim),
            fmt_num(r.asr_star),
            fmt_num(r.asr),
            fmt_num(r.time_s),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields")
}

pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(invalid(format!("unexpected CSV header {header:?}")));
    }
    reader
        .records()
        .map(|rec| {
            let f = rec.map_err(csv_error)?;
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| invalid(format!("bad number {:?}", &f[i])));
            Ok(ReportRow {
                variant: f[0].to_string(),
                defense: f[1].to_string(),
                mse: num(2)?,
                psnr: num(3)?,
                ssim: num(4)?,
                asr_star: num(5)?,
                asr: num(6)?,
                time_s: num(7)?,
            })
        })
        .collect()
}

/// Writes `report.csv`, its `report.json` mirror, and, when given, the
/// adversarial images under `adv/<variant>/NNNN.*`.
pub fn emit_report(rows: &[ReportRow], runs: &[VariantRun], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.csv"), rows_to_csv(rows))?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(rows)? + "\n")?;
    for run in runs {
        let vdir = dir.join("adv").join(&run.name);
        for (i, item) in run.items.iter().enumerate() {
            match item {
                Ok(r) => r.write(&vdir, &format!("{i:04}"))?,
                Err(msg) => {
                    fs::create_dir_all(&vdir)?;
                    fs::write(vdir.join(format!("{i:04}.error")), format!("{msg}\n"))?;
                }
            }
        }
    }
    Ok(())
}

/// Concatenates report CSVs in argument order.
pub fn merge_reports(paths: &[PathBuf]) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p)?;
        rows.extend(parse_csv(&text).map_err(|e| Error::Parse {
            path: p.clone(),
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// A full experiment: attack table, optional transfer rows, defense battery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub source_weights: PathBuf,
    pub transfer_weights: Option<PathBuf>,
    pub corpus: CorpusSpec,
    pub eval: EvalOptions,
    pub defenses: Vec<Defense>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub attack_rows: Vec<ReportRow>,
    pub transfer_rows: Vec<ReportRow>,
    pub defense_rows: Vec<ReportRow>,
    pub elapsed_s: f64,
}

impl ExperimentReport {
    pub fn all_rows(&self) -> Vec<ReportRow> {
        let mut rows = self.attack_rows.clone();
        rows.extend(self.transfer_rows.iter().cloned());
        rows.extend(self.defense_rows.iter().cloned());
        rows
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let timer = Instant::now();
    let model = ModelWeights::load(&spec.source_weights)?;
    let transfer = spec.transfer_weights.as_ref().map(ModelWeights::load).transpose()?;
    let corpus = build_corpus(model.charset(), &FontAtlas::default(), &spec.corpus)?;
    let table = evaluate_attacks(&model, &corpus, &spec.eval)?;
    let transfer_rows = match &transfer {
        Some(t) => transfer_rows(&table, &corpus, t)?,
        None => Vec::new(),
    };
    let defense_rows = evaluate_defenses(&model, &table, &corpus, &spec.defenses, spec.seed)?;
    let report = ExperimentReport {
        attack_rows: table.rows.clone(),
        transfer_rows,
        defense_rows,
        elapsed_s: timer.elapsed().as_secs_f64(),
    };
    save_corpus(&corpus, spec.out_dir.join("corpus"))?;
    emit_report(&report.all_rows(), &table.runs, &spec.out_dir)?;
    Ok(report)
}

/// Recomputes the WM0 image for an item, for inspection.
pub fn pasted_baseline(item: &CorpusItem, cfg: &AttackConfig) -> Result<Image> {
    let mask = attack_mask(Variant::WmInit, &item.image, cfg)?;
    paste_watermark(&item.image, &mask, cfg.lambda, cfg.tau)
}
