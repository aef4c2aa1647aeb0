use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use fpr_core::checkpoint::{Model, TrainingState};
use fpr_core::corpus::io::{read_ground_truth, read_hypotheses, write_jsonl, HypothesisLine, PageRecord, GT_FILE};
use fpr_core::corpus::{generate_corpus, pgm, read_corpus, write_corpus, CorpusConfig, GroundTruthLine, PageSample};
use fpr_core::detect::{Detector, DetectorConfig};
use fpr_core::match_loss::MatchLossConfig;
use fpr_core::metrics::{greedy_pairs, word_errors, PrF};
use fpr_core::numeric::{seeded, RmsPropConfig};
use fpr_core::recog::{Recognizer, RecognizerConfig};
use fpr_core::train::{
    corpus_bow, detection_counts_by_zone, page_text, recognize_page as run_page, train_detector, train_recognizer,
    DetectorTraining, EpochLog, RecognizerTraining,
};
use fpr_core::{Error, Result};
use serde_json::json;

use crate::args::{Arch, Evaluate, GenCorpus, RecognizePage, TrainDetector, TrainRecognizer, Training};

pub fn gen_corpus(a: &GenCorpus) -> Result<()> {
    let cfg = CorpusConfig {
        seed: a.seed,
        width: (a.min_width, a.max_width),
        height: (a.min_height, a.max_height),
        two_column_prob: a.two_column_prob,
        lines_per_column: (a.min_lines, a.max_lines),
        line_height: (a.min_line_height, a.max_line_height),
        noise: a.noise,
        jitter: a.jitter,
        slant: a.slant,
        ..CorpusConfig::default()
    };
    let pages = generate_corpus(&cfg, a.first, a.pages)?;
    write_corpus(&a.out, &pages)?;
    println!("{} pages written to {}", pages.len(), a.out.display());
    Ok(())
}

fn load_pages(dir: Option<&Path>) -> Result<Vec<PageSample>> {
    dir.map_or(Ok(Vec::new()), read_corpus)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn state_for<M: Model>(t: &Training, fresh: impl FnOnce() -> Result<M>) -> Result<TrainingState<M>> {
    match &t.resume {
        Some(path) => TrainingState::load(path),
        None => {
            let optimizer = RmsPropConfig {
                learning_rate: t.learning_rate,
                ..RmsPropConfig::default()
            };
            Ok(TrainingState::new(fresh()?, optimizer))
        }
    }
}

/// Saves `<kind>.ckpt` every epoch, `<kind>-best.ckpt` whenever the
/// validation metric improves, and numbered copies when requested.
fn checkpointer<'a, M: Model>(
    t: &'a Training,
    kind: &'static str,
    higher_is_better: bool,
) -> impl FnMut(&EpochLog, &TrainingState<M>) -> Result<()> + 'a {
    let mut best: Option<f64> = None;
    move |log, state| {
        println!("{log}");
        state.save(&t.out.join(format!("{kind}.ckpt")))?;
        if !log.metric.is_nan() {
            let better = best.is_none_or(|b| {
                if higher_is_better {
                    log.metric > b
                } else {
                    log.metric < b
                }
            });
            if better {
                best = Some(log.metric);
                state.save(&t.out.join(format!("{kind}-best.ckpt")))?;
            }
        }
        if t.checkpoint_every > 0 && log.epoch % t.checkpoint_every == 0 {
            state.save(&t.out.join(format!("{kind}-{:04}.ckpt", log.epoch)))?;
        }
        Ok(())
    }
}

fn finish(t: &Training, kind: &str) -> PathBuf {
    let path = t.out.join(format!("{kind}.ckpt"));
    println!("checkpoint\t{}", path.display());
    path
}

pub fn train_detector_cmd(a: &TrainDetector) -> Result<()> {
    let t = &a.training;
    let train = read_corpus(&t.corpus)?;
    let val = load_pages(t.val.as_deref())?;
    create_dir(&t.out)?;
    let mut state = state_for(t, || {
        let mut cfg = match a.arch {
            Arch::Miniature => DetectorConfig::miniature(),
            Arch::TableOne => DetectorConfig::table_one(),
        };
        if let Some(d) = t.dropout {
            cfg.dropout = d;
        }
        if let Some(n) = a.anchors {
            cfg.anchors = n;
        }
        cfg.threshold = a.threshold;
        Detector::new(cfg, &mut seeded(t.seed))
    })?;
    let cfg = DetectorTraining {
        epochs: t.epochs,
        seed: t.seed,
        loss: MatchLossConfig {
            alpha_match: a.alpha_match,
            alpha_grad: a.alpha_grad,
        },
        threshold: a.threshold,
        zone: a.zone,
    };
    println!(
        "# train-detector alpha-match={} alpha-grad={} learning-rate={} dropout={} anchors={} pages={} start-epoch={}",
        cfg.loss.alpha_match,
        cfg.loss.alpha_grad,
        state.optimizer.config.learning_rate,
        state.model.config.dropout,
        state.model.config.anchors,
        train.len(),
        state.epoch
    );
    println!("epoch\tloss\tmetric");
    train_detector(&mut state, &train, &val, &cfg, checkpointer(t, "detector", true))?;
    state.save(&finish(t, "detector"))
}

pub fn train_recognizer_cmd(a: &TrainRecognizer) -> Result<()> {
    let t = &a.training;
    let train = read_corpus(&t.corpus)?;
    let val = load_pages(t.val.as_deref())?;
    create_dir(&t.out)?;
    let mut state = state_for(t, || {
        let cfg = RecognizerConfig {
            height: a.line_height,
            dropout: t.dropout.unwrap_or(0.0),
            eol: a.eol,
            ..RecognizerConfig::default()
        };
        Recognizer::new(cfg, &mut seeded(t.seed))
    })?;
    state.extra = json!({"crop_mode": a.crop_mode.to_string(), "margin": a.margin});
    let cfg = RecognizerTraining {
        epochs: t.epochs,
        seed: t.seed,
        crop_mode: a.crop_mode,
        margin: a.margin,
        jitter: [a.jitter_x, a.jitter_y, a.jitter_height],
    };
    println!(
        "# train-recognizer crop-mode={} margin={} eol={} learning-rate={} dropout={} pages={} start-epoch={}",
        cfg.crop_mode,
        cfg.margin,
        state.model.config.eol,
        state.optimizer.config.learning_rate,
        state.model.config.dropout,
        train.len(),
        state.epoch
    );
    println!("epoch\tloss\tmetric");
    let mut skipped = 0;
    train_recognizer(
        &mut state,
        &train,
        &val,
        &cfg,
        &mut skipped,
        checkpointer(t, "recognizer", false),
    )?;
    if skipped > 0 {
        eprintln!("skipped {skipped} line samples with infeasible alignments");
    }
    state.save(&finish(t, "recognizer"))
}

pub fn recognize_page_cmd(a: &RecognizePage) -> Result<()> {
    let det = TrainingState::<Detector<f32>>::load(&a.detector)?.model;
    let rec = TrainingState::<Recognizer<f32>>::load(&a.recognizer)?.model;
    let pages: Vec<(String, fpr_core::numeric::Tensor<f32>)> = match (&a.corpus, &a.image) {
        (Some(dir), _) => read_corpus(dir)?.into_iter().map(|p| (p.id, p.image)).collect(),
        (None, Some(path)) => {
            let id = path
                .file_stem()
                .map_or("page".into(), |s| s.to_string_lossy().into_owned());
            vec![(id, pgm::read(path)?)]
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let mut records = Vec::with_capacity(pages.len());
    for (id, image) in pages {
        let lines = run_page(&det, &rec, &image, a.threshold, a.margin)?;
        println!("{id}\t{}", page_text(&lines));
        let shape = image.shape();
        records.push(PageRecord {
            id,
            width: shape[2] as i64,
            height: shape[1] as i64,
            lines: lines
                .into_iter()
                .map(|l| HypothesisLine {
                    x_left: l.x_left,
                    y_bottom: l.y_bottom,
                    height: l.height,
                    text: l.text,
                    conf: l.confidence,
                })
                .collect(),
        });
    }
    write_jsonl(&a.out, &records)
}

fn triplet(x: f64, y: f64, h: f64, w: f64) -> Vec<f64> {
    vec![x / w, y / w, h / w]
}

fn gt_triplets(p: &PageRecord<GroundTruthLine>) -> Vec<Vec<f64>> {
    let w = p.width as f64;
    p.lines
        .iter()
        .map(|l| triplet(l.x_left as f64, l.y_bottom as f64, l.height as f64, w))
        .collect()
}

fn prf_json(m: &PrF) -> serde_json::Value {
    json!({"precision": m.precision, "recall": m.recall, "f": m.f})
}

pub fn evaluate_cmd(a: &Evaluate) -> Result<()> {
    let gt_path = if a.reference.is_dir() {
        a.reference.join(GT_FILE)
    } else {
        a.reference.clone()
    };
    let refs = read_ground_truth(&gt_path)?;
    let hyps = read_hypotheses(&a.hyp)?;
    let mut by_id: HashMap<&str, &PageRecord<HypothesisLine>> = HashMap::new();
    for h in &hyps {
        if by_id.insert(h.id.as_str(), h).is_some() {
            return Err(Error::Validation(format!(
                "{}: duplicate page {}",
                a.hyp.display(),
                h.id
            )));
        }
    }
    if let Some(h) = hyps.iter().find(|h| !refs.iter().any(|r| r.id == h.id)) {
        eprintln!("warning: hypothesis page {} has no reference", h.id);
    }

    let empty = Vec::new();
    let (mut hyp_sets, mut ref_sets) = (Vec::new(), Vec::new());
    let (mut edits, mut ref_words) = (0, 0);
    let mut texts = Vec::new();
    for r in &refs {
        let w = r.width as f64;
        let lines = by_id.get(r.id.as_str()).map_or(&empty, |h| &h.lines);
        let ht: Vec<Vec<f64>> = lines
            .iter()
            .map(|l| triplet(l.x_left, l.y_bottom, l.height, w))
            .collect();
        let rt = gt_triplets(r);
        let pairs = greedy_pairs(&ht, &rt);
        let mut hyp_used = vec![false; lines.len()];
        let mut ref_used = vec![false; r.lines.len()];
        for &(h, k) in &pairs {
            let (e, _) = word_errors(&lines[h].text, &r.lines[k].text);
            edits += e;
            hyp_used[h] = true;
            ref_used[k] = true;
        }
        for (k, l) in r.lines.iter().enumerate() {
            let n = l.text.split_whitespace().count();
            ref_words += n;
            if !ref_used[k] {
                edits += n;
            }
        }
        for (h, l) in lines.iter().enumerate() {
            if !hyp_used[h] {
                edits += l.text.split_whitespace().count();
            }
        }
        let hyp_text: Vec<&str> = lines.iter().map(|l| l.text.as_str()).collect();
        let ref_text: Vec<&str> = r.lines.iter().map(|l| l.text.as_str()).collect();
        texts.push((hyp_text.join(" "), ref_text.join(" ")));
        hyp_sets.push(ht);
        ref_sets.push(rt);
    }
    if ref_words == 0 {
        return Err(Error::EmptyReference);
    }
    let counts = detection_counts_by_zone(&hyp_sets, &ref_sets, &a.zones, 3)?;
    let wer = edits as f64 / ref_words as f64;
    let bow = corpus_bow(texts.iter().map(|(h, r)| (h.as_str(), r.as_str())));

    println!("metric\tname\tvalue");
    let mut zones = serde_json::Map::new();
    for (t, c) in a.zones.iter().zip(&counts) {
        let m = c.prf();
        println!("detection_precision\t{t}\t{:.6}", m.precision);
        println!("detection_recall\t{t}\t{:.6}", m.recall);
        println!("detection_f\t{t}\t{:.6}", m.f);
        zones.insert(t.to_string(), prf_json(&m));
    }
    println!("wer\tlines\t{wer:.6}");
    println!("bow_precision\tpages\t{:.6}", bow.precision);
    println!("bow_recall\tpages\t{:.6}", bow.recall);
    println!("bow_f\tpages\t{:.6}", bow.f);
    if let Some(path) = &a.summary {
        let summary = json!({
            "pages": refs.len(),
            "detection": zones,
            "wer": wer,
            "bow": prf_json(&bow),
        });
        let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Validation(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
