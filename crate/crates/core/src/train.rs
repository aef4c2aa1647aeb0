//! Training loops, page-level inference and corpus evaluation shared by the
//! command line and the acceptance suite.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::TrainingState;
use crate::corpus::{GroundTruthLine, PageSample};
use crate::detect::{triplet_to_box, Detector, LineBox, TripletCandidate};
use crate::error::{Error, Result};
use crate::match_loss::MatchLossConfig;
use crate::metrics::{bow_counts, detection_counts, word_errors, AcceptanceZone, DetectionCounts, PrF, ZONES};
use crate::numeric::{derive_seed, seeded, Rng, Tensor};
use crate::recog::{prepare_line, Recognizer};

/// One row of a training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub metric: f64,
}

impl std::fmt::Display for EpochLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}\t{:.6}\t{:.6}", self.epoch, self.loss, self.metric)
    }
}

// Stream ids for `derive_seed`; each epoch draws from its own stream so a
// resumed run replays exactly.
const SHUFFLE_STREAM: u64 = 1 << 32;

fn epoch_rng(seed: u64, epoch: usize) -> Rng {
    seeded(derive_seed(seed, SHUFFLE_STREAM + epoch as u64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorTraining {
    /// Total epochs; training resumes from the state's epoch counter.
    pub epochs: usize,
    pub seed: u64,
    pub loss: MatchLossConfig,
    pub threshold: f64,
    /// Acceptance zone used as the validation metric.
    pub zone: f64,
}

impl Default for DetectorTraining {
    fn default() -> Self {
        Self {
            epochs: 10,
            seed: 0,
            loss: MatchLossConfig::default(),
            threshold: 0.5,
            zone: 0.03,
        }
    }
}

pub fn page_targets(page: &PageSample, coords: usize) -> Vec<Vec<f64>> {
    page.lines
        .iter()
        .map(|l| {
            let [x, y, h] = l.triplet(page.width);
            match coords {
                2 => vec![x, y],
                3 => vec![x, y, h],
                _ => vec![x, y, l.width() as f64 / page.width as f64, h],
            }
        })
        .collect()
}

/// Loss of every page under the current weights, without updating them.
pub fn detector_loss(det: &Detector<f32>, pages: &[PageSample], loss: &MatchLossConfig) -> Result<f64> {
    let mut total = 0.0;
    for p in pages {
        total += det
            .compute_gradients(&p.image, &page_targets(p, det.config.coords), loss, None)?
            .loss;
    }
    Ok(total / pages.len().max(1) as f64)
}

/// Trains until `cfg.epochs`, calling `log` after each epoch. The metric is
/// the validation F-measure at `cfg.zone`.
pub fn train_detector(
    state: &mut TrainingState<Detector<f32>>,
    train: &[PageSample],
    val: &[PageSample],
    cfg: &DetectorTraining,
    mut log: impl FnMut(&EpochLog, &TrainingState<Detector<f32>>) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    cfg.loss.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training pages".into()));
    }
    let mut logs = Vec::new();
    while state.epoch < cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, state.epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let p = &train[i];
            let targets = page_targets(p, state.model.config.coords);
            let step = state
                .model
                .compute_gradients(&p.image, &targets, &cfg.loss, Some(&mut rng))?;
            state.optimizer.step(state.model.params_mut(), &step.grads)?;
            total += step.loss;
        }
        state.epoch += 1;
        let metric = if val.is_empty() {
            f64::NAN
        } else {
            evaluate_detector(&state.model, val, cfg.threshold, &[cfg.zone])?[0].f
        };
        let entry = EpochLog {
            epoch: state.epoch,
            loss: total / train.len() as f64,
            metric,
        };
        log(&entry, state)?;
        logs.push(entry);
    }
    Ok(logs)
}

/// Detection counts summed over pages, one entry per zone.
pub fn detection_counts_by_zone(
    hyps: &[Vec<Vec<f64>>],
    refs: &[Vec<Vec<f64>>],
    zones: &[f64],
    coords: usize,
) -> Result<Vec<DetectionCounts>> {
    zones
        .iter()
        .map(|&t| {
            let zone = AcceptanceZone::new(t, coords)?;
            let mut c = DetectionCounts::default();
            for (h, r) in hyps.iter().zip(refs) {
                c.add(detection_counts(h, r, zone)?);
            }
            Ok(c)
        })
        .collect()
}

/// Corpus-level detection precision/recall/F at each zone.
pub fn evaluate_detector(det: &Detector<f32>, pages: &[PageSample], threshold: f64, zones: &[f64]) -> Result<Vec<PrF>> {
    let mut hyps = Vec::with_capacity(pages.len());
    let mut refs = Vec::with_capacity(pages.len());
    for p in pages {
        hyps.push(det.detect(&p.image, threshold)?.into_iter().map(|c| c.coords).collect());
        refs.push(page_targets(p, det.config.coords));
    }
    Ok(detection_counts_by_zone(&hyps, &refs, zones, det.config.coords)?
        .iter()
        .map(DetectionCounts::prf)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropMode {
    /// The line's own box plus margin.
    Reference,
    /// From the line's left side to the right page edge.
    LeftExtended,
}

impl std::str::FromStr for CropMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Self::Reference),
            "left-extended" => Ok(Self::LeftExtended),
            _ => Err(Error::Config(format!("unknown crop mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for CropMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Reference => "reference",
            Self::LeftExtended => "left-extended",
        })
    }
}

/// Crop box for a ground-truth line. `shift` perturbs `(x_left, y_bottom,
/// height)` in pixels.
pub fn line_box(
    page: &PageSample,
    line: &GroundTruthLine,
    mode: CropMode,
    margin: f64,
    shift: [f64; 3],
) -> Option<LineBox> {
    let (w, h) = (page.width as f64, page.height as f64);
    let x = line.x_left as f64 + shift[0];
    let y = line.y_bottom as f64 + shift[1];
    let lh = (line.height as f64 + shift[2]).max(1.0);
    match mode {
        CropMode::Reference => {
            let b = LineBox {
                x_left: (x - margin).max(0.0),
                y_top: (y - lh - margin).max(0.0),
                x_right: (x + line.width() as f64 + margin).min(w),
                y_bottom: (y + margin).min(h),
            };
            (b.x_left < b.x_right && b.y_top < b.y_bottom).then_some(b)
        }
        CropMode::LeftExtended => {
            let t = TripletCandidate {
                coords: vec![x / w, y / w, lh / w],
                confidence: 1.0,
                cell: (0, 0, 0),
            };
            triplet_to_box(&t, w, h, margin)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecognizerTraining {
    pub epochs: usize,
    pub seed: u64,
    pub crop_mode: CropMode,
    pub margin: f64,
    /// Uniform perturbation of crop geometry during training, in pixels,
    /// for `(x_left, y_bottom, height)`.
    pub jitter: [f64; 3],
}

impl Default for RecognizerTraining {
    fn default() -> Self {
        Self {
            epochs: 10,
            seed: 0,
            crop_mode: CropMode::LeftExtended,
            margin: 10.0,
            jitter: [0.0; 3],
        }
    }
}

/// Normalized line images and transcripts for every line of `pages`.
pub fn line_samples(
    pages: &[PageSample],
    mode: CropMode,
    margin: f64,
    height: usize,
    jitter: Option<([f64; 3], &mut Rng)>,
) -> Result<Vec<(Tensor<f32>, String)>> {
    let mut jitter = jitter;
    let mut out = Vec::new();
    for p in pages {
        for l in &p.lines {
            let shift = match jitter.as_mut() {
                Some((j, rng)) => {
                    let mut s = [0.0; 3];
                    for (v, &r) in s.iter_mut().zip(j.iter()) {
                        *v = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
                    }
                    s
                }
                None => [0.0; 3],
            };
            let b = line_box(p, l, mode, margin, shift).ok_or(Error::EmptyCrop)?;
            out.push((prepare_line(&p.image, &b, height)?, l.text.clone()));
        }
    }
    Ok(out)
}

/// Word edits and reference words over a set of line samples.
pub fn recognizer_word_errors(rec: &Recognizer<f32>, samples: &[(Tensor<f32>, String)]) -> Result<(usize, usize)> {
    let mut total = (0, 0);
    for (img, text) in samples {
        let hyp = if img.shape()[2] >= rec.min_width() {
            rec.recognize_line(img)?.0
        } else {
            String::new()
        };
        let (e, n) = word_errors(&hyp, text);
        total.0 += e;
        total.1 += n;
    }
    Ok(total)
}

/// Corpus-level word error rate of line recognition on ground-truth crops.
pub fn evaluate_recognizer(rec: &Recognizer<f32>, pages: &[PageSample], mode: CropMode, margin: f64) -> Result<f64> {
    let samples = line_samples(pages, mode, margin, rec.config.height, None)?;
    let (e, n) = recognizer_word_errors(rec, &samples)?;
    if n == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(e as f64 / n as f64)
}

/// Trains until `cfg.epochs`. The metric is validation WER with the
/// training crop mode. Samples whose transcript cannot fit the crop are
/// skipped and counted in `skipped`.
pub fn train_recognizer(
    state: &mut TrainingState<Recognizer<f32>>,
    train: &[PageSample],
    val: &[PageSample],
    cfg: &RecognizerTraining,
    skipped: &mut usize,
    mut log: impl FnMut(&EpochLog, &TrainingState<Recognizer<f32>>) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    if train.is_empty() {
        return Err(Error::Config("no training pages".into()));
    }
    let val_samples = line_samples(val, cfg.crop_mode, cfg.margin, state.model.config.height, None)?;
    let mut logs = Vec::new();
    while state.epoch < cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, state.epoch);
        let mut samples = line_samples(
            train,
            cfg.crop_mode,
            cfg.margin,
            state.model.config.height,
            Some((cfg.jitter, &mut rng)),
        )?;
        samples.shuffle(&mut rng);
        let (mut total, mut used) = (0.0, 0usize);
        for (img, text) in &samples {
            if img.shape()[2] < state.model.min_width() {
                *skipped += 1;
                continue;
            }
            let TrainingState { model, optimizer, .. } = state;
            match model.train_step(img, text, optimizer, Some(&mut rng)) {
                Ok(loss) => {
                    total += loss;
                    used += 1;
                }
                Err(Error::InfeasibleAlignment { .. }) => *skipped += 1,
                Err(e) => return Err(e),
            }
        }
        state.epoch += 1;
        let metric = if val_samples.is_empty() {
            f64::NAN
        } else {
            let (e, n) = recognizer_word_errors(&state.model, &val_samples)?;
            e as f64 / n.max(1) as f64
        };
        let entry = EpochLog {
            epoch: state.epoch,
            loss: total / used.max(1) as f64,
            metric,
        };
        log(&entry, state)?;
        logs.push(entry);
    }
    Ok(logs)
}

/// One recognized line with its detected left-side triplet (pixels).
#[derive(Clone, Debug, PartialEq)]
pub struct RecognizedLine {
    pub x_left: f64,
    pub y_bottom: f64,
    pub height: f64,
    pub confidence: f64,
    pub text: String,
}

/// Detect, crop to the right page edge, recognize. Lines come back
/// top-to-bottom, then left-to-right.
pub fn recognize_page(
    det: &Detector<f32>,
    rec: &Recognizer<f32>,
    image: &Tensor<f32>,
    threshold: f64,
    margin: f64,
) -> Result<Vec<RecognizedLine>> {
    let (_, ph, pw) = image.dims3()?;
    let mut out = Vec::new();
    for c in det.detect(image, threshold)? {
        let Some(b) = triplet_to_box(&c, pw as f64, ph as f64, margin) else {
            continue;
        };
        let line = prepare_line(image, &b, rec.config.height)?;
        let text = if line.shape()[2] >= rec.min_width() {
            rec.recognize_line(&line)?.0
        } else {
            String::new()
        };
        let w = pw as f64;
        out.push(RecognizedLine {
            x_left: c.x() * w,
            y_bottom: c.y() * w,
            height: c.height().unwrap_or(0.0) * w,
            confidence: c.confidence,
            text,
        });
    }
    out.sort_by(|a, b| a.y_bottom.total_cmp(&b.y_bottom).then(a.x_left.total_cmp(&b.x_left)));
    Ok(out)
}

pub fn page_text(lines: &[RecognizedLine]) -> String {
    lines
        .iter()
        .map(|l| l.text.trim())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Micro-averaged bag-of-words precision/recall/F over page pairs
/// `(hypothesis, reference)`.
pub fn corpus_bow<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> PrF {
    let (mut i, mut h, mut r) = (0, 0, 0);
    for (hyp, reference) in pairs {
        let c = bow_counts(hyp, reference);
        i += c.0;
        h += c.1;
        r += c.2;
    }
    let p = if h > 0 { i as f64 / h as f64 } else { 0.0 };
    let rc = if r > 0 { i as f64 / r as f64 } else { 0.0 };
    let f = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
    PrF {
        precision: p,
        recall: rc,
        f,
    }
}

/// Default zone grid for reports.
pub fn report_zones() -> &'static [f64] {
    &ZONES
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};
    use crate::detect::DetectorConfig;
    use crate::numeric::RmsPropConfig;
    use crate::recog::RecognizerConfig;

    #[test]
    fn crop_modes() {
        let page = &generate_corpus(&CorpusConfig::default(), 0, 1).unwrap()[0];
        let l = &page.lines[0];
        let r = line_box(page, l, CropMode::Reference, 3.0, [0.0; 3]).unwrap();
        let e = line_box(page, l, CropMode::LeftExtended, 3.0, [0.0; 3]).unwrap();
        assert_eq!(r.x_right, (l.x_left as usize + l.width() + 3) as f64);
        assert_eq!(e.x_right, page.width as f64);
        assert_eq!((r.x_left, r.y_top, r.y_bottom), (e.x_left, e.y_top, e.y_bottom));
        assert_eq!("left-extended".parse::<CropMode>().unwrap(), CropMode::LeftExtended);
        assert!("middle".parse::<CropMode>().is_err());
    }

    #[test]
    fn resumed_detector_training_matches_uninterrupted() {
        let pages = generate_corpus(&CorpusConfig::default(), 0, 3).unwrap();
        let cfg = DetectorTraining {
            epochs: 2,
            ..DetectorTraining::default()
        };
        let fresh = || {
            let det = Detector::new(DetectorConfig::miniature(), &mut seeded(1)).unwrap();
            TrainingState::new(det, RmsPropConfig::default())
        };
        let mut full = fresh();
        let a = train_detector(&mut full, &pages, &pages[..1], &cfg, |_, _| Ok(())).unwrap();

        let mut part = fresh();
        let first = DetectorTraining {
            epochs: 1,
            ..cfg.clone()
        };
        train_detector(&mut part, &pages, &pages[..1], &first, |_, _| Ok(())).unwrap();
        let bytes = part.to_checkpoint().unwrap().to_bytes().unwrap();
        let mut resumed =
            TrainingState::from_checkpoint(crate::checkpoint::Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        let b = train_detector(&mut resumed, &pages, &pages[..1], &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(a[1], b[0]);
        assert_eq!(full, resumed);
    }

    #[test]
    fn recognizer_epoch_is_deterministic() {
        let pages = generate_corpus(&CorpusConfig::default(), 0, 2).unwrap();
        let cfg = RecognizerTraining {
            epochs: 1,
            margin: 3.0,
            jitter: [1.0, 1.0, 0.0],
            ..RecognizerTraining::default()
        };
        let run = || {
            let rec = Recognizer::new(RecognizerConfig::default(), &mut seeded(1)).unwrap();
            let mut st = TrainingState::new(rec, RmsPropConfig::default());
            let mut skipped = 0;
            let logs = train_recognizer(&mut st, &pages, &pages, &cfg, &mut skipped, |_, _| Ok(())).unwrap();
            (logs, st)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert!(a[0].loss.is_finite());
    }

    #[test]
    fn bow_aggregates_over_pages() {
        let f = corpus_bow([("A B", "A B"), ("C", "D E")]);
        assert!((f.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((f.recall - 0.5).abs() < 1e-12);
    }
}
