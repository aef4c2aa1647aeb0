//! Synthetic page generator: one- or two-column pages of bitmap-font text
//! lines with exact ground truth.

pub mod font;
pub mod io;
pub mod pgm;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detect::LineBox;
use crate::error::{Error, Result};
use crate::numeric::{derive_seed, seeded, Rng, Tensor};

pub use font::{advance, render_styled, render_text_line, text_width, GlyphStyle};
pub use io::{read_corpus, write_corpus};

const WORDS: &[&str] = &[
    "THE", "OF", "AND", "TO", "IN", "FOR", "ON", "WITH", "BY", "FROM", "AT", "AS", "AN", "OR", "IS", "WAS", "ARE",
    "BE", "NOT", "ALL", "NEW", "ONE", "TWO", "SIX", "TEN", "DATE", "NAME", "PAGE", "LINE", "TEXT", "FORM", "NOTE",
    "CITY", "ROAD", "MAIL", "BANK", "CASE", "FILE", "YEAR", "WEEK", "TIME", "PART", "UNIT", "DEAR", "SIR", "MADAM",
    "LETTER", "REPLY", "ORDER", "PRICE", "TOTAL", "SIGNED", "PLEASE", "THANK", "YOU", "YOUR", "OUR", "WILL", "SEND",
    "COPY", "SHEET", "REPORT", "OFFICE", "STREET", "NUMBER", "ACCOUNT", "PAYMENT", "INVOICE", "SERVICE", "REQUEST",
    "MEETING", "MONDAY", "FRIDAY", "MARCH", "APRIL", "JUNE", "JULY", "PARIS", "LONDON", "NORTH", "SOUTH", "EAST",
    "WEST", "BLACK", "WHITE", "GREEN", "QUICK", "BROWN", "FOX", "JUMPS", "OVER", "LAZY", "DOG", "ZERO", "KEY", "VIEW",
    "JOB", "QUIZ", "BOX", "WAX", "JAZZ", "HELLO", "WORLD",
];

/// One annotated text line. Geometry is in pixels; the line's box spans
/// rows `y_bottom - height .. y_bottom` and columns
/// `x_left .. x_left + text_width`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthLine {
    pub x_left: u32,
    pub y_bottom: u32,
    pub height: u32,
    pub text: String,
}

impl GroundTruthLine {
    pub fn width(&self) -> usize {
        text_width(self.text.chars().count(), self.height as usize)
    }

    /// `(x_left, y_bottom, height)` normalized by the page width.
    pub fn triplet(&self, page_w: usize) -> [f64; 3] {
        let w = page_w as f64;
        [self.x_left as f64 / w, self.y_bottom as f64 / w, self.height as f64 / w]
    }

    /// The line's own box grown by `margin` on every side, clipped to the page.
    pub fn reference_box(&self, margin: f64, page_w: usize, page_h: usize) -> LineBox {
        LineBox {
            x_left: (self.x_left as f64 - margin).max(0.0),
            y_top: (self.y_bottom as f64 - self.height as f64 - margin).max(0.0),
            x_right: (self.x_left as f64 + self.width() as f64 + margin).min(page_w as f64),
            y_bottom: (self.y_bottom as f64 + margin).min(page_h as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PageSample {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// `[1, height, width]`, white = 1.
    pub image: Tensor<f32>,
    pub lines: Vec<GroundTruthLine>,
}

impl PageSample {
    /// Space-joined transcript of every line.
    pub fn text(&self) -> String {
        self.lines.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.shape() != [1, self.height, self.width] {
            return Err(Error::Validation(format!(
                "page {}: image shape {:?} does not match {}x{}",
                self.id,
                self.image.shape(),
                self.height,
                self.width
            )));
        }
        for (i, l) in self.lines.iter().enumerate() {
            let bad = |msg: &str| Err(Error::Validation(format!("page {} line {i}: {msg}", self.id)));
            if l.text.is_empty() {
                return bad("empty text");
            }
            if let Some(c) = l.text.chars().find(|&c| !font::supports(c)) {
                return bad(&format!("unsupported symbol {c:?}"));
            }
            if l.height < 8 {
                return bad(&format!("height {} below 8 px", l.height));
            }
            if l.y_bottom < l.height || l.y_bottom as usize > self.height {
                return bad("box outside the page vertically");
            }
            if l.x_left as usize + l.width() > self.width {
                return bad("box outside the page horizontally");
            }
        }
        Ok(())
    }
}

/// Inclusive integer range.
pub type Range = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub width: Range,
    pub height: Range,
    pub two_column_prob: f64,
    pub lines_per_column: Range,
    pub line_height: Range,
    pub line_gap: Range,
    /// Left and top page margin.
    pub margin: Range,
    pub right_margin: usize,
    pub bottom_margin: usize,
    pub gutter: Range,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    /// Maximum per-glyph vertical offset in pixels.
    pub jitter: i32,
    /// Maximum slant, as a pixel shift of a glyph's top row.
    pub slant: f64,
    pub words: Vec<String>,
    pub max_attempts: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            width: (176, 208),
            height: (240, 272),
            two_column_prob: 0.5,
            lines_per_column: (5, 8),
            line_height: (10, 14),
            line_gap: (6, 12),
            margin: (6, 16),
            right_margin: 6,
            bottom_margin: 16,
            gutter: (10, 18),
            noise: 0.05,
            jitter: 1,
            slant: 1.0,
            words: WORDS.iter().map(|w| w.to_string()).collect(),
            max_attempts: 50,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("width", self.width),
            ("height", self.height),
            ("lines_per_column", self.lines_per_column),
            ("line_height", self.line_height),
            ("line_gap", self.line_gap),
            ("margin", self.margin),
            ("gutter", self.gutter),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return Err(Error::Config(format!("{name} range {lo}..={hi} is empty")));
            }
        }
        if self.line_height.0 < 8 {
            return Err(Error::Config("line height must be at least 8 px".into()));
        }
        if self.lines_per_column.0 == 0 {
            return Err(Error::Config("pages need at least one line per column".into()));
        }
        if self.gutter.0 < 8 {
            return Err(Error::Config("gutter must be at least 8 px".into()));
        }
        if !(0.0..=1.0).contains(&self.two_column_prob) {
            return Err(Error::Config(format!(
                "column probability {} outside [0, 1]",
                self.two_column_prob
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || self.jitter < 0 || !(self.slant >= 0.0) {
            return Err(Error::Config("noise, jitter and slant must be non-negative".into()));
        }
        if self.words.is_empty() {
            return Err(Error::Config("empty word list".into()));
        }
        for w in &self.words {
            if w.is_empty() || w.contains(' ') {
                return Err(Error::Config(format!("invalid word {w:?}")));
            }
            if let Some(c) = w.chars().find(|&c| !font::supports(c)) {
                return Err(Error::UnknownSymbol(c));
            }
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }

    /// Expected number of lines per page.
    pub fn expected_lines(&self) -> f64 {
        let (lo, hi) = self.lines_per_column;
        (lo + hi) as f64 / 2.0 * (1.0 + self.two_column_prob)
    }
}

pub fn page_id(index: u64) -> String {
    format!("p{index:05}")
}

/// Generates page `index` of the corpus defined by `config`. Each page draws
/// from its own stream, so pages can be generated in any order.
pub fn generate_page(config: &CorpusConfig, index: u64) -> Result<PageSample> {
    config.validate()?;
    let mut rng = seeded(derive_seed(config.seed, index));
    let id = page_id(index);
    let width = rng.random_range(config.width.0..=config.width.1);
    let height = rng.random_range(config.height.0..=config.height.1);
    let two_columns = rng.random_bool(config.two_column_prob);

    let x0 = rng.random_range(config.margin.0..=config.margin.1);
    let usable = width.saturating_sub(x0 + config.right_margin);
    let (col_w, x1) = if two_columns {
        let gutter = rng.random_range(config.gutter.0..=config.gutter.1);
        let cw = usable.saturating_sub(gutter) / 2;
        (cw, Some(x0 + cw + gutter))
    } else {
        (usable, None)
    };

    let rows = rng.random_range(config.lines_per_column.0..=config.lines_per_column.1);
    let (top, heights, gaps) = (0..config.max_attempts)
        .find_map(|_| {
            let top = rng.random_range(config.margin.0..=config.margin.1);
            let hs: Vec<usize> = (0..rows)
                .map(|_| rng.random_range(config.line_height.0..=config.line_height.1))
                .collect();
            let gs: Vec<usize> = (1..rows)
                .map(|_| rng.random_range(config.line_gap.0..=config.line_gap.1))
                .collect();
            let total = top + hs.iter().sum::<usize>() + gs.iter().sum::<usize>() + config.bottom_margin;
            let fits = total <= height && hs.iter().all(|&h| col_w >= 3 * advance(h));
            fits.then_some((top, hs, gs))
        })
        .ok_or(Error::Layout(config.max_attempts))?;

    let mut image = Tensor::full(&[1, height, width], 1.0f32);
    let mut lines = Vec::new();
    let mut y = top;
    for (r, &h) in heights.iter().enumerate() {
        if r > 0 {
            y += gaps[r - 1];
        }
        y += h;
        for col_x in std::iter::once(x0).chain(x1) {
            let line = place_line(config, &mut rng, col_x, col_w, y, h);
            draw_line(config, &mut rng, &mut image, &line)?;
            lines.push(line);
        }
    }

    if config.noise > 0.0 {
        let normal = Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?;
        for v in image.data_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }
    for v in image.data_mut() {
        *v = pgm::level(pgm::quantize(*v));
    }

    let page = PageSample {
        id,
        width,
        height,
        image,
        lines,
    };
    page.validate()?;
    Ok(page)
}

fn place_line(
    config: &CorpusConfig,
    rng: &mut Rng,
    col_x: usize,
    col_w: usize,
    y_bottom: usize,
    h: usize,
) -> GroundTruthLine {
    let adv = advance(h);
    let indent = if rng.random_bool(0.2) {
        rng.random_range(1..=2) * adv
    } else {
        0
    };
    let capacity = (col_w.saturating_sub(indent) / adv).max(1);
    let target = rng.random_range(capacity.div_ceil(2)..=capacity);
    let mut text = String::new();
    for _ in 0..8 {
        let word = if rng.random_bool(0.12) {
            rng.random_range(1..10_000u32).to_string()
        } else {
            config.words.choose(rng).expect("validated non-empty").clone()
        };
        let extra = word.len() + usize::from(!text.is_empty());
        if text.len() + extra > target {
            if text.is_empty() {
                text = word[..word.len().min(capacity)].to_string();
            }
            if text.len() + 2 > target {
                break;
            }
            continue;
        }
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(&word);
    }
    GroundTruthLine {
        x_left: (col_x + indent) as u32,
        y_bottom: y_bottom as u32,
        height: h as u32,
        text,
    }
}

fn draw_line(config: &CorpusConfig, rng: &mut Rng, image: &mut Tensor<f32>, line: &GroundTruthLine) -> Result<()> {
    let style = GlyphStyle {
        jitter: line
            .text
            .chars()
            .map(|_| rng.random_range(-config.jitter..=config.jitter))
            .collect(),
        slant: if config.slant > 0.0 {
            rng.random_range(0.0..=config.slant)
        } else {
            0.0
        },
    };
    let h = line.height as usize;
    let glyphs = render_styled(&line.text, h, &style)?;
    let gw = glyphs.shape()[2];
    let page_w = image.shape()[2];
    let (x, y0) = (line.x_left as usize, line.y_bottom as usize - h);
    let data = image.data_mut();
    for r in 0..h {
        let dst = &mut data[(y0 + r) * page_w + x..][..gw];
        for (d, &s) in dst.iter_mut().zip(&glyphs.data()[r * gw..(r + 1) * gw]) {
            *d = d.min(s);
        }
    }
    Ok(())
}

/// Generates pages `first .. first + count`.
pub fn generate_corpus(config: &CorpusConfig, first: u64, count: usize) -> Result<Vec<PageSample>> {
    (first..first + count as u64)
        .map(|i| generate_page(config, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean() -> CorpusConfig {
        CorpusConfig {
            noise: 0.0,
            jitter: 0,
            slant: 0.0,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = CorpusConfig::default();
        assert_eq!(generate_page(&cfg, 3).unwrap(), generate_page(&cfg, 3).unwrap());
        assert_ne!(generate_page(&cfg, 3).unwrap(), generate_page(&cfg, 4).unwrap());
        let other = CorpusConfig { seed: 1, ..cfg.clone() };
        assert_ne!(
            generate_page(&cfg, 3).unwrap().image,
            generate_page(&other, 3).unwrap().image
        );
    }

    #[test]
    fn clean_lines_read_back_exactly() {
        let cfg = clean();
        for i in 0..5 {
            let page = generate_page(&cfg, i).unwrap();
            for l in &page.lines {
                let expect = render_text_line(&l.text, l.height as usize).unwrap();
                let (h, w) = (l.height as usize, l.width());
                let y0 = l.y_bottom as usize - h;
                let crop = Tensor::from_fn(&[1, h, w], |k| {
                    page.image.data()[(y0 + k / w) * page.width + l.x_left as usize + k % w]
                });
                assert_eq!(crop, expect, "{} {:?}", page.id, l.text);
            }
        }
    }

    #[test]
    fn ink_stays_inside_line_boxes() {
        let cfg = CorpusConfig {
            noise: 0.0,
            ..CorpusConfig::default()
        };
        for i in 0..20 {
            let page = generate_page(&cfg, i).unwrap();
            for y in 0..page.height {
                for x in 0..page.width {
                    if page.image.data()[y * page.width + x] < 1.0 {
                        let inside = page.lines.iter().any(|l| {
                            let (l0, b) = (l.x_left as usize, l.y_bottom as usize);
                            (l0..l0 + l.width()).contains(&x) && (b - l.height as usize..b).contains(&y)
                        });
                        assert!(inside, "{} ink at ({x}, {y})", page.id);
                    }
                }
            }
        }
    }

    #[test]
    fn right_extension_crosses_the_second_column() {
        let cfg = CorpusConfig {
            two_column_prob: 1.0,
            ..CorpusConfig::default()
        };
        for i in 0..100 {
            let page = generate_page(&cfg, i).unwrap();
            let (left, right): (Vec<_>, Vec<_>) = page.lines.iter().partition(|l| (l.x_left as usize) < page.width / 2);
            assert!(!left.is_empty() && left.len() == right.len(), "{}", page.id);
            let left_end = left.iter().map(|l| l.x_left as usize + l.width()).max().unwrap();
            let right_start = right.iter().map(|l| l.x_left as usize).min().unwrap();
            assert!(right_start >= left_end + 8, "{} gutter", page.id);
            for l in &left {
                let (top, bottom) = (l.y_bottom - l.height, l.y_bottom);
                let hit = right.iter().any(|r| {
                    let (rt, rb) = (r.y_bottom - r.height, r.y_bottom);
                    rt < bottom && top < rb && r.x_left as usize >= l.x_left as usize + l.width()
                });
                assert!(hit, "{} {:?}", page.id, l.text);
            }
        }
    }

    #[test]
    fn lines_do_not_overlap_within_a_column() {
        let cfg = CorpusConfig::default();
        for i in 0..50 {
            let page = generate_page(&cfg, i).unwrap();
            for (a, la) in page.lines.iter().enumerate() {
                for lb in &page.lines[a + 1..] {
                    let same_col = (la.x_left as usize) < page.width / 2 && (lb.x_left as usize) < page.width / 2
                        || (la.x_left as usize) >= page.width / 2 && (lb.x_left as usize) >= page.width / 2;
                    if same_col {
                        let disjoint = la.y_bottom <= lb.y_bottom - lb.height || lb.y_bottom <= la.y_bottom - la.height;
                        assert!(disjoint, "{}", page.id);
                    }
                }
            }
        }
    }

    #[test]
    fn mean_line_count_matches_the_target() {
        let cfg = CorpusConfig::default();
        let pages = generate_corpus(&cfg, 0, 120).unwrap();
        let mean = pages.iter().map(|p| p.lines.len()).sum::<usize>() as f64 / pages.len() as f64;
        let target = cfg.expected_lines();
        assert!((mean - target).abs() <= 0.2 * target, "{mean} vs {target}");
    }

    #[test]
    fn order_of_generation_does_not_matter() {
        let cfg = CorpusConfig::default();
        let forward = generate_corpus(&cfg, 10, 6).unwrap();
        let mut backward: Vec<_> = (10..16).rev().map(|i| generate_page(&cfg, i).unwrap()).collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn unsatisfiable_layout_is_an_error() {
        let cfg = CorpusConfig {
            height: (60, 60),
            lines_per_column: (8, 8),
            max_attempts: 5,
            ..CorpusConfig::default()
        };
        assert!(matches!(generate_page(&cfg, 0), Err(Error::Layout(5))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            CorpusConfig {
                width: (200, 100),
                ..CorpusConfig::default()
            },
            CorpusConfig {
                line_height: (6, 10),
                ..CorpusConfig::default()
            },
            CorpusConfig {
                gutter: (4, 10),
                ..CorpusConfig::default()
            },
            CorpusConfig {
                two_column_prob: 1.5,
                ..CorpusConfig::default()
            },
            CorpusConfig {
                words: vec!["lower".into()],
                ..CorpusConfig::default()
            },
        ];
        for cfg in bad {
            assert!(generate_page(&cfg, 0).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn pixels_are_in_range_and_eight_bit() {
        let page = generate_page(
            &CorpusConfig {
                noise: 0.3,
                ..CorpusConfig::default()
            },
            1,
        )
        .unwrap();
        for &v in page.image.data() {
            assert!((0.0..=1.0).contains(&v));
            assert_eq!(pgm::level(pgm::quantize(v)), v);
        }
    }
}
