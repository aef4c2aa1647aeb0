//! 5x7 bitmap font covering the toy alphabet, nearest-neighbour scaled.

use crate::error::{Error, Result};
use crate::numeric::Tensor;

const ROWS: usize = 7;
const COLS: usize = 5;
/// Base advance: five ink columns plus one spacing column.
const CELL: usize = 6;

fn glyph(c: char) -> Option<[&'static str; ROWS]> {
    Some(match c {
        'A' => [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
        'B' => ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."],
        'C' => [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."],
        'D' => ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."],
        'E' => ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
        'F' => ["#####", "#....", "#....", "####.", "#....", "#....", "#...."],
        'G' => [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"],
        'H' => ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
        'I' => [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
        'J' => ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."],
        'K' => ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"],
        'L' => ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
        'M' => ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
        'N' => ["#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"],
        'O' => [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
        'P' => ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
        'Q' => [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"],
        'R' => ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"],
        'S' => [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
        'T' => ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
        'U' => ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
        'V' => ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
        'W' => ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."],
        'X' => ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
        'Y' => ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."],
        'Z' => ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
        '0' => [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
        '1' => ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
        '2' => [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
        '3' => ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
        '4' => ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
        '5' => ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
        '6' => ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
        '7' => ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
        '8' => [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
        '9' => [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
        ' ' => [".....", ".....", ".....", ".....", ".....", ".....", "....."],
        _ => return None,
    })
}

pub fn supports(c: char) -> bool {
    glyph(c).is_some()
}

/// Horizontal advance of one glyph at a given line height.
pub fn advance(height: usize) -> usize {
    ((CELL * height + ROWS / 2) / ROWS).max(1)
}

pub fn text_width(chars: usize, height: usize) -> usize {
    chars * advance(height)
}

/// Per-glyph distortions. Every distortion stays inside the glyph's own
/// `advance x height` cell, so ink never leaves the line box.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GlyphStyle {
    /// Vertical offset per glyph in pixels (positive moves down).
    pub jitter: Vec<i32>,
    /// Horizontal shift, in pixels, of the top row relative to the bottom.
    pub slant: f64,
}

/// Black-on-white bitmap `[1, height, |text| * advance]`; ink is `0.0`.
pub fn render_text_line(text: &str, height: usize) -> Result<Tensor<f32>> {
    render_styled(text, height, &GlyphStyle::default())
}

pub fn render_styled(text: &str, height: usize, style: &GlyphStyle) -> Result<Tensor<f32>> {
    let glyphs = text
        .chars()
        .map(|c| glyph(c).ok_or(Error::UnknownSymbol(c)))
        .collect::<Result<Vec<_>>>()?;
    if glyphs.is_empty() || height == 0 {
        return Err(Error::Config("cannot render an empty line".into()));
    }
    let adv = advance(height);
    let width = glyphs.len() * adv;
    let mut img = Tensor::full(&[1, height, width], 1.0f32);
    let data = img.data_mut();
    for (gi, rows) in glyphs.iter().enumerate() {
        let dy = style.jitter.get(gi).copied().unwrap_or(0);
        for r in 0..height {
            let src_r = r * ROWS / height;
            let y = r as i32 + dy;
            if y < 0 || y >= height as i32 {
                continue;
            }
            let shift = if height > 1 {
                (style.slant * (height - 1 - r) as f64 / (height - 1) as f64).round() as usize
            } else {
                0
            };
            let row = rows[src_r].as_bytes();
            for c in 0..adv {
                let src_c = c * CELL / adv;
                if src_c >= COLS || row[src_c] != b'#' {
                    continue;
                }
                let x = c + shift;
                if x >= adv {
                    continue;
                }
                data[y as usize * width + gi * adv + x] = 0.0;
            }
        }
    }
    Ok(img)
}
