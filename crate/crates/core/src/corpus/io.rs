//! Corpus directories: `pages/<id>.pgm` plus one `gt.jsonl` record per page.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{pgm, GroundTruthLine, PageSample};
use crate::error::{Error, Result};

pub const GT_FILE: &str = "gt.jsonl";
pub const PAGES_DIR: &str = "pages";

/// One line of a `.jsonl` page file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageRecord<L> {
    pub id: String,
    pub width: i64,
    pub height: i64,
    pub lines: Vec<L>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    x_left: i64,
    y_bottom: i64,
    height: i64,
    text: String,
}

/// A recognized line: detected geometry in pixels, confidence and text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisLine {
    pub x_left: f64,
    pub y_bottom: f64,
    pub height: f64,
    pub text: String,
    pub conf: f64,
}

pub fn page_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(PAGES_DIR).join(format!("{id}.pgm"))
}

fn check_id(id: &str) -> std::result::Result<(), String> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(format!("invalid page id {id:?}"))
    }
}

fn to_u32(name: &str, v: i64) -> std::result::Result<u32, String> {
    u32::try_from(v).map_err(|_| format!("{name} must be a non-negative pixel count, got {v}"))
}

fn convert(rec: PageRecord<RawLine>) -> std::result::Result<PageRecord<GroundTruthLine>, String> {
    check_id(&rec.id)?;
    to_u32("width", rec.width)?;
    to_u32("height", rec.height)?;
    let lines = rec
        .lines
        .into_iter()
        .map(|l| {
            Ok(GroundTruthLine {
                x_left: to_u32("x_left", l.x_left)?,
                y_bottom: to_u32("y_bottom", l.y_bottom)?,
                height: to_u32("height", l.height)?,
                text: l.text,
            })
        })
        .collect::<std::result::Result<_, String>>()?;
    Ok(PageRecord {
        id: rec.id,
        width: rec.width,
        height: rec.height,
        lines,
    })
}

/// Reads a `.jsonl` file, one record per non-blank line.
pub fn read_jsonl<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::ParseLine {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<R: Serialize>(path: &Path, records: &[R]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ground-truth records with validated pixel geometry.
pub fn read_ground_truth(path: &Path) -> Result<Vec<PageRecord<GroundTruthLine>>> {
    let raw: Vec<PageRecord<RawLine>> = read_jsonl(path)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            convert(r).map_err(|msg| Error::ParseLine {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            })
        })
        .collect()
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<PageRecord<HypothesisLine>>> {
    read_jsonl(path)
}

pub fn write_corpus(dir: &Path, pages: &[PageSample]) -> Result<()> {
    let pages_dir = dir.join(PAGES_DIR);
    fs::create_dir_all(&pages_dir).map_err(|e| Error::io(&pages_dir, e))?;
    let mut records = Vec::with_capacity(pages.len());
    for p in pages {
        check_id(&p.id).map_err(Error::Validation)?;
        pgm::write(&page_path(dir, &p.id), &p.image)?;
        records.push(PageRecord {
            id: p.id.clone(),
            width: p.width as i64,
            height: p.height as i64,
            lines: p.lines.clone(),
        });
    }
    write_jsonl(&dir.join(GT_FILE), &records)
}

pub fn read_corpus(dir: &Path) -> Result<Vec<PageSample>> {
    let gt_path = dir.join(GT_FILE);
    read_ground_truth(&gt_path)?
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            let path = page_path(dir, &rec.id);
            let image = pgm::read(&path)?;
            let page = PageSample {
                id: rec.id,
                width: rec.width as usize,
                height: rec.height as usize,
                image,
                lines: rec.lines,
            };
            page.validate().map_err(|e| Error::ParseLine {
                path: gt_path.clone(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            Ok(page)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pages = generate_corpus(&CorpusConfig::default(), 0, 10).unwrap();
        write_corpus(dir.path(), &pages).unwrap();
        assert_eq!(read_corpus(dir.path()).unwrap(), pages);
    }

    #[test]
    fn truncated_image_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let pages = generate_corpus(&CorpusConfig::default(), 0, 2).unwrap();
        write_corpus(dir.path(), &pages).unwrap();
        let path = page_path(dir.path(), &pages[1].id);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = read_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains("p00001.pgm") && err.contains("truncated"), "{err}");
    }

    #[test]
    fn negative_height_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let gt = dir.path().join(GT_FILE);
        fs::write(
            &gt,
            "{\"id\":\"a\",\"width\":10,\"height\":10,\"lines\":[]}\n\
             {\"id\":\"b\",\"width\":10,\"height\":10,\"lines\":[{\"x_left\":0,\"y_bottom\":9,\"height\":-3,\"text\":\"A\"}]}\n",
        )
        .unwrap();
        match read_ground_truth(&gt) {
            Err(Error::ParseLine { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("height"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_records_report_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let gt = dir.path().join(GT_FILE);
        fs::write(&gt, "{\"id\":\"a\",\"width\":10,\"height\":10,\"lines\":[]}\n\n{oops\n").unwrap();
        assert!(matches!(read_ground_truth(&gt), Err(Error::ParseLine { line: 3, .. })));
        fs::write(&gt, "{\"id\":\"../x\",\"width\":10,\"height\":10,\"lines\":[]}\n").unwrap();
        assert!(read_ground_truth(&gt).is_err());
    }

    #[test]
    fn geometry_outside_the_page_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut pages = generate_corpus(&CorpusConfig::default(), 0, 1).unwrap();
        pages[0].lines[0].y_bottom = 10_000;
        assert!(write_corpus(dir.path(), &pages).is_ok());
        assert!(matches!(read_corpus(dir.path()), Err(Error::ParseLine { line: 1, .. })));
    }

    #[test]
    fn hypotheses_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hyp.jsonl");
        let recs = vec![PageRecord {
            id: "p00000".to_string(),
            width: 200,
            height: 250,
            lines: vec![HypothesisLine {
                x_left: 10.25,
                y_bottom: 40.5,
                height: 12.0,
                text: "HELLO".into(),
                conf: 0.93,
            }],
        }];
        write_jsonl(&path, &recs).unwrap();
        assert_eq!(read_hypotheses(&path).unwrap(), recs);
    }
}
