//! Annotation text format:
//!
//! ```text
//! # fanet annotations v1
//! images/000000.png
//! 2
//! 10.5 20 31 40.25
//! 60 61 70 72
//! images/000001.png
//! 0
//! ```
//!
//! Per image: path relative to the dataset directory, face count, then one
//! `xmin ymin xmax ymax` line per face. Blank lines and `#` comments are
//! ignored.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Image, Sample};
use crate::anchors::BBox;
use crate::{FanetError, Result};

pub const ANNOTATION_FILE: &str = "annotations.txt";
const HEADER: &str = "# fanet annotations v1";

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationRecord {
    pub image: String,
    pub faces: Vec<BBox>,
}

pub fn write_annotations<W: Write>(out: &mut W, records: &[AnnotationRecord]) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.image)?;
        writeln!(out, "{}", r.faces.len())?;
        for f in &r.faces {
            writeln!(out, "{} {} {} {}", f.xmin, f.ymin, f.xmax, f.ymax)?;
        }
    }
    Ok(())
}

pub fn parse_annotations(text: &str, path: &str) -> Result<Vec<AnnotationRecord>> {
    let err = |line: usize, message: String| FanetError::Parse {
        path: path.to_string(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut records = Vec::new();
    while let Some((_, image)) = lines.next() {
        let (n_line, count) = lines
            .next()
            .ok_or_else(|| err(text.lines().count(), format!("missing face count for {image}")))?;
        let count: usize = count
            .parse()
            .map_err(|_| err(n_line, format!("face count `{count}` is not a non-negative integer")))?;
        let mut faces = Vec::with_capacity(count);
        for k in 0..count {
            let (no, line) = lines
                .next()
                .ok_or_else(|| err(text.lines().count(), format!("{image}: expected {count} boxes, found {k}")))?;
            let v: Vec<f32> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err(no, format!("bad number in box `{line}`")))?;
            let [xmin, ymin, xmax, ymax] = v[..] else {
                return Err(err(no, format!("box needs 4 values, got {}", v.len())));
            };
            let b = BBox::new(xmin, ymin, xmax, ymax);
            if !b.is_valid() {
                return Err(err(no, format!("degenerate box `{line}`")));
            }
            faces.push(b);
        }
        records.push(AnnotationRecord {
            image: image.to_string(),
            faces,
        });
    }
    Ok(records)
}

/// Write `images/NNNNNN.png` plus the annotation file under `dir`.
pub fn save_dataset(dir: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("images/{i:06}.png");
        s.image.save_png(dir.join(&rel))?;
        records.push(AnnotationRecord {
            image: rel,
            faces: s.faces.clone(),
        });
    }
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join(ANNOTATION_FILE))?);
    write_annotations(&mut f, &records)?;
    f.flush()?;
    Ok(())
}

/// Load every image listed in the directory's annotation file, with the
/// image paths as written there.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Sample>)> {
    let dir = dir.as_ref();
    let path = dir.join(ANNOTATION_FILE);
    let text = fs::read_to_string(&path)?;
    let records = parse_annotations(&text, &path.display().to_string())?;
    let mut names = Vec::with_capacity(records.len());
    let mut samples = Vec::with_capacity(records.len());
    for r in records {
        let image = Image::load_png(dir.join(&r.image))?;
        samples.push(Sample { image, faces: r.faces });
        names.push(r.image);
    }
    Ok((names, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataConfig;
    use crate::data::generate_dataset;

    #[test]
    fn text_round_trip() {
        let records = vec![
            AnnotationRecord {
                image: "a.png".into(),
                faces: vec![BBox::new(0.1, 2.0, 3.3333333, 4.5)],
            },
            AnnotationRecord {
                image: "b.png".into(),
                faces: vec![],
            },
        ];
        let mut buf = Vec::new();
        write_annotations(&mut buf, &records).unwrap();
        let back = parse_annotations(std::str::from_utf8(&buf).unwrap(), "x").unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_annotations("# c\na.png\n1\n1 2 3\n", "ann.txt").unwrap_err();
        assert_eq!(e.to_string(), "ann.txt:4: box needs 4 values, got 3");
        let e = parse_annotations("a.png\nmany\n", "ann.txt").unwrap_err();
        assert!(e.to_string().starts_with("ann.txt:2:"));
        assert!(parse_annotations("a.png\n1\n5 5 1 1\n", "x").is_err());
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DataConfig {
            image_size: 128,
            ..DataConfig::default()
        };
        let samples = generate_dataset(2, 3, &cfg);
        save_dataset(dir.path(), &samples).unwrap();
        let (names, back) = load_dataset(dir.path()).unwrap();
        assert_eq!(names[2], "images/000002.png");
        assert_eq!(back, samples);
    }
}
