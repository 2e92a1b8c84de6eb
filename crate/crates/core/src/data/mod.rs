//! Synthetic faces, augmentation, images on disk and annotation files.

mod annotations;
mod augment;
mod image;
mod synth;

pub use annotations::{load_dataset, parse_annotations, save_dataset, write_annotations, AnnotationRecord, ANNOTATION_FILE};
pub use augment::augment;
pub use image::{batch_tensor, Image};
pub use synth::{generate_dataset, generate_sample};

use crate::anchors::BBox;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub faces: Vec<BBox>,
}

/// Size split of a face, by its longer side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Easy,
    Medium,
    Hard,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Easy, Bucket::Medium, Bucket::Hard];

    pub fn of(face: &BBox, hard_below: f32, medium_below: f32) -> Bucket {
        let side = face.side();
        if side < hard_below {
            Bucket::Hard
        } else if side < medium_below {
            Bucket::Medium
        } else {
            Bucket::Easy
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Easy => "easy",
            Bucket::Medium => "medium",
            Bucket::Hard => "hard",
        }
    }
}

impl std::str::FromStr for Bucket {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "easy" => Ok(Bucket::Easy),
            "medium" => Ok(Bucket::Medium),
            "hard" => Ok(Bucket::Hard),
            other => Err(format!("unknown bucket `{other}` (expected easy, medium or hard)")),
        }
    }
}

impl std::fmt::Display for Bucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
