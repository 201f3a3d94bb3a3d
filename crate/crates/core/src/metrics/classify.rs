use serde::{Deserialize, Serialize};

use crate::grammar::{validate_plate, InvalidReason, Validation};
use crate::ocr::TemplateRecognizer;
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Unreadable,
    BadPattern,
    InvalidPrefix,
    InvalidSuffix,
}

impl From<InvalidReason> for FailureReason {
    fn from(r: InvalidReason) -> Self {
        match r {
            InvalidReason::BadPattern => FailureReason::BadPattern,
            InvalidReason::InvalidPrefix => FailureReason::InvalidPrefix,
            InvalidReason::InvalidSuffix => FailureReason::InvalidSuffix,
        }
    }
}

/// Outcome of judging one generated plate image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Category {
    SuccessType1,
    SuccessEv,
    Failure { reason: FailureReason },
}

impl Category {
    pub fn is_success(self) -> bool {
        !matches!(self, Category::Failure { .. })
    }

    /// Category implied by a transcription alone.
    pub fn of_text(text: &str) -> Category {
        match validate_plate(text) {
            Validation::Valid { ev: false } => Category::SuccessType1,
            Validation::Valid { ev: true } => Category::SuccessEv,
            Validation::Invalid(r) => Category::Failure { reason: r.into() },
        }
    }

    /// Stable label such as `success_ev` or `failure:invalid_suffix`.
    pub fn label(self) -> String {
        match self {
            Category::SuccessType1 => "success_type1".into(),
            Category::SuccessEv => "success_ev".into(),
            Category::Failure { reason } => format!(
                "failure:{}",
                serde_json::to_value(reason).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    #[serde(flatten)]
    pub category: Category,
    pub text: String,
    pub confidences: Vec<f64>,
}

/// Reads the plate and sorts it into success or a failure reason. Fewer or
/// more than 8 glyphs, or any glyph below `threshold`, counts as unreadable.
pub fn classify_generated(img: &Raster, rec: &TemplateRecognizer, threshold: f64) -> Classification {
    let r = rec.recognize(img);
    let confidences: Vec<f64> = r.detections.iter().map(|d| d.confidence).collect();
    let unreadable = confidences.len() != 8 || confidences.iter().any(|&c| c < threshold);
    let category = if unreadable {
        Category::Failure {
            reason: FailureReason::Unreadable,
        }
    } else {
        Category::of_text(&r.text)
    };
    Classification {
        category,
        text: r.text,
        confidences,
    }
}
