use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Diagnosis class. Indices follow the alphabetical order of the codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Akiec = 0,
    Bcc = 1,
    Bkl = 2,
    Df = 3,
    Mel = 4,
    Nv = 5,
    Vasc = 6,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 7] = [
        ClassLabel::Akiec,
        ClassLabel::Bcc,
        ClassLabel::Bkl,
        ClassLabel::Df,
        ClassLabel::Mel,
        ClassLabel::Nv,
        ClassLabel::Vasc,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            ClassLabel::Akiec => "akiec",
            ClassLabel::Bcc => "bcc",
            ClassLabel::Bkl => "bkl",
            ClassLabel::Df => "df",
            ClassLabel::Mel => "mel",
            ClassLabel::Nv => "nv",
            ClassLabel::Vasc => "vasc",
        }
    }

    pub fn full_name(self) -> &'static str {
        match self {
            ClassLabel::Akiec => "Actinic keratoses",
            ClassLabel::Bcc => "Basal cell carcinoma",
            ClassLabel::Bkl => "Benign keratosis",
            ClassLabel::Df => "Dermatofibroma",
            ClassLabel::Mel => "Melanoma",
            ClassLabel::Nv => "Melanocytic nevi",
            ClassLabel::Vasc => "Vascular lesions",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.code() == s)
            .ok_or_else(|| Error::Argument(format!("unknown diagnosis code {s:?}")))
    }
}
