//! Merging three annotators' answer sheets into one ternary ground truth.

use std::str::FromStr;

use ndarray::Array2;

use super::{ElementVocabulary, GroundTruthSet, StyleVocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Answer {
    Relevant,
    Somewhat,
    Irrelevant,
}

impl Answer {
    pub const ALL: [Answer; 3] = [Answer::Relevant, Answer::Somewhat, Answer::Irrelevant];

    pub fn ternary(self) -> i8 {
        match self {
            Answer::Relevant => 1,
            Answer::Somewhat => 0,
            Answer::Irrelevant => -1,
        }
    }
}

impl FromStr for Answer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "relevant" | "yes" | "1" | "+1" => Ok(Answer::Relevant),
            "somewhat" | "0" => Ok(Answer::Somewhat),
            "irrelevant" | "no" | "-1" => Ok(Answer::Irrelevant),
            other => Err(Error::Data(format!("unknown survey answer `{other}`"))),
        }
    }
}

/// Majority of three; three different answers resolve to `Somewhat`.
pub fn majority(a: Answer, b: Answer, c: Answer) -> Answer {
    if a == b || a == c {
        a
    } else if b == c {
        b
    } else {
        Answer::Somewhat
    }
}

/// One annotator's answers for `k` paintings × `m` elements.
#[derive(Debug, Clone)]
pub struct SurveySheet {
    pub ids: Vec<String>,
    pub styles: Vec<usize>,
    pub answers: Array2<Answer>,
}

pub fn ingest_survey(
    sheets: [&SurveySheet; 3],
    style_vocab: &StyleVocabulary,
    elements: &ElementVocabulary,
) -> Result<GroundTruthSet> {
    let first = sheets[0];
    for (i, s) in sheets.iter().enumerate() {
        if s.answers.dim() != (first.ids.len(), elements.len()) {
            return Err(Error::Shape(format!(
                "sheet {i} is {}x{}, expected {}x{}",
                s.answers.nrows(),
                s.answers.ncols(),
                first.ids.len(),
                elements.len()
            )));
        }
        if s.ids != first.ids || s.styles != first.styles {
            return Err(Error::Shape(format!("sheet {i} covers different paintings")));
        }
    }
    let ternary = Array2::from_shape_fn(first.answers.dim(), |ix| {
        majority(sheets[0].answers[ix], sheets[1].answers[ix], sheets[2].answers[ix]).ternary()
    });
    GroundTruthSet::new(
        first.ids.clone(),
        first.styles.clone(),
        style_vocab.clone(),
        elements.clone(),
        ternary,
    )
}
