use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tokenizer::tokenize;

/// WH-question class, decided by the opening words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionClass {
    WhatWhich,
    WhyHow,
    Where,
    When,
    Who,
    HowMany,
    Other,
}

impl QuestionClass {
    pub const ALL: [QuestionClass; 7] = [
        QuestionClass::WhatWhich,
        QuestionClass::WhyHow,
        QuestionClass::Where,
        QuestionClass::When,
        QuestionClass::Who,
        QuestionClass::HowMany,
        QuestionClass::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            QuestionClass::WhatWhich => "What/Which",
            QuestionClass::WhyHow => "Why/How",
            QuestionClass::Where => "Where",
            QuestionClass::When => "When",
            QuestionClass::Who => "Who",
            QuestionClass::HowMany => "How many",
            QuestionClass::Other => "Other",
        }
    }
}

impl fmt::Display for QuestionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn classify_question_type(question: &str) -> QuestionClass {
    let tokens = tokenize(question);
    let first = tokens.first().map(String::as_str).unwrap_or("");
    let second = tokens.get(1).map(String::as_str).unwrap_or("");
    match (first, second) {
        ("how", "many" | "much") => QuestionClass::HowMany,
        ("what" | "which", _) => QuestionClass::WhatWhich,
        ("why" | "how", _) => QuestionClass::WhyHow,
        ("where", _) => QuestionClass::Where,
        ("when", _) => QuestionClass::When,
        ("who" | "whom" | "whose", _) => QuestionClass::Who,
        _ => QuestionClass::Other,
    }
}
