//! Versioned prompt templates.
//!
//! Templates are plain text files under `prompts/` with `{{name}}`
//! placeholders. A template's hash is recorded with every result it produced.

use sha2::{Digest, Sha256};

use crate::corpus::Posting;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
}

pub const RELEVANCE: Template = Template { name: "relevance", text: include_str!("../prompts/relevance.txt") };
pub const SPECIALIZATION: Template =
    Template { name: "specialization", text: include_str!("../prompts/specialization.txt") };
pub const SKILLS: Template = Template { name: "skills", text: include_str!("../prompts/skills.txt") };
pub const SUMMARY: Template = Template { name: "summary", text: include_str!("../prompts/summary.txt") };
pub const JUDGE: Template = Template { name: "judge", text: include_str!("../prompts/judge.txt") };

pub const ALL: [Template; 5] = [RELEVANCE, SPECIALIZATION, SKILLS, SUMMARY, JUDGE];

impl Template {
    /// First 16 hex digits of the template's SHA-256.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))[..16].to_string()
    }

    /// Substitute every `{{key}}`. Unknown placeholders are left in place.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.text.to_string();
        for (key, value) in vars {
            out = out.replace(&format!("{{{{{key}}}}}"), value);
        }
        out
    }
}

/// The posting as shown to the model, with the description cut to
/// `max_chars` characters when set.
pub fn posting_block(posting: &Posting, max_chars: Option<usize>) -> String {
    let description = match max_chars {
        Some(limit) => match posting.description.char_indices().nth(limit) {
            Some((cut, _)) => &posting.description[..cut],
            None => posting.description.as_str(),
        },
        None => posting.description.as_str(),
    };
    format!(
        "Title: {}\nEmployer: {}\nLocation: {}\n\n{}",
        posting.title, posting.employer, posting.location, description
    )
}
