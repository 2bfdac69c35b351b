//! Prompt templates. Every template opens with a `TASK:` line and carries
//! its inputs as tagged lines, so the stub backend can parse the same text
//! a live model receives.

use serde::{Deserialize, Serialize};

use super::ChatPrompt;

pub const TASK_EXTRACT: &str = "extract-triples";
pub const TASK_STEM: &str = "write-stem";
pub const TASK_VALIDATE: &str = "validate-distractor";
pub const TASK_EXTRA_FACT: &str = "judge-extra-fact";

/// One typed subject-predicate-object fact in the five-field pipe format.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactRecord {
    pub subject: String,
    pub subject_type: String,
    pub predicate: String,
    pub object: String,
    pub object_type: String,
}

impl FactRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{} | {} | {} | {} | {}",
            self.subject, self.subject_type, self.predicate, self.object, self.object_type
        )
    }

    /// Parses `subject | subject_type | predicate | object | object_type`.
    /// Leading bullets or list numbers are tolerated; every field must be
    /// non-empty.
    pub fn parse_line(line: &str) -> Option<Self> {
        let line = strip_list_marker(line.trim());
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 5 || fields.iter().any(|f| f.is_empty()) {
            return None;
        }
        Some(Self {
            subject: fields[0].to_string(),
            subject_type: fields[1].to_string(),
            predicate: fields[2].to_string(),
            object: fields[3].to_string(),
            object_type: fields[4].to_string(),
        })
    }
}

fn strip_list_marker(line: &str) -> &str {
    if let Some(rest) = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) {
        return rest.trim_start();
    }
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = line[digits..].strip_prefix(". ").or_else(|| line[digits..].strip_prefix(") ")) {
            return rest.trim_start();
        }
    }
    line
}

/// Role of a fact inside a stem prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactRole {
    Path,
    Extra,
}

impl FactRole {
    fn tag(self) -> &'static str {
        match self {
            FactRole::Path => "PATH",
            FactRole::Extra => "EXTRA",
        }
    }
}

const EXTRACT_SYSTEM: &str = "You turn encyclopedic text into a knowledge graph. \
Entity types are short free-form nouns such as Person, Country, City or River.";

const QUIZ_SYSTEM: &str = "You write and check trivia questions in the style of a \
televised quiz show: one crisp question, one unambiguous answer.";

pub fn extraction_prompt(title: &str, body: &str) -> ChatPrompt {
    let user = format!(
        "TASK: {TASK_EXTRACT}\n\
         List every salient fact in the document as one line with five fields separated by \" | \":\n\
         subject | subject_type | predicate | object | object_type\n\
         Use snake_case predicates. Output only fact lines.\n\
         TITLE: {title}\n\
         DOCUMENT:\n<<<\n{body}\n>>>"
    );
    ChatPrompt::new(EXTRACT_SYSTEM, &user).with_max_tokens(2048)
}

pub fn stem_prompt(
    answer_name: &str,
    answer_type: &str,
    facts: &[(FactRole, FactRecord)],
    leak_reminder: bool,
) -> ChatPrompt {
    let path_len = facts.iter().filter(|(r, _)| *r == FactRole::Path).count();
    let has_extra = facts.iter().any(|(r, _)| *r == FactRole::Extra);
    let mut user = format!(
        "TASK: {TASK_STEM}\n\
         Write one trivia question whose single correct answer is the ANSWER entity. \
         Use only the facts given and never mention the answer's name."
    );
    if path_len > 1 {
        user.push_str(" The question must chain both PATH facts without naming the entity that links them.");
    }
    if has_extra {
        user.push_str(" Open with one short context sentence based on the EXTRA fact.");
    }
    user.push_str(&format!("\nANSWER: {answer_name} | {answer_type}"));
    for (role, fact) in facts {
        user.push_str(&format!("\n{}: {}", role.tag(), fact.to_line()));
    }
    if leak_reminder {
        user.push_str(&format!(
            "\nREMINDER: the previous attempt revealed the answer. Do not write \"{answer_name}\"."
        ));
    }
    ChatPrompt::new(QUIZ_SYSTEM, &user)
}

pub fn validation_prompt(stem: &str, candidate: &str, facts: &[FactRecord]) -> ChatPrompt {
    let mut user = format!(
        "TASK: {TASK_VALIDATE}\n\
         Could the CANDIDATE be a correct answer to the QUESTION? Reply with YES or NO only.\n\
         QUESTION: {stem}\n\
         CANDIDATE: {candidate}"
    );
    for fact in facts {
        user.push_str(&format!("\nFACT: {}", fact.to_line()));
    }
    ChatPrompt::new(QUIZ_SYSTEM, &user).with_max_tokens(4)
}

pub fn extra_fact_prompt(stem: &str, facts: &[FactRecord]) -> ChatPrompt {
    let mut user = format!(
        "TASK: {TASK_EXTRA_FACT}\n\
         Does the QUESTION state any fact that cannot be inferred from the FACT lines? \
         Reply with YES or NO only.\n\
         QUESTION: {stem}"
    );
    for fact in facts {
        user.push_str(&format!("\nFACT: {}", fact.to_line()));
    }
    ChatPrompt::new(QUIZ_SYSTEM, &user).with_max_tokens(4)
}

/// Reads a YES/NO verdict from the first word of a reply.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    let word: String = reply
        .trim_start_matches(|c: char| !c.is_alphabetic())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fact_line_parsing() {
        let f = FactRecord::parse_line("- Paris | City | capital_of | France | Country").unwrap();
        assert_eq!(f.subject, "Paris");
        assert_eq!(f.object_type, "Country");
        assert_eq!(FactRecord::parse_line(&f.to_line()), Some(f.clone()));
        assert_eq!(FactRecord::parse_line("3. Paris | City | capital_of | France | Country"), Some(f));
        assert!(FactRecord::parse_line("Paris | capital_of | France").is_none());
        assert!(FactRecord::parse_line("Paris | | capital_of | France | Country").is_none());
        assert!(FactRecord::parse_line("Here are the facts:").is_none());
    }

    #[test]
    fn yes_no() {
        assert_eq!(parse_yes_no("YES"), Some(true));
        assert_eq!(parse_yes_no("  no, it cannot"), Some(false));
        assert_eq!(parse_yes_no("**Yes**"), Some(true));
        assert_eq!(parse_yes_no("maybe"), None);
    }

    #[test]
    fn stem_prompt_carries_tags() {
        let fact = FactRecord::parse_line("Paris | City | capital_of | France | Country").unwrap();
        let p = stem_prompt("Paris", "City", &[(FactRole::Path, fact)], true);
        assert!(p.user.starts_with("TASK: write-stem"));
        assert!(p.user.contains("\nANSWER: Paris | City"));
        assert!(p.user.contains("\nPATH: Paris | City | capital_of | France | Country"));
        assert!(p.user.contains("REMINDER"));
    }
}
