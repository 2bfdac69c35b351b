//! Rule-based responses for prompts that have no recorded fixture.
//!
//! * extraction: echoes the `S | P | O` fact lines embedded in the document
//! * stems: a template question built from the subgraph's entities and relations
//! * distractor validation: `NO` unless the candidate is an object of a source fact
//! * extra-fact judging: `YES` iff the stem uses a word outside the subgraph
//!   vocabulary and a closed list of function words

use std::collections::HashSet;

use super::prompts::{FactRecord, TASK_EXTRACT, TASK_EXTRA_FACT, TASK_STEM, TASK_VALIDATE};
use super::{ChatPrompt, LlmError};
use crate::graph::normalize_name;

/// Function and question words the stub stem templates may use freely.
pub const STOP_WORDS: &[&str] = &[
    "a", "also", "an", "and", "are", "as", "at", "be", "been", "by", "did", "do", "does", "for", "from", "had", "has",
    "have", "how", "in", "into", "is", "it", "its", "of", "on", "one", "or", "s", "than", "that", "the", "their",
    "then", "there", "these", "this", "those", "to", "was", "were", "what", "when", "where", "which", "who", "whom",
    "whose", "with",
];

pub fn synthesize(prompt: &ChatPrompt) -> Result<String, LlmError> {
    let task = prompt.user.lines().next().and_then(|l| l.strip_prefix("TASK:")).map(str::trim).unwrap_or_default();
    match task {
        TASK_EXTRACT => Ok(extract(&prompt.user)),
        TASK_STEM => stem(&prompt.user),
        TASK_VALIDATE => Ok(validate(&prompt.user)),
        TASK_EXTRA_FACT => Ok(extra_fact(&prompt.user)),
        other => Err(LlmError::InvalidPrompt(format!("stub cannot synthesize a reply for task `{other}`"))),
    }
}

fn tagged<'a>(text: &'a str, tag: &str) -> impl Iterator<Item = &'a str> + 'a {
    let prefix = format!("{tag}:");
    text.lines().filter_map(move |l| l.strip_prefix(prefix.as_str()).map(str::trim))
}

fn tagged_facts(text: &str, tag: &str) -> Vec<FactRecord> {
    tagged(text, tag).filter_map(FactRecord::parse_line).collect()
}

fn extract(user: &str) -> String {
    let body = match (user.find("<<<\n"), user.rfind("\n>>>")) {
        (Some(start), Some(end)) if start + 4 <= end => &user[start + 4..end],
        _ => "",
    };
    body.lines().filter_map(parse_embedded_fact).map(|f| f.to_line()).collect::<Vec<_>>().join("\n")
}

/// Accepts both the five-field form and `Name (Type) | predicate | Name (Type)`.
fn parse_embedded_fact(line: &str) -> Option<FactRecord> {
    if let Some(fact) = FactRecord::parse_line(line) {
        return Some(fact);
    }
    let fields: Vec<&str> = line.trim().split('|').map(str::trim).collect();
    if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
        return None;
    }
    let (subject, subject_type) = split_typed(fields[0]);
    let (object, object_type) = split_typed(fields[2]);
    Some(FactRecord { subject, subject_type, predicate: fields[1].to_string(), object, object_type })
}

fn split_typed(field: &str) -> (String, String) {
    if let Some(open) = field.rfind('(') {
        if field.ends_with(')') && open > 0 {
            let name = field[..open].trim();
            let ty = field[open + 1..field.len() - 1].trim();
            if !name.is_empty() && !ty.is_empty() {
                return (name.to_string(), ty.to_string());
            }
        }
    }
    (field.to_string(), "Entity".to_string())
}

/// Lowercase words of a label, splitting on `_`, `-`, spaces and camel case.
pub fn label_words(label: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut prev_lower = false;
    for c in label.chars() {
        if !c.is_alphanumeric() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            prev_lower = false;
            continue;
        }
        if c.is_uppercase() && prev_lower && !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
        prev_lower = c.is_lowercase() || c.is_ascii_digit();
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Past-tense verbs that read as active voice without a leading "is".
const ACTIVE_PAST: &[&str] = &[
    "composed",
    "died",
    "directed",
    "discovered",
    "founded",
    "invented",
    "lived",
    "married",
    "moved",
    "painted",
    "played",
    "ruled",
    "served",
    "studied",
    "worked",
    "wrote",
];

fn verb_phrase(predicate: &str) -> String {
    let words = label_words(predicate);
    let phrase = words.join(" ");
    let Some(first) = words.first() else {
        return phrase;
    };
    if ["is", "was", "are", "were", "has", "had", "have"].contains(&first.as_str())
        || ACTIVE_PAST.contains(&first.as_str())
    {
        phrase
    } else if first.ends_with("ed") || first.ends_with("en") || first == "born" {
        format!("is {phrase}")
    } else if first.len() > 3 && first.ends_with('s') && !first.ends_with("ss") {
        phrase
    } else {
        format!("is the {phrase}")
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn stem(user: &str) -> Result<String, LlmError> {
    let (key_name, key_type) = tagged(user, "ANSWER")
        .next()
        .and_then(|l| l.split_once('|'))
        .map(|(n, t)| (n.trim().to_string(), t.trim().to_string()))
        .ok_or_else(|| LlmError::InvalidPrompt("stem prompt without ANSWER line".into()))?;
    let key = normalize_name(&key_name);
    let ty = label_words(&key_type).join(" ");
    let path = tagged_facts(user, "PATH");
    let is_key = |name: &str| normalize_name(name) == key;

    let question = match path.as_slice() {
        [edge] => {
            let vp = verb_phrase(&edge.predicate);
            if is_key(&edge.subject) {
                format!("Which {ty} {vp} {}?", edge.object)
            } else {
                format!("{} {vp} which {ty}?", capitalize(&edge.subject))
            }
        }
        [first, second] => {
            let key_is_subject = is_key(&first.subject);
            let (mid, mid_type) = if key_is_subject {
                (&first.object, &first.object_type)
            } else {
                (&first.subject, &first.subject_type)
            };
            let mid_type = label_words(mid_type).join(" ");
            let vp2 = verb_phrase(&second.predicate);
            let mid_desc = if normalize_name(&second.subject) == normalize_name(mid) {
                format!("the {mid_type} that {vp2} {}", second.object)
            } else {
                format!("the {mid_type} that {} {vp2}", second.subject)
            };
            let vp1 = verb_phrase(&first.predicate);
            if key_is_subject {
                format!("Which {ty} {vp1} {mid_desc}?")
            } else {
                format!("{} {vp1} which {ty}?", capitalize(&mid_desc))
            }
        }
        _ => return Err(LlmError::InvalidPrompt("stem prompt needs one or two PATH facts".into())),
    };

    let context = tagged_facts(user, "EXTRA").into_iter().next().map(|extra| {
        let vp = verb_phrase(&extra.predicate);
        if is_key(&extra.subject) {
            format!("This {ty} {vp} {}.", extra.object)
        } else {
            format!("{} {vp} this {ty}.", capitalize(&extra.subject))
        }
    });
    Ok(match context {
        Some(c) => format!("{c} {question}"),
        None => question,
    })
}

fn validate(user: &str) -> String {
    let candidate = tagged(user, "CANDIDATE").next().map(normalize_name).unwrap_or_default();
    let hit = tagged_facts(user, "FACT").iter().any(|f| normalize_name(&f.object) == candidate);
    if hit { "YES" } else { "NO" }.to_string()
}

fn extra_fact(user: &str) -> String {
    let stem = tagged(user, "QUESTION").next().unwrap_or_default();
    let mut vocab: HashSet<String> = STOP_WORDS.iter().map(|s| s.to_string()).collect();
    for fact in tagged_facts(user, "FACT") {
        for field in [&fact.subject, &fact.subject_type, &fact.predicate, &fact.object, &fact.object_type] {
            vocab.extend(label_words(field));
            vocab.extend(word_tokens(field));
        }
    }
    let novel = word_tokens(stem).into_iter().any(|t| !vocab.contains(&t));
    if novel { "YES" } else { "NO" }.to_string()
}

/// Lowercase alphanumeric runs.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}
