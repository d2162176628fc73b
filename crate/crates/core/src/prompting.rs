//! Prompt rendering and response parsing.
//!
//! A prompt has four sections in fixed order: the task instruction, the
//! relation list (one `name : definition` line per relation, NA last), the
//! exemplar blocks, and the query block:
//!
//! ```text
//! Choose all applicable relations between head and tail entities ...
//! /people/person/nationality : head entity is a person and tail entity is a country
//! ...
//! NA : no relation from the set exists between the given entity pair
//!
//! Input: ... <Head> Ilan Halimi </Head> ... <Tail> France </Tail> ...
//! Output: /people/person/nationality
//!
//! Input: {query}
//! Output:
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelSet, RelationId, RelationOntology, SentenceInstance};

pub const DEFAULT_INSTRUCTION: &str = "Choose all applicable relations between head and tail entities from the set below. Print each relation in a new line. If none of the relations are applicable, output 'NA'.";
pub const DEFAULT_NA_DEFINITION: &str = "no relation from the set exists between the given entity pair";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("sentence {0:?}: head and tail spans overlap")]
    OverlappingTags(String),
    #[error("sentence {id:?}: span [{start}, {end}) outside text")]
    SpanOutOfRange { id: String, start: usize, end: usize },
    #[error("relation {0} is not in the ontology")]
    UnknownRelation(RelationId),
    #[error("invalid template: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationScope {
    #[default]
    FullOntology,
    CandidatesOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerTags {
    pub head_open: String,
    pub head_close: String,
    pub tail_open: String,
    pub tail_close: String,
}

impl Default for MarkerTags {
    fn default() -> Self {
        Self {
            head_open: "<Head>".into(),
            head_close: "</Head>".into(),
            tail_open: "<Tail>".into(),
            tail_close: "</Tail>".into(),
        }
    }
}

impl MarkerTags {
    fn all(&self) -> [&str; 4] {
        [&self.head_open, &self.head_close, &self.tail_open, &self.tail_close]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplate {
    pub task_instruction: String,
    pub include_definitions: bool,
    pub relation_scope: RelationScope,
    pub na_definition: String,
    pub marker_tags: MarkerTags,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            task_instruction: DEFAULT_INSTRUCTION.into(),
            include_definitions: true,
            relation_scope: RelationScope::FullOntology,
            na_definition: DEFAULT_NA_DEFINITION.into(),
            marker_tags: MarkerTags::default(),
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), PromptError> {
        let tags = self.marker_tags.all();
        if tags.iter().any(|t| t.is_empty()) {
            return Err(PromptError::Template("empty marker tag".into()));
        }
        let distinct: BTreeSet<_> = tags.iter().collect();
        if distinct.len() != tags.len() {
            return Err(PromptError::Template("marker tags must be distinct".into()));
        }
        Ok(())
    }
}

/// One `Input:/Output:` block: a sentence, or several sentences of one bag
/// rendered as a passage.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarBlock<'a> {
    pub sentences: Vec<&'a SentenceInstance>,
    pub labels: LabelSet,
}

/// Wraps the head and tail mentions in marker tags. The tag and the
/// mention are separated by one space (`<Head> Google </Head>`).
pub fn tag_sentence(s: &SentenceInstance, tags: &MarkerTags) -> Result<String, PromptError> {
    if s.head.overlaps(&s.tail) {
        return Err(PromptError::OverlappingTags(s.sentence_id.clone()));
    }
    let chars: Vec<char> = s.text.chars().collect();
    for span in [&s.head, &s.tail] {
        if span.start >= span.end || span.end > chars.len() {
            return Err(PromptError::SpanOutOfRange {
                id: s.sentence_id.clone(),
                start: span.start,
                end: span.end,
            });
        }
    }
    let mut inserts: Vec<(usize, u8, String)> = vec![
        (s.head.start, 1, format!("{} ", tags.head_open)),
        (s.head.end, 0, format!(" {}", tags.head_close)),
        (s.tail.start, 1, format!("{} ", tags.tail_open)),
        (s.tail.end, 0, format!(" {}", tags.tail_close)),
    ];
    // closing tags before opening tags at the same offset
    inserts.sort_by_key(|(pos, kind, _)| (*pos, *kind));
    let mut out = String::with_capacity(s.text.len() + 32);
    let mut next = inserts.iter().peekable();
    for (i, c) in chars.iter().enumerate() {
        while let Some((_, _, tag)) = next.next_if(|(pos, _, _)| *pos == i) {
            out.push_str(tag);
        }
        out.push(*c);
    }
    for (_, _, tag) in next {
        out.push_str(tag);
    }
    Ok(out)
}

fn relation_lines(
    out: &mut String,
    ontology: &RelationOntology,
    template: &PromptTemplate,
    candidates: &[RelationId],
) -> Result<(), PromptError> {
    let listed: Vec<RelationId> = match template.relation_scope {
        RelationScope::FullOntology => ontology.ids().collect(),
        RelationScope::CandidatesOnly => {
            let set: BTreeSet<RelationId> = candidates.iter().copied().collect();
            if let Some(r) = set.iter().find(|r| r.0 >= ontology.len()) {
                return Err(PromptError::UnknownRelation(*r));
            }
            set.into_iter().collect()
        }
    };
    let mut line = |name: &str, def: &str| {
        out.push_str(name);
        if template.include_definitions {
            out.push_str(" : ");
            out.push_str(def);
        }
        out.push('\n');
    };
    for r in listed {
        line(ontology.name(r), ontology.definition(r));
    }
    line(ontology.na_symbol(), &template.na_definition);
    Ok(())
}

fn output_lines(labels: &LabelSet, ontology: &RelationOntology) -> Result<String, PromptError> {
    if let Some(r) = labels.iter().find(|r| r.0 >= ontology.len()) {
        return Err(PromptError::UnknownRelation(*r));
    }
    Ok(ontology.label_names(labels).join("\n"))
}

/// Renders the full prompt. `candidates` is only read when the template's
/// relation scope is [`RelationScope::CandidatesOnly`]. The result ends with
/// `Output:` and no trailing newline.
pub fn render_prompt(
    query: &SentenceInstance,
    exemplars: &[ExemplarBlock<'_>],
    candidates: &[RelationId],
    ontology: &RelationOntology,
    template: &PromptTemplate,
) -> Result<String, PromptError> {
    template.validate()?;
    let tags = &template.marker_tags;
    let mut out = String::new();
    out.push_str(&template.task_instruction);
    out.push('\n');
    relation_lines(&mut out, ontology, template, candidates)?;
    for block in exemplars {
        let passage = block
            .sentences
            .iter()
            .map(|s| tag_sentence(s, tags))
            .collect::<Result<Vec<_>, _>>()?
            .join(" ");
        out.push_str("\nInput: ");
        out.push_str(&passage);
        out.push_str("\nOutput: ");
        out.push_str(&output_lines(&block.labels, ontology)?);
        out.push('\n');
    }
    out.push_str("\nInput: ");
    out.push_str(&tag_sentence(query, tags)?);
    out.push_str("\nOutput:");
    Ok(out)
}

/// Relations recovered from a model response. An empty set means NA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub relations: LabelSet,
    pub raw_response: String,
    /// Response lines (trimmed) on which something matched.
    pub matched_lines: Vec<String>,
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '/' || c == '-'
}

/// Whether `name` occurs in `line` bounded by characters that cannot be
/// part of a relation name.
fn contains_bounded(line: &str, name: &str) -> bool {
    line.match_indices(name).any(|(i, m)| {
        let before = line[..i].chars().next_back();
        let after = line[i + m.len()..].chars().next();
        !before.is_some_and(is_name_char) && !after.is_some_and(is_name_char)
    })
}

fn token_matches(line: &str, name: &str) -> bool {
    line.split_whitespace().any(|tok| {
        tok == name
            || tok.trim_matches(|c: char| c.is_ascii_punctuation() && c != '/' && c != '_') == name
    })
}

fn matches_name(line: &str, name: &str) -> bool {
    if name.contains('/') {
        contains_bounded(line, name)
    } else {
        token_matches(line, name)
    }
}

/// Extracts every ontology relation named exactly in the response. Names
/// containing `/` are found anywhere as long as they are not embedded in a
/// longer name; other names must be whole whitespace-delimited tokens. NA
/// next to real relations is dropped; no match at all means NA.
pub fn parse_response(raw: &str, ontology: &RelationOntology) -> ParsedPrediction {
    let mut relations = LabelSet::new();
    let mut matched_lines = Vec::new();
    for line in raw.lines() {
        let mut hit = false;
        for r in ontology.ids() {
            if matches_name(line, ontology.name(r)) {
                relations.insert(r);
                hit = true;
            }
        }
        if matches_name(line, ontology.na_symbol()) {
            hit = true;
        }
        if hit {
            matched_lines.push(line.trim().to_owned());
        }
    }
    ParsedPrediction {
        relations,
        raw_response: raw.to_owned(),
        matched_lines,
    }
}
