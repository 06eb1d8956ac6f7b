//! Prompt templates with `{placeholder}` substitution.
//!
//! A placeholder is `{name}` or `{name:style}` where `style` controls how a
//! list binding is laid out: `inline` gives `[a, b, c]`, `numbered` gives
//! `1. a` lines, `lines` (the default) puts one item per line. List order is
//! kept exactly as supplied; several callers rely on it being a ranking.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Decompose,
    RelationPrune,
    TriplePrune,
    TripleRefine,
    FinalAnswer,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        Self::Decompose,
        Self::RelationPrune,
        Self::TriplePrune,
        Self::TripleRefine,
        Self::FinalAnswer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Decompose => "decompose",
            Self::RelationPrune => "relation_prune",
            Self::TriplePrune => "triple_prune",
            Self::TripleRefine => "triple_refine",
            Self::FinalAnswer => "final_answer",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            Self::Decompose => include_str!("../../assets/prompts/decompose.txt"),
            Self::RelationPrune => include_str!("../../assets/prompts/relation_prune.txt"),
            Self::TriplePrune => include_str!("../../assets/prompts/triple_prune.txt"),
            Self::TripleRefine => include_str!("../../assets/prompts/triple_refine.txt"),
            Self::FinalAnswer => include_str!("../../assets/prompts/final_answer.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Binding {
    Text(String),
    List(Vec<String>),
}

impl Binding {
    /// Flat text form, list items joined by newlines. Used for script matching.
    pub fn flatten(&self) -> String {
        match self {
            Self::Text(s) => s.clone(),
            Self::List(items) => items.join("\n"),
        }
    }
}

impl From<&str> for Binding {
    fn from(s: &str) -> Self {
        Self::Text(s.to_string())
    }
}

impl From<String> for Binding {
    fn from(s: String) -> Self {
        Self::Text(s)
    }
}

impl From<Vec<String>> for Binding {
    fn from(items: Vec<String>) -> Self {
        Self::List(items)
    }
}

pub type Bindings = BTreeMap<String, Binding>;

/// Builds a `Bindings` map from `name => value` pairs.
#[macro_export]
macro_rules! bindings {
    ($($name:expr => $value:expr),* $(,)?) => {{
        let mut b = $crate::llm::Bindings::new();
        $(b.insert($name.to_string(), $crate::llm::Binding::from($value));)*
        b
    }};
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("placeholder `{0}` is not bound")]
    Unbound(String),
    #[error("list `{0}` is empty")]
    EmptyList(String),
    #[error("unknown list style `{style}` for `{name}`")]
    UnknownStyle { name: String, style: String },
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Renders one template string.
pub fn render_str(template: &str, bindings: &Bindings) -> Result<String, RenderError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            return Ok(out);
        };
        let inner = &after[..close];
        let (name, style) = match inner.split_once(':') {
            Some((n, s)) => (n, Some(s)),
            None => (inner, None),
        };
        if !is_name(name) || style.is_some_and(|s| !is_name(s)) {
            // Not a placeholder; keep the brace literally.
            out.push('{');
            rest = after;
            continue;
        }
        let value = bindings
            .get(name)
            .ok_or_else(|| RenderError::Unbound(name.to_string()))?;
        match value {
            Binding::Text(s) => out.push_str(s),
            Binding::List(items) => {
                if items.is_empty() {
                    return Err(RenderError::EmptyList(name.to_string()));
                }
                match style.unwrap_or("lines") {
                    "inline" => {
                        out.push('[');
                        out.push_str(&items.join(", "));
                        out.push(']');
                    }
                    "numbered" => {
                        let lines: Vec<String> = items
                            .iter()
                            .enumerate()
                            .map(|(i, item)| format!("{}. {}", i + 1, item))
                            .collect();
                        out.push_str(&lines.join("\n"));
                    }
                    "lines" => out.push_str(&items.join("\n")),
                    other => {
                        return Err(RenderError::UnknownStyle {
                            name: name.to_string(),
                            style: other.to_string(),
                        })
                    }
                }
            }
        }
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// The five pipeline templates, built-in unless overridden from files.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            templates: TemplateId::ALL
                .iter()
                .map(|&id| (id, id.builtin().to_string()))
                .collect(),
        }
    }
}

impl TemplateSet {
    pub fn set(&mut self, id: TemplateId, text: impl Into<String>) {
        self.templates.insert(id, text.into());
    }

    pub fn load_override(&mut self, id: TemplateId, path: &Path) -> Result<(), RenderError> {
        let text = std::fs::read_to_string(path).map_err(|e| RenderError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.set(id, text);
        Ok(())
    }

    pub fn get(&self, id: TemplateId) -> &str {
        &self.templates[&id]
    }

    pub fn render(&self, id: TemplateId, bindings: &Bindings) -> Result<String, RenderError> {
        render_str(self.get(id), bindings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relations(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("domain.type{i}.target{i}")).collect()
    }

    #[test]
    fn relation_prompt_keeps_all_candidates_in_order() {
        let set = TemplateSet::default();
        let cands = relations(10);
        let prompt = set
            .render(
                TemplateId::RelationPrune,
                &bindings! {
                    "sub_question" => "What sports team's owners are Jerry Jones?",
                    "source" => "Jerry Jones",
                    "n" => "3",
                    "candidates" => cands.clone(),
                },
            )
            .unwrap();
        let mut last = 0;
        for c in &cands {
            let at = prompt[last..].find(c.as_str()).expect("candidate missing") + last;
            last = at + c.len();
        }
        for step in ["First", "Second", "Third", "Fourth", "Return:"] {
            assert!(prompt.contains(step), "missing scaffold step {step}");
        }
        assert!(prompt.contains("at most 3 relations"));
    }

    #[test]
    fn empty_candidate_list_is_an_error() {
        let set = TemplateSet::default();
        let err = set
            .render(
                TemplateId::RelationPrune,
                &bindings! {"sub_question" => "q", "source" => "s", "n" => "3", "candidates" => Vec::<String>::new()},
            )
            .unwrap_err();
        assert_eq!(err, RenderError::EmptyList("candidates".into()));
    }

    #[test]
    fn unbound_placeholder_is_an_error() {
        let err = render_str("hello {who}", &Bindings::new()).unwrap_err();
        assert_eq!(err, RenderError::Unbound("who".into()));
    }

    #[test]
    fn final_answer_numbers_evidence() {
        let set = TemplateSet::default();
        let paths: Vec<String> = (1..=5).map(|i| format!("path {i}")).collect();
        let prompt = set
            .render(
                TemplateId::FinalAnswer,
                &bindings! {"question" => "q?", "evidence" => paths},
            )
            .unwrap();
        for i in 1..=5 {
            assert!(prompt.contains(&format!("{i}. path {i}\n")) || prompt.contains(&format!("{i}. path {i}")));
        }
        assert!(!prompt.contains("6. "));
    }

    #[test]
    fn literal_braces_survive() {
        let out = render_str("json {\"a\": 1} and {x}", &bindings! {"x" => "y"}).unwrap();
        assert_eq!(out, "json {\"a\": 1} and y");
    }

    #[test]
    fn order_changes_prompt() {
        let a = render_str("{c:inline}", &bindings! {"c" => vec!["a".to_string(), "b".to_string()]}).unwrap();
        let b = render_str("{c:inline}", &bindings! {"c" => vec!["b".to_string(), "a".to_string()]}).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, "[a, b]");
    }

    #[test]
    fn builtin_templates_render_with_expected_bindings() {
        let set = TemplateSet::default();
        let list = vec!["x".to_string()];
        let all = bindings! {
            "question" => "q", "sub_question" => "q", "source" => "s", "n" => "3",
            "candidates" => list.clone(), "triples" => list.clone(), "evidence" => list,
            "previous_answer" => "a",
        };
        for id in TemplateId::ALL {
            set.render(id, &all).unwrap();
        }
    }
}
