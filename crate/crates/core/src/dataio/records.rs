//! JSON-lines training example records.
//!
//! ```json
//! {"id": "ex1", "source_id": "msrvtt", "query_text": "a dog catching a frisbee",
//!  "query_visual": [], "positive": {"id": "vid42", "visual": ["vid42.mp4"]},
//!  "hard_negatives": [{"id": "vid7", "visual": ["vid7.mp4"]}]}
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formatting::{
    render_query, render_target, ModalityCode, RenderedQuery, RenderedTarget, TemplateTable,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetPayload {
    pub id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub visual: Vec<String>,
}

/// One training pair with optional hard negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub id: String,
    pub source_id: String,
    #[serde(default)]
    pub query_text: String,
    #[serde(default)]
    pub query_visual: Vec<String>,
    pub positive: TargetPayload,
    #[serde(default)]
    pub hard_negatives: Vec<TargetPayload>,
}

/// Rendered query, positive and hard negatives for one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedExample {
    pub query: RenderedQuery,
    pub positive: RenderedTarget,
    pub hard_negatives: Vec<RenderedTarget>,
}

impl ExampleRecord {
    /// Applies the query and target templates. Target payload text, when
    /// present, follows the rendered target instruction on a new line.
    pub fn render(
        &self,
        instruction: &str,
        target_instruction: &str,
        query_mod: ModalityCode,
        target_mod: ModalityCode,
        table: &TemplateTable,
    ) -> Result<RenderedExample> {
        let query = render_query(instruction, &self.query_text, query_mod, table)?
            .with_visual_refs(self.query_visual.clone());
        let target = |p: &TargetPayload| -> Result<RenderedTarget> {
            let mut t = render_target(target_instruction, target_mod, table)?
                .with_visual_refs(p.visual.clone());
            if !p.text.is_empty() {
                if !t.text.is_empty() {
                    t.text.push('\n');
                }
                t.text.push_str(&p.text);
            }
            Ok(t)
        };
        Ok(RenderedExample {
            query,
            positive: target(&self.positive)?,
            hard_negatives: self
                .hard_negatives
                .iter()
                .map(target)
                .collect::<Result<_>>()?,
        })
    }
}

pub fn parse_examples_str(text: &str, origin: &str) -> Result<Vec<ExampleRecord>> {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() {
            continue;
        }
        let located = |message: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        let rec: ExampleRecord = serde_json::from_str(l).map_err(|e| located(e.to_string()))?;
        if !seen.insert((rec.source_id.clone(), rec.id.clone())) {
            return Err(located(format!(
                "duplicate example id {:?} in source {:?}",
                rec.id, rec.source_id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_examples(path: impl AsRef<Path>) -> Result<Vec<ExampleRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_examples_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formatting::{Modality, VisualTokenTable};

    const LINE: &str = r#"{"id":"ex1","source_id":"msrvtt","query_text":"a dog catching a frisbee","positive":{"id":"vid42","visual":["vid42.mp4"]},"hard_negatives":[{"id":"vid7","visual":["vid7.mp4"]}]}"#;

    #[test]
    fn parse_and_render() {
        let recs = parse_examples_str(LINE, "ex.jsonl").unwrap();
        assert_eq!(recs.len(), 1);
        let table = TemplateTable::with_tokens(
            VisualTokenTable::new().with(Modality::Video, "<video-token>"),
        );
        let r = recs[0]
            .render(
                "Find a video that contains the following visual content:",
                "Understand the content of the provided video:",
                ModalityCode::TEXT,
                ModalityCode::VIDEO,
                &table,
            )
            .unwrap();
        assert_eq!(
            r.query.text,
            "Instruct: Find a video that contains the following visual content:\nQuery: a dog catching a frisbee"
        );
        assert_eq!(
            r.positive.text,
            "<video-token> Understand the content of the provided video:"
        );
        assert_eq!(r.positive.visual_refs, vec!["vid42.mp4"]);
        assert_eq!(r.hard_negatives.len(), 1);
    }

    #[test]
    fn duplicate_ids_within_a_source_are_rejected() {
        let text = format!("{LINE}\n{LINE}");
        assert!(matches!(
            parse_examples_str(&text, "ex.jsonl"),
            Err(Error::Parse { line: 2, .. })
        ));
        let other_source = LINE.replace("\"msrvtt\"", "\"vatex\"");
        assert_eq!(
            parse_examples_str(&format!("{LINE}\n{other_source}"), "x")
                .unwrap()
                .len(),
            2
        );
    }
}
