//! Instruction-conditioned rendering of queries and targets, modality codes
//! and uniform frame selection for video inputs.
//!
//! Templates are data. The default query template is
//! `{visual} Instruct: {instruction}\nQuery: {query}` and the default target
//! template is `{visual} {instruction}`. When `{visual}` or `{instruction}`
//! expands to nothing, one adjacent space is dropped with it (the following
//! one if present, else the preceding one), so text-only inputs carry no
//! stray token or separator. `{query}` never collapses.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One of the four input modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Text,
    Image,
    Video,
    Document,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Text,
        Modality::Image,
        Modality::Video,
        Modality::Document,
    ];

    pub fn letter(self) -> char {
        match self {
            Modality::Text => 'T',
            Modality::Image => 'I',
            Modality::Video => 'V',
            Modality::Document => 'D',
        }
    }

    pub fn is_visual(self) -> bool {
        self != Modality::Text
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "T" => Ok(Modality::Text),
            "I" => Ok(Modality::Image),
            "V" => Ok(Modality::Video),
            "D" => Ok(Modality::Document),
            other => Err(Error::UnknownModality(other.to_string())),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl Serialize for Modality {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Modality {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A single modality or an interleaved combination such as `T+V`.
///
/// Parsing accepts `+`-separated letters with optional whitespace (`T + V`);
/// display is canonical, in `T`, `I`, `V`, `D` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModalityCode(u8);

impl ModalityCode {
    pub const TEXT: ModalityCode = ModalityCode(1);
    pub const IMAGE: ModalityCode = ModalityCode(2);
    pub const VIDEO: ModalityCode = ModalityCode(4);
    pub const DOCUMENT: ModalityCode = ModalityCode(8);

    pub fn from_modalities(mods: &[Modality]) -> Result<Self> {
        if mods.is_empty() {
            return Err(Error::UnknownModality(String::new()));
        }
        Ok(ModalityCode(mods.iter().fold(0, |acc, m| acc | m.bit())))
    }

    pub fn contains(self, m: Modality) -> bool {
        self.0 & m.bit() != 0
    }

    pub fn modalities(self) -> impl Iterator<Item = Modality> {
        Modality::ALL.into_iter().filter(move |m| self.contains(*m))
    }

    pub fn has_visual(self) -> bool {
        self.modalities().any(Modality::is_visual)
    }
}

impl FromStr for ModalityCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('+').collect();
        let mut bits = 0u8;
        for p in &parts {
            let m: Modality = p
                .parse()
                .map_err(|_| Error::UnknownModality(s.to_string()))?;
            if bits & m.bit() != 0 {
                return Err(Error::UnknownModality(s.to_string()));
            }
            bits |= m.bit();
        }
        Ok(ModalityCode(bits))
    }
}

impl fmt::Display for ModalityCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let letters: Vec<String> = self.modalities().map(|m| m.letter().to_string()).collect();
        f.write_str(&letters.join("+"))
    }
}

impl Serialize for ModalityCode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModalityCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Token text prepended for each visual modality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VisualTokenTable(BTreeMap<Modality, String>);

impl VisualTokenTable {
    pub fn new() -> Self {
        Self(BTreeMap::new())
    }

    pub fn with(mut self, modality: Modality, token: impl Into<String>) -> Self {
        self.0.insert(modality, token.into());
        self
    }

    pub fn get(&self, modality: Modality) -> Option<&str> {
        self.0.get(&modality).map(String::as_str)
    }

    /// Space-joined tokens for every visual modality in `code`, in canonical
    /// order. Empty for text-only codes.
    pub fn segment_for(&self, code: ModalityCode) -> Result<String> {
        let mut tokens = Vec::new();
        for m in code.modalities().filter(|m| m.is_visual()) {
            match self.get(m) {
                Some(t) if !t.is_empty() => tokens.push(t),
                _ => return Err(Error::MissingToken(code.to_string())),
            }
        }
        Ok(tokens.join(" "))
    }
}

impl Default for VisualTokenTable {
    /// Qwen2-VL style pad tokens; document pages are rendered as images.
    fn default() -> Self {
        Self::new()
            .with(Modality::Image, "<|image_pad|>")
            .with(Modality::Video, "<|video_pad|>")
            .with(Modality::Document, "<|image_pad|>")
    }
}

pub const DEFAULT_QUERY_TEMPLATE: &str = "{visual} Instruct: {instruction}\nQuery: {query}";
pub const DEFAULT_TARGET_TEMPLATE: &str = "{visual} {instruction}";

/// Query and target templates plus the visual token table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateTable {
    pub query: String,
    pub target: String,
    pub tokens: VisualTokenTable,
}

impl Default for TemplateTable {
    fn default() -> Self {
        Self {
            query: DEFAULT_QUERY_TEMPLATE.to_string(),
            target: DEFAULT_TARGET_TEMPLATE.to_string(),
            tokens: VisualTokenTable::default(),
        }
    }
}

impl TemplateTable {
    pub fn with_tokens(tokens: VisualTokenTable) -> Self {
        Self {
            tokens,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        parse_template(&self.query)?;
        parse_template(&self.target)?;
        if !self.query.contains("{instruction}") || !self.query.contains("{query}") {
            return Err(Error::Config(
                "query template needs {instruction} and {query}".into(),
            ));
        }
        if self.target.contains("{query}") {
            return Err(Error::Config("target template cannot use {query}".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Visual,
    Instruction,
    Query,
}

#[derive(Debug)]
enum Piece<'a> {
    Literal(&'a str),
    Slot(Slot),
}

fn parse_template(template: &str) -> Result<Vec<Piece<'_>>> {
    let mut pieces = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        if start > 0 {
            pieces.push(Piece::Literal(&rest[..start]));
        }
        let end = rest[start..]
            .find('}')
            .ok_or_else(|| Error::Config(format!("unclosed placeholder in {template:?}")))?
            + start;
        let slot = match &rest[start + 1..end] {
            "visual" => Slot::Visual,
            "instruction" => Slot::Instruction,
            "query" => Slot::Query,
            other => {
                return Err(Error::Config(format!("unknown placeholder {{{other}}}")));
            }
        };
        pieces.push(Piece::Slot(slot));
        rest = &rest[end + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Literal(rest));
    }
    Ok(pieces)
}

fn render(template: &str, visual: &str, instruction: &str, query: &str) -> Result<String> {
    let pieces = parse_template(template)?;
    let mut out = String::new();
    let mut skip_space = false;
    for piece in pieces {
        match piece {
            Piece::Literal(mut lit) => {
                if skip_space {
                    match lit.strip_prefix(' ') {
                        Some(stripped) => lit = stripped,
                        None if out.ends_with(' ') => {
                            out.pop();
                        }
                        None => {}
                    }
                    skip_space = false;
                }
                out.push_str(lit);
            }
            Piece::Slot(slot) => {
                let value = match slot {
                    Slot::Visual => visual,
                    Slot::Instruction => instruction,
                    Slot::Query => query,
                };
                skip_space = false;
                if value.is_empty() && slot != Slot::Query {
                    skip_space = true;
                } else {
                    out.push_str(value);
                }
            }
        }
    }
    // A collapsed slot at the end of the template takes the preceding space instead.
    if skip_space && out.ends_with(' ') {
        out.pop();
    }
    Ok(out)
}

/// Instruction-conditioned query text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedQuery {
    pub text: String,
    pub visual_refs: Vec<String>,
    pub modality: ModalityCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedTarget {
    pub text: String,
    pub visual_refs: Vec<String>,
    pub modality: ModalityCode,
}

impl RenderedQuery {
    pub fn with_visual_refs(mut self, refs: Vec<String>) -> Self {
        self.visual_refs = refs;
        self
    }
}

impl RenderedTarget {
    pub fn with_visual_refs(mut self, refs: Vec<String>) -> Self {
        self.visual_refs = refs;
        self
    }
}

pub fn render_query(
    task_instruction: &str,
    query_text: &str,
    modality: ModalityCode,
    table: &TemplateTable,
) -> Result<RenderedQuery> {
    if task_instruction.is_empty() {
        return Err(Error::InvalidArgument(
            "task instruction must not be empty".into(),
        ));
    }
    let visual = table.tokens.segment_for(modality)?;
    Ok(RenderedQuery {
        text: render(&table.query, &visual, task_instruction, query_text)?,
        visual_refs: Vec::new(),
        modality,
    })
}

/// Target text; the instruction is optional and may be empty.
pub fn render_target(
    target_instruction: &str,
    modality: ModalityCode,
    table: &TemplateTable,
) -> Result<RenderedTarget> {
    let visual = table.tokens.segment_for(modality)?;
    Ok(RenderedTarget {
        text: render(&table.target, &visual, target_instruction, "")?,
        visual_refs: Vec::new(),
        modality,
    })
}

/// Center-of-bin frame selection: `floor((i + 0.5) * n_frames / k)` for `i in 0..k`.
pub fn sample_frame_indices(n_frames: usize, k: usize) -> Result<Vec<usize>> {
    if n_frames == 0 {
        return Err(Error::InvalidArgument("video has no frames".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument(
            "must sample at least one frame".into(),
        ));
    }
    let (n, k128) = (n_frames as u128, k as u128);
    Ok((0..k128)
        .map(|i| ((2 * i + 1) * n / (2 * k128)) as usize)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture_table() -> TemplateTable {
        TemplateTable::with_tokens(
            VisualTokenTable::new()
                .with(Modality::Image, "<image-token>")
                .with(Modality::Video, "<video-token>")
                .with(Modality::Document, "<image-token>"),
        )
    }

    #[test]
    fn video_query() {
        let q = render_query(
            "Find a video that contains the following visual content:",
            "a dog catching a frisbee",
            ModalityCode::VIDEO,
            &fixture_table(),
        )
        .unwrap();
        assert_eq!(
            q.text,
            "<video-token> Instruct: Find a video that contains the following visual content:\nQuery: a dog catching a frisbee"
        );
    }

    #[test]
    fn text_query_with_empty_payload() {
        let q = render_query("X", "", ModalityCode::TEXT, &fixture_table()).unwrap();
        assert_eq!(q.text, "Instruct: X\nQuery: ");
    }

    #[test]
    fn classification_query_has_empty_slot() {
        let q = render_query(
            "Recognize the category of the video contents.",
            "",
            ModalityCode::VIDEO,
            &fixture_table(),
        )
        .unwrap();
        assert_eq!(
            q.text,
            "<video-token> Instruct: Recognize the category of the video contents.\nQuery: "
        );
    }

    #[test]
    fn targets() {
        let t = fixture_table();
        assert_eq!(
            render_target(
                "Understand the content of the provided video:",
                ModalityCode::VIDEO,
                &t
            )
            .unwrap()
            .text,
            "<video-token> Understand the content of the provided video:"
        );
        assert_eq!(render_target("", ModalityCode::TEXT, &t).unwrap().text, "");
        assert_eq!(
            render_target("Represent the document page.", ModalityCode::DOCUMENT, &t)
                .unwrap()
                .text,
            "<image-token> Represent the document page."
        );
        assert_eq!(
            render_target("", ModalityCode::VIDEO, &t).unwrap().text,
            "<video-token>"
        );
    }

    #[test]
    fn missing_token_and_empty_instruction() {
        let t = TemplateTable::with_tokens(VisualTokenTable::new().with(Modality::Image, "<i>"));
        assert!(matches!(
            render_query("x", "y", ModalityCode::VIDEO, &t),
            Err(Error::MissingToken(_))
        ));
        assert!(matches!(
            render_target("x", ModalityCode::VIDEO, &t),
            Err(Error::MissingToken(_))
        ));
        assert!(render_query("", "y", ModalityCode::TEXT, &t).is_err());
    }

    #[test]
    fn interleaved_codes() {
        let tv: ModalityCode = "T + V".parse().unwrap();
        assert_eq!(tv.to_string(), "T+V");
        assert!(tv.has_visual());
        let q = render_query("Find the clip.", "dolphin", tv, &fixture_table()).unwrap();
        assert_eq!(
            q.text,
            "<video-token> Instruct: Find the clip.\nQuery: dolphin"
        );
        let iv: ModalityCode = "V+I".parse().unwrap();
        assert_eq!(iv.to_string(), "I+V");
        assert_eq!(
            fixture_table().tokens.segment_for(iv).unwrap(),
            "<image-token> <video-token>"
        );
        assert!("X".parse::<ModalityCode>().is_err());
        assert!("T+T".parse::<ModalityCode>().is_err());
        assert!("".parse::<ModalityCode>().is_err());
    }

    #[test]
    fn templates_validate() {
        assert!(TemplateTable::default().validate().is_ok());
        let bad = TemplateTable {
            query: "{nope}".into(),
            ..TemplateTable::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn frame_examples() {
        assert_eq!(
            sample_frame_indices(16, 8).unwrap(),
            vec![1, 3, 5, 7, 9, 11, 13, 15]
        );
        assert_eq!(
            sample_frame_indices(8, 8).unwrap(),
            (0..8).collect::<Vec<_>>()
        );
        // floor((2i+1) * 5 / 16) evaluated by hand.
        assert_eq!(
            sample_frame_indices(5, 8).unwrap(),
            vec![0, 0, 1, 2, 2, 3, 4, 4]
        );
        assert!(sample_frame_indices(0, 8).is_err());
        assert!(sample_frame_indices(3, 0).is_err());
    }

    proptest! {
        #[test]
        fn frames_are_monotone_and_in_range(n in 1usize..500, k in 1usize..64) {
            let idx = sample_frame_indices(n, k).unwrap();
            prop_assert_eq!(idx.len(), k);
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(idx.iter().all(|&i| i < n));
            if n >= k {
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                let ratio = n as f64 / k as f64;
                for w in idx.windows(2) {
                    prop_assert!(((w[1] - w[0]) as f64 - ratio).abs() <= 1.0);
                }
            }
        }

        #[test]
        fn rendering_is_deterministic(instr in "[a-zA-Z .:]{1,40}", q in "[a-z ]{0,40}") {
            let t = fixture_table();
            let a = render_query(&instr, &q, ModalityCode::IMAGE, &t).unwrap();
            let b = render_query(&instr, &q, ModalityCode::IMAGE, &t).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
