//! Golden prompt corpus shared with external renderers.

use std::collections::BTreeSet;

use mmembed_core::formatting::{
    render_query, render_target, Modality, ModalityCode, TemplateTable, VisualTokenTable,
};
use serde_json::Value;

const CORPUS: &str = include_str!("fixtures/prompts.json");

fn table(tokens: &Value) -> TemplateTable {
    let mut t = VisualTokenTable::new();
    for (k, v) in tokens.as_object().unwrap() {
        t = t.with(k.parse::<Modality>().unwrap(), v.as_str().unwrap());
    }
    TemplateTable::with_tokens(t)
}

#[test]
fn corpus_renders_byte_for_byte() {
    let doc: Value = serde_json::from_str(CORPUS).unwrap();
    let table = table(&doc["tokens"]);
    let fixtures = doc["fixtures"].as_array().unwrap();
    assert!(fixtures.len() >= 20);
    let mut codes = BTreeSet::new();
    for f in fixtures {
        let s = |k: &str| f[k].as_str().unwrap();
        let code: ModalityCode = s("modality").parse().unwrap();
        codes.insert(code.to_string());
        let got = match s("side") {
            "query" => {
                render_query(s("instruction"), s("text"), code, &table)
                    .unwrap()
                    .text
            }
            "target" => render_target(s("instruction"), code, &table).unwrap().text,
            other => panic!("unknown side {other}"),
        };
        assert_eq!(got, s("expected"), "fixture {}", s("name"));
    }
    for needed in ["T", "I", "V", "D", "T+V"] {
        assert!(codes.contains(needed), "corpus lacks {needed}");
    }
}
