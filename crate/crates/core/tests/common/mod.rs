//! Shared generators for integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use querywise::domain::{FacetTag, FacetValue};
use querywise::eval::{Counts, LabeledExample, Prediction};
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use serde_json::{json, Map, Value};

const WORDS: &[&str] = &["Naples", "café", "日本", "São Paulo", "a\"quote", "back\\slash", "tab\there", "emoji 🚀", "{braces}", "[x]"];
const PROSE: &[&str] = &["", " ", "\n", "Thinking... ", "ok ", "résumé → ", "calls follow:\n"];

fn scalar(rng: &mut impl RngCore) -> Value {
    match rng.random_range(0..5) {
        0 => json!(WORDS.choose(rng).unwrap()),
        1 => json!(rng.random_range(-1000..1000)),
        2 => json!(rng.random_bool(0.5)),
        3 => json!(rng.random_range(0.0..1.0f64)),
        _ => Value::Null,
    }
}

fn value(rng: &mut impl RngCore, depth: u32) -> Value {
    if depth == 0 || rng.random_bool(0.6) {
        return scalar(rng);
    }
    if rng.random_bool(0.5) {
        Value::Array((0..rng.random_range(0..4)).map(|_| value(rng, depth - 1)).collect())
    } else {
        Value::Object(object(rng, depth - 1))
    }
}

fn object(rng: &mut impl RngCore, depth: u32) -> Map<String, Value> {
    (0..rng.random_range(0..4)).map(|i| (format!("k{i}_{}", WORDS.choose(rng).unwrap()), value(rng, depth))).collect()
}

/// A well-formed response: tool-call objects separated by prose, with
/// nested arguments and strings that contain braces, escapes and
/// multi-byte characters.
pub fn response(rng: &mut impl RngCore) -> String {
    let mut out = String::new();
    for i in 0..rng.random_range(1..6) {
        out.push_str(PROSE.choose(rng).unwrap());
        let call = json!({ "tool": format!("tool_{i}"), "arguments": Value::Object(object(rng, 3)) });
        let text = if rng.random_bool(0.5) { serde_json::to_string(&call) } else { serde_json::to_string_pretty(&call) };
        out.push_str(&text.unwrap());
    }
    out.push_str(PROSE.choose(rng).unwrap());
    out
}

/// Random cut points, including empty chunks and cuts inside UTF-8
/// sequences.
pub fn chunking<'a>(rng: &mut impl RngCore, bytes: &'a [u8]) -> Vec<&'a [u8]> {
    let mut cuts: Vec<usize> = (0..rng.random_range(0..bytes.len().min(40) + 1)).map(|_| rng.random_range(0..=bytes.len())).collect();
    cuts.push(0);
    cuts.push(bytes.len());
    cuts.sort_unstable();
    cuts.windows(2).map(|w| &bytes[w[0]..w[1]]).collect()
}

/// Independent equality under the exact-match rule.
fn same(a: &FacetValue, b: &FacetValue) -> bool {
    let fold = |s: &str| s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>();
    match (a, b) {
        (FacetValue::Title(x), FacetValue::Title(y)) | (FacetValue::Company(x), FacetValue::Company(y)) => fold(x) == fold(y),
        (FacetValue::GeoLocation(x), FacetValue::GeoLocation(y)) => x.place_id == y.place_id,
        _ => a == b,
    }
}

/// Largest number of one-to-one matches, by trying every assignment.
fn max_matching(pred: &[&FacetValue], exp: &[&FacetValue]) -> usize {
    fn go(pred: &[&FacetValue], exp: &[&FacetValue], used: &mut Vec<bool>) -> usize {
        let Some((p, rest)) = pred.split_first() else { return 0 };
        let mut best = go(rest, exp, used);
        for j in 0..exp.len() {
            if !used[j] && same(p, exp[j]) {
                used[j] = true;
                best = best.max(1 + go(rest, exp, used));
                used[j] = false;
            }
        }
        best
    }
    go(pred, exp, &mut vec![false; exp.len()])
}

pub fn oracle(pairs: &[(LabeledExample, Prediction)]) -> BTreeMap<&'static str, Counts> {
    let mut out: BTreeMap<&'static str, Counts> = BTreeMap::new();
    for (ex, pred) in pairs {
        let mut facets: Vec<_> = pred.tags.iter().chain(&ex.expected.tags).map(FacetTag::facet).collect();
        facets.sort();
        facets.dedup();
        for f in facets {
            let p: Vec<&FacetValue> = pred.tags.iter().filter(|t| t.facet() == f).map(|t| &t.value).collect();
            let e: Vec<&FacetValue> = ex.expected.tags.iter().filter(|t| t.facet() == f).map(|t| &t.value).collect();
            let tp = max_matching(&p, &e);
            out.entry(f.tool_name()).or_default().add(Counts::new(
                tp as u64,
                (p.len() - tp) as u64,
                (e.len() - tp) as u64,
            ));
        }
    }
    out
}
