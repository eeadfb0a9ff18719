//! Browser demo: three small views into the model's building blocks.
//!
//! The `*_demo` functions are plain Rust and return JSON values; the
//! `wasm_*` wrappers expose them to JavaScript as JSON strings.

use std::collections::HashMap;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use cagr::attention::{group_forward, AttentionScale};
use cagr::centrality::{with_views, CentralityOptions, Measure};
use cagr::graph::{BipartiteGraph, DuplicatePolicy, Edge, SocialGraph};
use cagr::params::{ModelState, Shape};
use cagr::sampling::{classic_noise, group_aware_noise};

type DemoResult = Result<Value, String>;

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty())
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn number_rows(text: &str) -> Result<Vec<Vec<f64>>, String> {
    content_lines(text)
        .map(|(n, l)| {
            tokens(l).map(|t| t.parse::<f64>().map_err(|_| format!("line {n}: `{t}` is not a number"))).collect()
        })
        .collect()
}

/// Centrality scores and ranked neighbor lists for a friendship list, one
/// `a b` pair per line.
pub fn centrality_demo(edges: &str, top_n: usize) -> DemoResult {
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    let mut intern = |name: &str| {
        *ids.entry(name.to_string()).or_insert_with(|| {
            names.push(name.to_string());
            names.len() as u32 - 1
        })
    };
    let mut pairs = Vec::new();
    for (n, line) in content_lines(edges) {
        let t: Vec<&str> = tokens(line).collect();
        if t.len() != 2 {
            return Err(format!("line {n}: expected two user names"));
        }
        pairs.push((intern(t[0]), intern(t[1])));
    }
    if names.is_empty() {
        return Err("no edges".into());
    }
    let (plain, _) = SocialGraph::from_pairs(names.len(), &pairs).map_err(|e| e.to_string())?;
    let g = with_views(&plain, &Measure::ALL, &CentralityOptions::default()).map_err(|e| e.to_string())?;
    let mut measures = serde_json::Map::new();
    for view in g.views() {
        let ranked: serde_json::Map<String, Value> = view
            .ranked
            .iter()
            .enumerate()
            .map(|(u, list)| {
                let top: Vec<&str> = list.iter().take(top_n).map(|&v| names[v as usize].as_str()).collect();
                (names[u].clone(), json!(top))
            })
            .collect();
        measures.insert(view.measure.name().into(), json!({ "scores": view.scores, "ranked": ranked }));
    }
    Ok(json!({ "users": names, "measures": measures }))
}

/// Classic versus group-aware negative-sampling distributions. `matrix` has
/// one row of item weights per user; `members` lists row indices.
pub fn noise_demo(matrix: &str, members: &str, gamma: f64) -> DemoResult {
    let rows = number_rows(matrix)?;
    let items = rows.first().map_or(0, Vec::len);
    if items == 0 || rows.iter().any(|r| r.len() != items) {
        return Err("every row needs the same, nonzero number of item weights".into());
    }
    let members: Vec<u32> = tokens(members)
        .map(|t| match t.parse::<usize>() {
            Ok(i) if i < rows.len() => Ok(i as u32),
            _ => Err(format!("member `{t}` is not a row index below {}", rows.len())),
        })
        .collect::<Result<_, _>>()?;
    let mut edges = Vec::new();
    for (u, row) in rows.iter().enumerate() {
        for (v, &w) in row.iter().enumerate() {
            if w < 0.0 {
                return Err(format!("negative weight at row {u}, item {v}"));
            }
            if w > 0.0 {
                edges.push(Edge { left: u as u32, item: v as u32, weight: w, timestamp: None });
            }
        }
    }
    let g = BipartiteGraph::new(rows.len(), items, edges, DuplicatePolicy::Sum).map_err(|e| e.to_string())?;
    let classic = classic_noise(&g).map_err(|e| e.to_string())?;
    let aware = group_aware_noise(&g, &members, gamma).map_err(|e| e.to_string())?;
    Ok(json!({
        "classic": classic.probabilities(),
        "group_aware": aware.probabilities(),
    }))
}

/// Attention of a freshly initialized aggregator over the given member
/// vectors, one per line.
pub fn attention_demo(members: &str, heads: usize, seed: u64, per_head_scale: bool) -> DemoResult {
    let x = number_rows(members)?;
    let d = x.first().map_or(0, Vec::len);
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err("every member needs the same, nonzero number of coordinates".into());
    }
    let shape = Shape { d, heads, views: 0, users: 1, items: 1 };
    let state = ModelState::<f64>::init(shape, seed).map_err(|e| e.to_string())?;
    let scale = if per_head_scale { AttentionScale::PerHead } else { AttentionScale::Full };
    let flat: Vec<f64> = x.concat();
    let fwd = group_forward(&state, &flat, scale).map_err(|e| e.to_string())?;
    let attention: Vec<Vec<Vec<f64>>> =
        (0..heads).map(|h| (0..fwd.size).map(|i| fwd.attention_row(h, i).to_vec()).collect()).collect();
    Ok(json!({
        "attention": attention,
        "lambda": fwd.lambda,
        "group": fwd.group,
        "scale": fwd.scale,
    }))
}

fn to_js(r: DemoResult) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = centralityDemo)]
pub fn wasm_centrality(edges: &str, top_n: usize) -> Result<String, JsValue> {
    to_js(centrality_demo(edges, top_n))
}

#[wasm_bindgen(js_name = noiseDemo)]
pub fn wasm_noise(matrix: &str, members: &str, gamma: f64) -> Result<String, JsValue> {
    to_js(noise_demo(matrix, members, gamma))
}

#[wasm_bindgen(js_name = attentionDemo)]
pub fn wasm_attention(members: &str, heads: usize, seed: u64, per_head_scale: bool) -> Result<String, JsValue> {
    to_js(attention_demo(members, heads, seed, per_head_scale))
}
