//! Per-instance explanation documents and their JSON and DOT renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::counterfactual::{attribute, ConceptAttribution, InterventionTable, PropagationMode};
use crate::dag::DagSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ExplainerModel;
use crate::scm::InstanceScm;

/// Significant digits of every number in the JSON export.
pub const JSON_DIGITS: usize = 12;

/// Pen width per unit of `|m|` in the DOT export.
pub const PEN_SCALE: f64 = 1.5;
/// Thinnest pen, so zero-weight edges stay visible.
pub const MIN_PEN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Concept,
    Sink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSign {
    Positive,
    Negative,
    Zero,
}

impl EdgeSign {
    pub fn of(partial: f64) -> Self {
        if partial > 0.0 {
            EdgeSign::Positive
        } else if partial < 0.0 {
            EdgeSign::Negative
        } else {
            EdgeSign::Zero
        }
    }

    fn color(self) -> &'static str {
        match self {
            EdgeSign::Positive => "blue",
            EdgeSign::Negative => "red",
            EdgeSign::Zero => "gray",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationNode {
    pub name: String,
    pub value: f64,
    #[serde(rename = "type")]
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationEdge {
    pub parent: String,
    pub child: String,
    /// Realised weight `W_jk` (or `w_jk`).
    pub weight: f64,
    /// Partial assignment `m_jk = logit(ĉ_j) · weight`.
    pub partial: f64,
    /// Sign of `partial`.
    pub sign: EdgeSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationDocument {
    pub instance: usize,
    pub mode: PropagationMode,
    pub factual_score: f64,
    /// Concepts in index order, then the sink.
    pub nodes: Vec<ExplanationNode>,
    /// In DAG edge order.
    pub edges: Vec<ExplanationEdge>,
    pub attributions: Vec<ConceptAttribution>,
}

impl ExplanationDocument {
    /// Evaluates `inst` and attributes every concept under `mode`.
    pub fn build(
        dag: &DagSpec,
        table: &InterventionTable,
        inst: &InstanceScm,
        instance: usize,
        mode: PropagationMode,
    ) -> Result<Self> {
        let f = inst.evaluate(dag, &[])?;
        let attr = attribute(dag, table, inst, mode)?;
        let mut nodes: Vec<ExplanationNode> = f
            .concepts
            .iter()
            .enumerate()
            .map(|(k, &v)| ExplanationNode {
                name: dag.node_name(k).to_owned(),
                value: v,
                kind: NodeKind::Concept,
            })
            .collect();
        nodes.push(ExplanationNode {
            name: dag.node_name(dag.sink()).to_owned(),
            value: f.score,
            kind: NodeKind::Sink,
        });
        let edges = dag
            .edges()
            .iter()
            .enumerate()
            .map(|(e, edge)| ExplanationEdge {
                parent: dag.node_name(edge.parent).to_owned(),
                child: dag.node_name(edge.child).to_owned(),
                weight: f.edge_weights[e],
                partial: f.partials[e],
                sign: EdgeSign::of(f.partials[e]),
            })
            .collect();
        Ok(Self {
            instance,
            mode,
            factual_score: f.score,
            nodes,
            edges,
            attributions: attr.concepts,
        })
    }
}

/// One document per requested row of `data`.
pub fn explain_rows(
    model: &ExplainerModel,
    data: &Dataset,
    rows: &[usize],
    mode: PropagationMode,
) -> Result<Vec<ExplanationDocument>> {
    let table = model.intervention_table()?;
    model
        .abduct_rows(data, rows)?
        .iter()
        .zip(rows)
        .map(|(inst, &row)| ExplanationDocument::build(&model.dag, table, inst, row, mode))
        .collect()
}

fn round_numbers(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64");
            let r: f64 = format!("{:.*e}", JSON_DIGITS - 1, x).parse().expect("formatted float");
            *v = serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

fn to_rounded_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("document serialises");
    round_numbers(&mut v);
    let mut text = serde_json::to_string_pretty(&v).expect("value serialises");
    text.push('\n');
    text
}

pub fn export_explanation_json(doc: &ExplanationDocument) -> String {
    to_rounded_json(doc)
}

/// A JSON array of documents.
pub fn export_explanations_json(docs: &[ExplanationDocument]) -> String {
    to_rounded_json(&docs)
}

pub fn parse_explanation_json(text: &str) -> Result<ExplanationDocument> {
    serde_json::from_str(text).map_err(|e| Error::Data(format!("explanation JSON: {e}")))
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn gray_fill(value: f64) -> (String, &'static str) {
    let level = (255.0 * (1.0 - value.clamp(0.0, 1.0))).round() as u8;
    let font = if value > 0.5 { "white" } else { "black" };
    (format!("#{level:02x}{level:02x}{level:02x}"), font)
}

pub fn export_dot(doc: &ExplanationDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(&format!("explanation_{}", doc.instance)));
    out.push_str("  rankdir=LR;\n  node [style=filled, shape=ellipse];\n");
    for n in &doc.nodes {
        let (fill, font) = gray_fill(n.value);
        let shape = match n.kind {
            NodeKind::Concept => "ellipse",
            NodeKind::Sink => "doublecircle",
        };
        let _ = writeln!(
            out,
            "  {} [label={}, shape={shape}, fillcolor=\"{fill}\", fontcolor={font}];",
            quote(&n.name),
            quote(&format!("{}\\n{:.3}", n.name, n.value)),
        );
    }
    for e in &doc.edges {
        let pen = (PEN_SCALE * e.partial.abs()).max(MIN_PEN);
        let _ = writeln!(
            out,
            "  {} -> {} [color={}, penwidth={pen:.4}, label=\"{:.3}\"];",
            quote(&e.parent),
            quote(&e.child),
            e.sign.color(),
            e.partial,
        );
    }
    out.push_str("}\n");
    out
}
