//! Concept DAG: parsing, validation, topological ordering.
//!
//! Nodes `0..K` are concepts in declaration order; node `K` is the sink `Y`
//! holding the black-box score. Edge indices are stable and are used to
//! address per-edge weights throughout the crate.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SINK: &str = "Y";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub parent: usize,
    pub child: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Nodes forming a directed cycle.
    Cycle(Vec<String>),
    /// An edge leaving the sink.
    SinkHasChildren { child: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle(nodes) => write!(f, "cycle through [{}]", nodes.join(", ")),
            Violation::SinkHasChildren { child } => {
                write!(f, "sink `{SINK}` must not have children (edge {SINK} -> {child})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("line {line}: expected `A -> B`, found `{content}`")]
    Malformed { line: usize, content: String },
    #[error("line {line}: unknown node `{name}`")]
    UnknownNode { line: usize, name: String },
    #[error("line {line}: duplicate edge {parent} -> {child}")]
    DuplicateEdge {
        line: usize,
        parent: String,
        child: String,
    },
    #[error("concept `{0}` declared twice")]
    DuplicateConcept(String),
    #[error("concept name `{0}` is reserved or empty")]
    ReservedName(String),
    #[error("at least one concept is required")]
    NoConcepts,
    #[error("invalid DAG: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DagRecord", into = "DagRecord")]
pub struct DagSpec {
    concepts: Vec<String>,
    edges: Vec<Edge>,
    /// Incoming edge indices per node (`K + 1` entries).
    incoming: Vec<Vec<usize>>,
    order: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct DagRecord {
    concepts: Vec<String>,
    edges: Vec<(String, String)>,
}

impl From<DagSpec> for DagRecord {
    fn from(d: DagSpec) -> Self {
        let edges = d
            .edges
            .iter()
            .map(|e| (d.node_name(e.parent).to_owned(), d.node_name(e.child).to_owned()))
            .collect();
        DagRecord {
            concepts: d.concepts,
            edges,
        }
    }
}

impl TryFrom<DagRecord> for DagSpec {
    type Error = DagError;

    fn try_from(r: DagRecord) -> Result<Self, DagError> {
        let dag = DagSpec::from_named_edges(&r.concepts, &r.edges)?;
        dag.validate().map_err(DagError::Invalid)?;
        Ok(dag)
    }
}

fn check_concepts(concepts: &[String]) -> Result<(), DagError> {
    if concepts.is_empty() {
        return Err(DagError::NoConcepts);
    }
    for (i, c) in concepts.iter().enumerate() {
        if c.is_empty() || c == SINK || c.contains("->") || c.trim() != c {
            return Err(DagError::ReservedName(c.clone()));
        }
        if concepts[..i].contains(c) {
            return Err(DagError::DuplicateConcept(c.clone()));
        }
    }
    Ok(())
}

impl DagSpec {
    fn assemble(concepts: Vec<String>, edges: Vec<Edge>) -> Self {
        let k = concepts.len();
        let mut incoming = vec![Vec::new(); k + 1];
        for (i, e) in edges.iter().enumerate() {
            incoming[e.child].push(i);
        }
        let mut dag = DagSpec {
            concepts,
            edges,
            incoming,
            order: None,
        };
        dag.order = dag.kahn();
        for (i, name) in dag.concepts.iter().enumerate() {
            if dag.incoming[i].is_empty() && !dag.edges.iter().any(|e| e.parent == i) {
                log::warn!("concept `{name}` is isolated");
            }
        }
        dag
    }

    /// Builds a DAG from `(parent, child)` name pairs.
    pub fn from_named_edges<S: AsRef<str>>(
        concepts: &[String],
        edges: &[(S, S)],
    ) -> Result<Self, DagError> {
        check_concepts(concepts)?;
        let lookup = |name: &str, line: usize| -> Result<usize, DagError> {
            if name == SINK {
                return Ok(concepts.len());
            }
            concepts
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| DagError::UnknownNode {
                    line,
                    name: name.to_owned(),
                })
        };
        let mut out: Vec<Edge> = Vec::with_capacity(edges.len());
        for (i, (p, c)) in edges.iter().enumerate() {
            let edge = Edge {
                parent: lookup(p.as_ref(), i + 1)?,
                child: lookup(c.as_ref(), i + 1)?,
            };
            if out.contains(&edge) {
                return Err(DagError::DuplicateEdge {
                    line: i + 1,
                    parent: p.as_ref().to_owned(),
                    child: c.as_ref().to_owned(),
                });
            }
            out.push(edge);
        }
        Ok(Self::assemble(concepts.to_vec(), out))
    }

    /// Parses an edge-list document: one `A -> B` per line, blank lines and
    /// `#` comments ignored. Cycles are reported by [`DagSpec::validate`],
    /// not here.
    pub fn parse(text: &str, concepts: &[String]) -> Result<Self, DagError> {
        check_concepts(concepts)?;
        let k = concepts.len();
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split("->").map(str::trim).collect();
            if parts.len() != 2 || parts[0].is_empty() || parts[1].is_empty() {
                return Err(DagError::Malformed {
                    line: line_no,
                    content: raw.to_owned(),
                });
            }
            let lookup = |name: &str| -> Result<usize, DagError> {
                if name == SINK {
                    return Ok(k);
                }
                concepts
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| DagError::UnknownNode {
                        line: line_no,
                        name: name.to_owned(),
                    })
            };
            let edge = Edge {
                parent: lookup(parts[0])?,
                child: lookup(parts[1])?,
            };
            if edges.contains(&edge) {
                return Err(DagError::DuplicateEdge {
                    line: line_no,
                    parent: parts[0].to_owned(),
                    child: parts[1].to_owned(),
                });
            }
            edges.push(edge);
        }
        Ok(Self::assemble(concepts.to_vec(), edges))
    }

    /// Every concept is a direct parent of `Y`; no concept-concept edges.
    pub fn trivial(concepts: &[String]) -> Result<Self, DagError> {
        check_concepts(concepts)?;
        let k = concepts.len();
        let edges = (0..k).map(|i| Edge { parent: i, child: k }).collect();
        Ok(Self::assemble(concepts.to_vec(), edges))
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    /// Node id of the sink.
    pub fn sink(&self) -> usize {
        self.concepts.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_name(&self, node: usize) -> &str {
        if node == self.sink() {
            SINK
        } else {
            &self.concepts[node]
        }
    }

    pub fn concept_index(&self, name: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c == name)
    }

    /// Indices of edges entering `node`.
    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }

    /// Parent node ids of `node` (the `PA` set).
    pub fn parents(&self, node: usize) -> Vec<usize> {
        self.incoming[node].iter().map(|&e| self.edges[e].parent).collect()
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|e| e.parent == node)
            .map(|e| e.child)
            .collect()
    }

    /// Checks acyclicity and that `Y` is a sink. Returns every violation.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut violations = Vec::new();
        for e in &self.edges {
            if e.parent == self.sink() {
                violations.push(Violation::SinkHasChildren {
                    child: self.node_name(e.child).to_owned(),
                });
            }
        }
        for comp in self.cyclic_components() {
            violations.push(Violation::Cycle(
                comp.iter().map(|&n| self.node_name(n).to_owned()).collect(),
            ));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Parents before children, ties broken by declaration order, `Y` last.
    pub fn topological_order(&self) -> Result<&[usize], DagError> {
        self.order.as_deref().ok_or_else(|| {
            DagError::Invalid(self.validate().err().unwrap_or_default())
        })
    }

    /// Concepts only, in topological order.
    pub fn concept_order(&self) -> Result<Vec<usize>, DagError> {
        Ok(self
            .topological_order()?
            .iter()
            .copied()
            .filter(|&n| n != self.sink())
            .collect())
    }

    /// Nodes reachable from `node` along directed edges, excluding `node`.
    pub fn descendants(&self, node: usize) -> Vec<bool> {
        let mut seen = vec![false; self.sink() + 1];
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            for e in &self.edges {
                if e.parent == n && !seen[e.child] {
                    seen[e.child] = true;
                    stack.push(e.child);
                }
            }
        }
        seen
    }

    /// Edge list in the parseable text format.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(self.node_name(e.parent));
            out.push_str(" -> ");
            out.push_str(self.node_name(e.child));
            out.push('\n');
        }
        out
    }

    fn kahn(&self) -> Option<Vec<usize>> {
        let n = self.sink() + 1;
        let mut indeg: Vec<usize> = self.incoming.iter().map(Vec::len).collect();
        let mut done = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for _ in 0..n {
            let next = (0..n).find(|&v| !done[v] && indeg[v] == 0)?;
            done[next] = true;
            order.push(next);
            for e in &self.edges {
                if e.parent == next {
                    indeg[e.child] -= 1;
                }
            }
        }
        Some(order)
    }

    /// Strongly connected components that contain a cycle, each sorted by
    /// node id.
    fn cyclic_components(&self) -> Vec<Vec<usize>> {
        let n = self.sink() + 1;
        let reach = |from: usize| -> Vec<bool> {
            let mut seen = vec![false; n];
            let mut stack = vec![from];
            while let Some(v) = stack.pop() {
                for e in &self.edges {
                    if e.parent == v && !seen[e.child] {
                        seen[e.child] = true;
                        stack.push(e.child);
                    }
                }
            }
            seen
        };
        let reachable: Vec<Vec<bool>> = (0..n).map(reach).collect();
        let mut assigned = vec![false; n];
        let mut comps = Vec::new();
        for v in 0..n {
            if assigned[v] || !reachable[v][v] {
                continue;
            }
            let comp: Vec<usize> = (0..n)
                .filter(|&w| reachable[v][w] && reachable[w][v])
                .collect();
            for &w in &comp {
                assigned[w] = true;
            }
            comps.push(comp);
        }
        comps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn ordered_names(d: &DagSpec) -> Vec<&str> {
        d.topological_order()
            .unwrap()
            .iter()
            .map(|&n| d.node_name(n))
            .collect()
    }

    #[test]
    fn parses_simple_document() {
        let d = DagSpec::parse("A -> B\nA -> Y\nB -> Y", &names(&["A", "B"])).unwrap();
        assert_eq!(d.n_edges(), 3);
        assert_eq!(d.sink() + 1, 3);
        assert_eq!(d.parents(d.sink()), vec![0, 1]);
        assert_eq!(d.parents(1), vec![0]);
        assert!(d.validate().is_ok());
    }

    #[test]
    fn comments_and_blank_lines() {
        let d = DagSpec::parse("# header\n\nA -> Y\n  # indented\n", &names(&["A", "B"])).unwrap();
        assert_eq!(d.n_edges(), 1);
    }

    #[test]
    fn malformed_line_names_line() {
        let err = DagSpec::parse("A => B", &names(&["A", "B"])).unwrap_err();
        assert!(matches!(err, DagError::Malformed { line: 1, .. }));
    }

    #[test]
    fn duplicate_edge_is_error() {
        let err = DagSpec::parse("A -> Y\nA -> Y", &names(&["A"])).unwrap_err();
        assert!(matches!(err, DagError::DuplicateEdge { line: 2, .. }));
    }

    #[test]
    fn unknown_node() {
        let err = DagSpec::parse("A -> Z", &names(&["A"])).unwrap_err();
        assert!(matches!(err, DagError::UnknownNode { line: 1, .. }));
    }

    #[test]
    fn cycle_violation_lists_members() {
        let d = DagSpec::parse("A -> B\nB -> A", &names(&["A", "B"])).unwrap();
        let v = d.validate().unwrap_err();
        assert_eq!(v, vec![Violation::Cycle(names(&["A", "B"]))]);
        assert!(d.topological_order().is_err());
    }

    #[test]
    fn sink_with_child_is_violation() {
        let d = DagSpec::parse("Y -> A", &names(&["A"])).unwrap();
        let v = d.validate().unwrap_err();
        assert_eq!(
            v,
            vec![Violation::SinkHasChildren {
                child: "A".to_owned()
            }]
        );
    }

    #[test]
    fn orders() {
        let chain = DagSpec::parse("A -> B\nB -> Y", &names(&["A", "B"])).unwrap();
        assert_eq!(ordered_names(&chain), ["A", "B", "Y"]);
        let diamond = DagSpec::parse(
            "A -> B\nA -> C\nB -> Y\nC -> Y",
            &names(&["A", "B", "C"]),
        )
        .unwrap();
        assert_eq!(ordered_names(&diamond), ["A", "B", "C", "Y"]);
        let trivial = DagSpec::trivial(&names(&["P", "Q"])).unwrap();
        assert_eq!(ordered_names(&trivial), ["P", "Q", "Y"]);
        // declaration order is overridden only by precedence
        let rev = DagSpec::parse("B -> A\nA -> Y", &names(&["A", "B"])).unwrap();
        assert_eq!(ordered_names(&rev), ["B", "A", "Y"]);
    }

    #[test]
    fn trivial_dag() {
        let d = DagSpec::trivial(&names(&["A", "B"])).unwrap();
        assert_eq!(d.edges(), &[Edge { parent: 0, child: 2 }, Edge { parent: 1, child: 2 }]);
        assert_eq!(DagSpec::trivial(&names(&["A"])).unwrap().n_edges(), 1);
        assert_eq!(DagSpec::trivial(&[]).unwrap_err(), DagError::NoConcepts);
        assert!(d.validate().is_ok());
    }

    #[test]
    fn isolated_concept_allowed() {
        let d = DagSpec::parse("A -> Y", &names(&["A", "B"])).unwrap();
        assert!(d.validate().is_ok());
        assert_eq!(ordered_names(&d), ["A", "B", "Y"]);
    }

    #[test]
    fn serde_roundtrip_rebuilds_caches() {
        let d = DagSpec::parse("A -> B\nB -> Y\nA -> Y", &names(&["A", "B"])).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        let back: DagSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        assert_eq!(DagSpec::parse(&d.to_edge_list(), d.concepts()).unwrap(), d);
    }
}
