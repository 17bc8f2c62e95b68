//! Reading and writing flowcharts in the Mermaid `flowchart TD` dialect.
//!
//! Only the subset needed for task-oriented flowcharts is understood:
//! rectangle `["..."]` and diamond `{"..."}` nodes, plain `-->` edges and
//! labeled `-- condition -->` edges. Node types come from label prefixes
//! (`Start:`, `Action/Decision:`, `Output:`, `Reflection:`, `End:`), with the
//! shape separating action (rectangle) from decision (diamond).
//!
//! [`serialize`] emits a canonical form: statements sorted by
//! `(source, target, condition)`, each node declared with its label the first
//! time it appears, four-space indentation, LF line endings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::flowchart::{FlowEdge, FlowNode, Flowchart, FlowchartError, NodeType, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MermaidError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: unsupported direction `{direction}` (only TD)")]
    UnsupportedDirection { line: usize, direction: String },
    #[error("line {line}, column {column}: unknown node shape starting with `{shape}`")]
    UnknownShape {
        line: usize,
        column: usize,
        shape: char,
    },
    #[error("invalid flowchart: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Flowchart(#[from] FlowchartError),
    #[error("cannot serialize {what}: {reason}")]
    Unserializable { what: String, reason: String },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rectangle,
    Diamond,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRef {
    pub id: String,
    /// Shape and raw label text, when the reference declares the node.
    pub declaration: Option<(Shape, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Node { line: usize, node: NodeRef },
    Edge {
        line: usize,
        from: NodeRef,
        to: NodeRef,
        condition: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MermaidDoc {
    pub direction: String,
    pub statements: Vec<Statement>,
}

struct Cursor<'a> {
    chars: &'a [char],
    pos: usize,
    line: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn starts_with(&self, s: &str) -> bool {
        let mut i = self.pos;
        for c in s.chars() {
            if self.chars.get(i) != Some(&c) {
                return false;
            }
            i += 1;
        }
        true
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c == ' ' || c == '\t') {
            self.pos += 1;
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn error(&self, message: impl Into<String>) -> MermaidError {
        MermaidError::Syntax {
            line: self.line,
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn node_ref(&mut self) -> Result<NodeRef, MermaidError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error("expected node id"));
        }
        let id: String = self.chars[start..self.pos].iter().collect();
        let declaration = match self.peek() {
            Some('[') => Some((Shape::Rectangle, self.label(']')?)),
            Some('{') => Some((Shape::Diamond, self.label('}')?)),
            Some(c @ ('(' | '>' | '/' | '\\')) => {
                return Err(MermaidError::UnknownShape {
                    line: self.line,
                    column: self.pos + 1,
                    shape: c,
                })
            }
            _ => None,
        };
        Ok(NodeRef { id, declaration })
    }

    /// Parses `["text"]`, `{"text"}` or the unquoted forms; cursor sits on the
    /// opening bracket.
    fn label(&mut self, close: char) -> Result<String, MermaidError> {
        let open_col = self.pos;
        self.pos += 1;
        if matches!(self.peek(), Some('[' | '{' | '(' | '/' | '\\')) {
            return Err(MermaidError::UnknownShape {
                line: self.line,
                column: open_col + 1,
                shape: self.chars[open_col],
            });
        }
        let text: String = if self.peek() == Some('"') {
            self.pos += 1;
            let start = self.pos;
            while let Some(c) = self.peek() {
                if c == '"' {
                    break;
                }
                self.pos += 1;
            }
            if self.at_end() {
                return Err(self.error("unterminated quoted label"));
            }
            let text = self.chars[start..self.pos].iter().collect();
            self.pos += 1;
            if self.peek() != Some(close) {
                return Err(self.error(format!(
                    "expected `{close}` after quoted label (quotes are not allowed inside labels)"
                )));
            }
            text
        } else {
            let start = self.pos;
            while let Some(c) = self.peek() {
                if c == close || c == '"' {
                    break;
                }
                self.pos += 1;
            }
            if self.peek() != Some(close) {
                return Err(self.error(format!("expected `{close}` to close label")));
            }
            self.chars[start..self.pos].iter().collect()
        };
        self.pos += 1;
        Ok(text)
    }

    /// Parses `-->` or `-- condition -->`.
    fn arrow(&mut self) -> Result<Option<String>, MermaidError> {
        if self.starts_with("-->") {
            self.pos += 3;
            return Ok(None);
        }
        if !self.starts_with("--") {
            return Err(self.error("expected `-->` or `-- label -->`"));
        }
        self.pos += 2;
        if self.peek() == Some('-') {
            return Err(self.error("unsupported link style"));
        }
        let start = self.pos;
        while !self.at_end() && !self.starts_with("-->") {
            self.pos += 1;
        }
        if self.at_end() {
            return Err(self.error("edge label is missing its closing `-->`"));
        }
        let condition: String = self.chars[start..self.pos].iter().collect();
        let condition = condition.trim().to_string();
        if condition.is_empty() {
            return Err(self.error("empty edge label"));
        }
        if condition.contains('"') {
            return Err(self.error("double quote in edge label"));
        }
        self.pos += 3;
        Ok(Some(condition))
    }
}

/// Parses Mermaid text into its statement list without building a chart.
pub fn parse_document(text: &str) -> Result<MermaidDoc, MermaidError> {
    let mut direction = None;
    let mut statements = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("%%") {
            continue;
        }
        if direction.is_none() {
            let mut words = trimmed.split_whitespace();
            if words.next() != Some("flowchart") {
                return Err(MermaidError::Syntax {
                    line: line_no,
                    column: 1,
                    message: "expected `flowchart TD` header".into(),
                });
            }
            let dir = words.next().ok_or_else(|| MermaidError::Syntax {
                line: line_no,
                column: trimmed.chars().count() + 1,
                message: "missing direction".into(),
            })?;
            if let Some(extra) = words.next() {
                return Err(MermaidError::Syntax {
                    line: line_no,
                    column: 1,
                    message: format!("unexpected `{extra}` after direction"),
                });
            }
            if dir != "TD" {
                return Err(MermaidError::UnsupportedDirection {
                    line: line_no,
                    direction: dir.to_string(),
                });
            }
            direction = Some(dir.to_string());
            continue;
        }

        let chars: Vec<char> = line.chars().collect();
        let mut cur = Cursor {
            chars: &chars,
            pos: 0,
            line: line_no,
        };
        cur.skip_ws();
        let mut left = cur.node_ref()?;
        cur.skip_ws();
        let mut any_edge = false;
        while !cur.at_end() && cur.peek() != Some(';') {
            let condition = cur.arrow()?;
            cur.skip_ws();
            let right = cur.node_ref()?;
            cur.skip_ws();
            statements.push(Statement::Edge {
                line: line_no,
                from: left,
                to: right.clone(),
                condition,
            });
            any_edge = true;
            left = NodeRef {
                id: right.id,
                declaration: None,
            };
        }
        if cur.peek() == Some(';') {
            cur.pos += 1;
            cur.skip_ws();
            if !cur.at_end() {
                return Err(cur.error("unexpected text after `;`"));
            }
        }
        if !any_edge {
            statements.push(Statement::Node {
                line: line_no,
                node: left,
            });
        }
    }
    let direction = direction.ok_or(MermaidError::Syntax {
        line: 1,
        column: 1,
        message: "missing `flowchart TD` header".into(),
    })?;
    Ok(MermaidDoc {
        direction,
        statements,
    })
}

const PREFIXES: [(&str, Option<NodeType>); 7] = [
    ("action/decision", None),
    ("start", Some(NodeType::Start)),
    ("action", Some(NodeType::Action)),
    ("decision", Some(NodeType::Decision)),
    ("output", Some(NodeType::Output)),
    ("reflection", Some(NodeType::Reflection)),
    ("end", Some(NodeType::End)),
];

/// Splits a raw label into node type and bare text.
pub fn infer_type(shape: Shape, raw: &str) -> (NodeType, String) {
    let trimmed = raw.trim();
    if let Some((head, rest)) = trimmed.split_once(':') {
        let head = head.trim().to_ascii_lowercase();
        for (prefix, explicit) in PREFIXES {
            if head == prefix {
                let node_type = explicit.unwrap_or(match shape {
                    Shape::Diamond => NodeType::Decision,
                    Shape::Rectangle => NodeType::Action,
                });
                return (node_type, rest.trim().to_string());
            }
        }
    }
    let node_type = match shape {
        Shape::Diamond => NodeType::Decision,
        Shape::Rectangle => NodeType::Action,
    };
    (node_type, trimmed.to_string())
}

impl MermaidDoc {
    /// Builds the chart without running structural validation.
    pub fn to_flowchart(&self, name: &str) -> Result<Flowchart, MermaidError> {
        let mut declared: BTreeMap<&str, (Shape, &str)> = BTreeMap::new();
        let mut order: Vec<&str> = Vec::new();
        let mut referenced: BTreeSet<&str> = BTreeSet::new();
        let mut first_line: BTreeMap<&str, usize> = BTreeMap::new();
        let mut edges = Vec::new();
        for s in &self.statements {
            let (line, refs): (usize, Vec<&NodeRef>) = match s {
                Statement::Node { line, node } => (*line, vec![node]),
                Statement::Edge {
                    line,
                    from,
                    to,
                    condition,
                } => {
                    edges.push(FlowEdge {
                        from: from.id.clone(),
                        to: to.id.clone(),
                        condition: condition.clone(),
                    });
                    (*line, vec![from, to])
                }
            };
            for r in refs {
                if referenced.insert(r.id.as_str()) {
                    order.push(r.id.as_str());
                    first_line.insert(r.id.as_str(), line);
                }
                if let Some((shape, label)) = &r.declaration {
                    match declared.get(r.id.as_str()) {
                        Some(&(s0, l0)) if s0 != *shape || l0 != label => {
                            return Err(MermaidError::Syntax {
                                line,
                                column: 1,
                                message: format!("conflicting declarations for node `{}`", r.id),
                            })
                        }
                        Some(_) => {}
                        None => {
                            declared.insert(r.id.as_str(), (*shape, label.as_str()));
                        }
                    }
                }
            }
        }
        let mut chart = Flowchart::new(name);
        for id in order {
            let Some(&(shape, raw)) = declared.get(id) else {
                return Err(MermaidError::Syntax {
                    line: first_line[id],
                    column: 1,
                    message: format!("node `{id}` is never declared with a label"),
                });
            };
            let (node_type, label) = infer_type(shape, raw);
            chart.add_node(FlowNode::new(id, node_type, label))?;
        }
        for e in edges {
            chart.add_edge(e)?;
        }
        Ok(chart)
    }
}

/// Parses Mermaid text into a structurally valid flowchart.
pub fn parse(text: &str) -> Result<Flowchart, MermaidError> {
    let chart = parse_unvalidated(text)?;
    let violations = chart.validate();
    if violations.is_empty() {
        Ok(chart)
    } else {
        Err(MermaidError::Invalid(violations))
    }
}

/// Parses Mermaid text, skipping the structural checks.
pub fn parse_unvalidated(text: &str) -> Result<Flowchart, MermaidError> {
    parse_document(text)?.to_flowchart("flowchart")
}

fn check_text(what: &str, text: &str) -> Result<(), MermaidError> {
    let bad = |reason: &str| {
        Err(MermaidError::Unserializable {
            what: what.to_string(),
            reason: reason.to_string(),
        })
    };
    if text.contains('"') {
        return bad("contains a double quote");
    }
    if text.contains('\n') || text.contains('\r') {
        return bad("contains a line break");
    }
    if text.trim() != text || text.is_empty() {
        return bad("has surrounding whitespace or is empty");
    }
    Ok(())
}

fn declaration(node: &FlowNode) -> String {
    let text = format!("{}: {}", node.node_type.label_prefix(), node.label);
    match node.node_type {
        NodeType::Decision => format!("{}{{\"{}\"}}", node.id, text),
        _ => format!("{}[\"{}\"]", node.id, text),
    }
}

/// Canonical Mermaid text for a valid chart.
pub fn serialize(chart: &Flowchart) -> Result<String, MermaidError> {
    let violations = chart.validate();
    if !violations.is_empty() {
        return Err(MermaidError::Invalid(violations));
    }
    for n in chart.nodes() {
        check_text(&format!("label of node {}", n.id), &n.label)?;
    }
    for e in chart.edges() {
        if let Some(c) = &e.condition {
            check_text(&format!("condition on {} -> {}", e.from, e.to), c)?;
            if c.contains("-->") {
                return Err(MermaidError::Unserializable {
                    what: format!("condition on {} -> {}", e.from, e.to),
                    reason: "contains `-->`".into(),
                });
            }
        }
    }

    let mut out = String::from("flowchart TD\n");
    let mut declared: BTreeSet<&str> = BTreeSet::new();
    fn reference<'c>(chart: &'c Flowchart, id: &str, declared: &mut BTreeSet<&'c str>) -> String {
        let node = chart.node(id).expect("validated edge endpoint");
        if declared.insert(&node.id) {
            declaration(node)
        } else {
            id.to_string()
        }
    }
    for e in chart.edges() {
        let from = reference(chart, &e.from, &mut declared);
        let to = reference(chart, &e.to, &mut declared);
        match &e.condition {
            Some(c) => writeln!(out, "    {from} -- {c} --> {to}"),
            None => writeln!(out, "    {from} --> {to}"),
        }
        .expect("writing to a String");
    }
    for n in chart.nodes() {
        if !declared.contains(n.id.as_str()) {
            writeln!(out, "    {}", declaration(n)).expect("writing to a String");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::ACCOUNT_INQUIRY_MMD;

    #[test]
    fn account_inquiry_listing_parses() {
        let f = parse(ACCOUNT_INQUIRY_MMD).unwrap();
        assert_eq!(f.node_count(), 12);
        assert_eq!(f.edge_count(), 17);
        assert_eq!(f.nodes_of_type(NodeType::Start).count(), 1);
        assert_eq!(f.nodes_of_type(NodeType::End).count(), 1);
        assert_eq!(f.nodes_of_type(NodeType::Reflection).count(), 1);
        assert_eq!(f.node("B").unwrap().node_type, NodeType::Decision);
        assert_eq!(f.node("N").unwrap().node_type, NodeType::Action);
        assert_eq!(f.node("N").unwrap().label, "Perform Charge Check");
        let r: Vec<_> = f
            .successors("R")
            .unwrap()
            .into_iter()
            .map(|(e, n)| (n.id.clone(), e.condition.clone().unwrap()))
            .collect();
        assert_eq!(
            r,
            vec![("B".into(), "Not Satisfied".into()), ("J".into(), "Satisfied".into())]
        );
    }

    #[test]
    fn minimal_chart() {
        let f = parse("flowchart TD\nA[\"Start: s\"] --> B[\"End: e\"]").unwrap();
        assert_eq!((f.node_count(), f.edge_count()), (2, 1));
    }

    #[test]
    fn rejects_other_directions() {
        assert!(matches!(
            parse("flowchart LR\nA[\"Start: s\"] --> B[\"End: e\"]"),
            Err(MermaidError::UnsupportedDirection { line: 1, .. })
        ));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        match parse("flowchart TD\n    A[\"Start: s\"] ==> B") {
            Err(MermaidError::Syntax { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 19);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("flowchart TD\nA((\"Start: s\")) --> B[\"End: e\"]"),
            Err(MermaidError::UnknownShape { shape: '(', .. })
        ));
        assert!(matches!(
            parse("flowchart TD\nA[\"Start: s\"] --> B"),
            Err(MermaidError::Syntax { .. })
        ));
        assert!(matches!(
            parse("flowchart TD\nA[\"Start: say \"hi\"\"] --> B[\"End: e\"]"),
            Err(MermaidError::Syntax { .. })
        ));
    }

    #[test]
    fn invalid_structure_is_reported() {
        match parse("flowchart TD\nA[\"Output: s\"] --> B[\"End: e\"]") {
            Err(MermaidError::Invalid(v)) => assert!(v.contains(&Violation::NoStart)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn accepts_semicolons_chains_and_unquoted_labels() {
        let f = parse("flowchart TD\n  A[Start: go] --> B{ok?} -- yes --> C[\"End: done\"];\n  B -- no --> D[\"Reflection: retry\"]\n  D --> A\n")
            .unwrap();
        assert_eq!(f.node("B").unwrap().node_type, NodeType::Decision);
        assert_eq!(f.node("B").unwrap().label, "ok?");
        assert_eq!(f.edge_count(), 4);
    }

    #[test]
    fn canonical_serialization_of_the_listing() {
        let f = parse(ACCOUNT_INQUIRY_MMD).unwrap();
        let text = serialize(&f).unwrap();
        let expected = "flowchart TD
    A[\"Start: Begin Customer Account Inquiry\"] --> B{\"Action/Decision: Determine Type of Enquiry\"}
    B -- Account Balance/Credit Limit --> C{\"Action/Decision: Is customer an active online banking/Connect App user?\"}
    B -- Transaction --> G{\"Action/Decision: App or Online Banking?\"}
    B -- Unrecognized Charges --> N[\"Action/Decision: Perform Charge Check\"]
    C -- No --> D[\"Output: Provide Assistance\"]
    C -- Yes --> F[\"Output: Would you like me to guide you through the app/online banking or do it for you?\"]
    D --> E[\"Output: Display Balance/Limit Information\"]
    E --> R[\"Reflection: Confirm User Satisfaction\"]
    F -- Assistance --> D
    F -- Guidance --> G
    G -- App --> H[\"Output: Provide App Guidance\"]
    G -- Online Banking --> I[\"Output: Provide Online Banking Guidance\"]
    H --> R
    I --> R
    N --> R
    R -- Not Satisfied --> B
    R -- Satisfied --> J[\"End: Execute Closing Script\"]
";
        assert_eq!(text, expected);
        assert_eq!(serialize(&parse(&text).unwrap()).unwrap(), text);
        assert!(parse(&text).unwrap().isomorphic(&f));
    }

    #[test]
    fn quoted_edge_labels_are_rejected() {
        let text = "flowchart TD\n    A[\"Start: s\"] -- a\"b --> B[\"End: e\"]\n";
        assert!(parse(text).is_err());
    }

    #[test]
    fn serialize_rejects_invalid_charts() {
        let mut f = Flowchart::new("x");
        f.add_node(FlowNode::new("A", NodeType::Start, "s")).unwrap();
        assert!(matches!(serialize(&f), Err(MermaidError::Invalid(_))));
    }
}
