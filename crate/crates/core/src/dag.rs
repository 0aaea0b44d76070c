//! Causal directed acyclic graphs and adjustment-set screening.
//!
//! The graph is declared as an edge list plus designated treatment and
//! outcome nodes. Every other node receives exactly one structural role
//! relative to that pair, and proposed adjustment sets are screened for
//! variables that would open or fail to close bias paths (mediators,
//! colliders, instruments).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariableRole {
    /// Common cause of treatment and outcome; adjusting is required.
    Confounder,
    /// On a directed path treatment -> ... -> outcome; adjusting blocks part
    /// of the effect.
    Mediator,
    /// Common effect of treatment and outcome; adjusting opens a spurious
    /// path.
    Collider,
    /// Causes treatment but reaches the outcome only through treatment;
    /// adjusting can amplify bias.
    Instrument,
    /// None of the above.
    Other,
}

impl fmt::Display for VariableRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VariableRole::Confounder => "confounder",
            VariableRole::Mediator => "mediator",
            VariableRole::Collider => "collider",
            VariableRole::Instrument => "instrument",
            VariableRole::Other => "other",
        };
        f.write_str(s)
    }
}

/// Serialized form: `{"edges": [["X","A"], ...], "treatment": "A",
/// "outcome": "Y"}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagSpec {
    pub edges: Vec<(String, String)>,
    pub treatment: String,
    pub outcome: String,
}

#[derive(Clone, Debug)]
pub struct CausalDag {
    nodes: BTreeSet<String>,
    children: BTreeMap<String, BTreeSet<String>>,
    parents: BTreeMap<String, BTreeSet<String>>,
    treatment: String,
    outcome: String,
}

impl CausalDag {
    /// Builds the graph and checks acyclicity. The treatment and outcome
    /// nodes must be distinct; both are added to the node set even if they
    /// appear in no edge.
    pub fn new(
        edges: &[(String, String)],
        treatment: impl Into<String>,
        outcome: impl Into<String>,
    ) -> Result<Self> {
        let treatment = treatment.into();
        let outcome = outcome.into();
        if treatment.is_empty() || outcome.is_empty() {
            return Err(Error::BadSpec("treatment and outcome must be named".into()));
        }
        if treatment == outcome {
            return Err(Error::BadSpec("treatment and outcome must be distinct".into()));
        }
        let mut nodes = BTreeSet::new();
        nodes.insert(treatment.clone());
        nodes.insert(outcome.clone());
        let mut children: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut parents: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (from, to) in edges {
            if from.is_empty() || to.is_empty() {
                return Err(Error::BadSpec("edge endpoints must be named".into()));
            }
            if from == to {
                return Err(Error::CyclicGraph);
            }
            nodes.insert(from.clone());
            nodes.insert(to.clone());
            children.entry(from.clone()).or_default().insert(to.clone());
            parents.entry(to.clone()).or_default().insert(from.clone());
        }
        let dag = CausalDag { nodes, children, parents, treatment, outcome };
        dag.check_acyclic()?;
        Ok(dag)
    }

    pub fn from_spec(spec: &DagSpec) -> Result<Self> {
        CausalDag::new(&spec.edges, spec.treatment.clone(), spec.outcome.clone())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: DagSpec = serde_json::from_str(json)?;
        CausalDag::from_spec(&spec)
    }

    pub fn to_spec(&self) -> DagSpec {
        let mut edges = Vec::new();
        for (from, tos) in &self.children {
            for to in tos {
                edges.push((from.clone(), to.clone()));
            }
        }
        DagSpec { edges, treatment: self.treatment.clone(), outcome: self.outcome.clone() }
    }

    pub fn treatment(&self) -> &str {
        &self.treatment
    }

    pub fn outcome(&self) -> &str {
        &self.outcome
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    fn check_acyclic(&self) -> Result<()> {
        // Kahn's algorithm: all nodes must be drained in topological order.
        let mut indegree: BTreeMap<&str, usize> =
            self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for tos in self.children.values() {
            for to in tos {
                *indegree.get_mut(to.as_str()).unwrap() += 1;
            }
        }
        let mut queue: VecDeque<&str> =
            indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut drained = 0usize;
        while let Some(node) = queue.pop_front() {
            drained += 1;
            if let Some(tos) = self.children.get(node) {
                for to in tos {
                    let d = indegree.get_mut(to.as_str()).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        queue.push_back(to.as_str());
                    }
                }
            }
        }
        if drained == self.nodes.len() {
            Ok(())
        } else {
            Err(Error::CyclicGraph)
        }
    }

    /// Nodes reachable from `start` by following `links` edges, excluding
    /// `start` itself. Traversal never enters `skip`.
    fn reach<'a>(
        links: &'a BTreeMap<String, BTreeSet<String>>,
        start: &'a str,
        skip: Option<&str>,
    ) -> BTreeSet<&'a str> {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut queue: VecDeque<&str> = VecDeque::new();
        queue.push_back(start);
        while let Some(node) = queue.pop_front() {
            if let Some(next) = links.get(node) {
                for n in next {
                    if Some(n.as_str()) == skip || seen.contains(n.as_str()) {
                        continue;
                    }
                    seen.insert(n.as_str());
                    queue.push_back(n.as_str());
                }
            }
        }
        seen
    }

    /// Assigns a structural role to every node other than treatment and
    /// outcome. When multiple descriptions apply the precedence is
    /// mediator, collider, confounder, instrument, other.
    pub fn classify_variables(&self) -> BTreeMap<String, VariableRole> {
        let t = self.treatment.as_str();
        let o = self.outcome.as_str();
        let desc_t = Self::reach(&self.children, t, None);
        let desc_o = Self::reach(&self.children, o, None);
        let anc_t = Self::reach(&self.parents, t, None);
        let anc_o = Self::reach(&self.parents, o, None);
        // Ancestors of the outcome along paths that avoid the treatment node:
        // a cause of treatment in this set reaches the outcome off-treatment,
        // i.e. is a confounder rather than an instrument.
        let anc_o_avoiding_t = Self::reach(&self.parents, o, Some(t));

        let mut roles = BTreeMap::new();
        for node in &self.nodes {
            let v = node.as_str();
            if v == t || v == o {
                continue;
            }
            let role = if desc_t.contains(v) && anc_o.contains(v) {
                VariableRole::Mediator
            } else if desc_t.contains(v) && desc_o.contains(v) {
                VariableRole::Collider
            } else if anc_t.contains(v) && anc_o_avoiding_t.contains(v) {
                VariableRole::Confounder
            } else if anc_t.contains(v) {
                VariableRole::Instrument
            } else {
                VariableRole::Other
            };
            roles.insert(node.clone(), role);
        }
        roles
    }

    /// Screens a proposed adjustment set: returns the subset whose roles
    /// would bias the analysis (mediators, colliders, instruments), each
    /// with its role, sorted by node name. Proposing the treatment, the
    /// outcome, or an unknown node is an error.
    pub fn validate_adjustment_set(
        &self,
        proposed: &[String],
    ) -> Result<Vec<(String, VariableRole)>> {
        for node in proposed {
            if node == &self.treatment || node == &self.outcome {
                return Err(Error::ReservedNode { node: node.clone() });
            }
            if !self.nodes.contains(node) {
                return Err(Error::UnknownNode { node: node.clone() });
            }
        }
        let roles = self.classify_variables();
        let mut dedup: BTreeSet<&String> = proposed.iter().collect();
        let mut violations = Vec::new();
        for node in std::mem::take(&mut dedup) {
            match roles[node] {
                VariableRole::Mediator | VariableRole::Collider | VariableRole::Instrument => {
                    violations.push((node.clone(), roles[node]));
                }
                VariableRole::Confounder | VariableRole::Other => {}
            }
        }
        violations.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn confounder_triangle() {
        let dag =
            CausalDag::new(&edges(&[("X", "A"), ("X", "Y"), ("A", "Y")]), "A", "Y").unwrap();
        let roles = dag.classify_variables();
        assert_eq!(roles["X"], VariableRole::Confounder);
        assert!(dag.validate_adjustment_set(&["X".to_string()]).unwrap().is_empty());
    }

    #[test]
    fn mediator_chain() {
        let dag =
            CausalDag::new(&edges(&[("A", "M"), ("M", "Y"), ("A", "Y")]), "A", "Y").unwrap();
        let roles = dag.classify_variables();
        assert_eq!(roles["M"], VariableRole::Mediator);
        let violations = dag.validate_adjustment_set(&["M".to_string()]).unwrap();
        assert_eq!(violations, vec![("M".to_string(), VariableRole::Mediator)]);
    }

    #[test]
    fn collider_vee() {
        let dag = CausalDag::new(&edges(&[("A", "C"), ("Y", "C"), ("A", "Y")]), "A", "Y").unwrap();
        assert_eq!(dag.classify_variables()["C"], VariableRole::Collider);
    }

    #[test]
    fn instrument_upstream_of_treatment_only() {
        let dag = CausalDag::new(
            &edges(&[("Z", "A"), ("A", "Y"), ("X", "A"), ("X", "Y")]),
            "A",
            "Y",
        )
        .unwrap();
        let roles = dag.classify_variables();
        assert_eq!(roles["Z"], VariableRole::Instrument);
        assert_eq!(roles["X"], VariableRole::Confounder);
        let violations =
            dag.validate_adjustment_set(&["X".to_string(), "Z".to_string()]).unwrap();
        assert_eq!(violations, vec![("Z".to_string(), VariableRole::Instrument)]);
    }

    #[test]
    fn isolated_node_is_other() {
        let dag = CausalDag::new(&edges(&[("A", "Y"), ("W", "Q")]), "A", "Y").unwrap();
        let roles = dag.classify_variables();
        assert_eq!(roles["W"], VariableRole::Other);
        assert_eq!(roles["Q"], VariableRole::Other);
    }

    #[test]
    fn cycles_and_self_loops_are_rejected() {
        assert!(matches!(
            CausalDag::new(&edges(&[("A", "B"), ("B", "C"), ("C", "A")]), "A", "C"),
            Err(Error::CyclicGraph)
        ));
        assert!(matches!(
            CausalDag::new(&edges(&[("A", "A")]), "A", "Y"),
            Err(Error::CyclicGraph)
        ));
    }

    #[test]
    fn treatment_outcome_must_differ() {
        assert!(matches!(
            CausalDag::new(&edges(&[("A", "Y")]), "A", "A"),
            Err(Error::BadSpec(_))
        ));
    }

    #[test]
    fn unknown_and_reserved_nodes_are_rejected() {
        let dag = CausalDag::new(&edges(&[("X", "A"), ("A", "Y")]), "A", "Y").unwrap();
        assert!(matches!(
            dag.validate_adjustment_set(&["nope".to_string()]),
            Err(Error::UnknownNode { .. })
        ));
        assert!(matches!(
            dag.validate_adjustment_set(&["A".to_string()]),
            Err(Error::ReservedNode { .. })
        ));
        assert!(matches!(
            dag.validate_adjustment_set(&["Y".to_string()]),
            Err(Error::ReservedNode { .. })
        ));
    }

    #[test]
    fn violations_grow_monotonically_with_the_proposed_set() {
        let dag = CausalDag::new(
            &edges(&[("X", "A"), ("X", "Y"), ("A", "M"), ("M", "Y"), ("A", "C"), ("Y", "C")]),
            "A",
            "Y",
        )
        .unwrap();
        let small = dag.validate_adjustment_set(&["M".to_string()]).unwrap();
        let large = dag
            .validate_adjustment_set(&["M".to_string(), "C".to_string(), "X".to_string()])
            .unwrap();
        assert_eq!(small.len(), 1);
        assert_eq!(large.len(), 2);
        for v in &small {
            assert!(large.contains(v));
        }
    }

    #[test]
    fn classification_is_invariant_under_relabeling() {
        let base = edges(&[("X", "A"), ("X", "Y"), ("A", "M"), ("M", "Y"), ("Z", "A")]);
        let dag = CausalDag::new(&base, "A", "Y").unwrap();
        let roles = dag.classify_variables();

        let rename = |s: &str| format!("node_{s}_renamed");
        let renamed: Vec<(String, String)> =
            base.iter().map(|(a, b)| (rename(a), rename(b))).collect();
        let dag2 = CausalDag::new(&renamed, rename("A"), rename("Y")).unwrap();
        let roles2 = dag2.classify_variables();
        for (node, role) in &roles {
            assert_eq!(roles2[&rename(node)], *role, "role changed for {node}");
        }
    }

    #[test]
    fn json_round_trip() {
        let json = r#"{"edges":[["X","A"],["X","Y"],["A","Y"]],"treatment":"A","outcome":"Y"}"#;
        let dag = CausalDag::from_json(json).unwrap();
        assert_eq!(dag.classify_variables()["X"], VariableRole::Confounder);
        let spec = dag.to_spec();
        let dag2 = CausalDag::from_spec(&spec).unwrap();
        assert_eq!(dag.classify_variables(), dag2.classify_variables());
        // Unknown keys are rejected.
        let bad = r#"{"edges":[],"treatment":"A","outcome":"Y","extra":1}"#;
        assert!(CausalDag::from_json(bad).is_err());
    }
}
