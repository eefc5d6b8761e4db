use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{ContrastObservation, Treatment};

/// Connected components of the treatment graph, each sorted, ordered by
/// their smallest label.
pub(crate) fn components_of(treatments: &[Treatment], studies: &[ContrastObservation]) -> Vec<Vec<String>> {
    let edges: Vec<(&str, &str)> = studies
        .iter()
        .map(|s| (s.treat_a.as_str(), s.treat_b.as_str()))
        .collect();
    let nodes: Vec<&str> = treatments.iter().map(Treatment::as_str).collect();
    connected_components(&nodes, &edges)
}

/// Breadth-first components of an undirected labelled graph.
pub fn connected_components(nodes: &[&str], edges: &[(&str, &str)]) -> Vec<Vec<String>> {
    let mut adjacency: BTreeMap<&str, BTreeSet<&str>> = nodes.iter().map(|n| (*n, BTreeSet::new())).collect();
    for &(a, b) in edges {
        adjacency.entry(a).or_default().insert(b);
        adjacency.entry(b).or_default().insert(a);
    }
    let mut visited = BTreeSet::new();
    let mut components = Vec::new();
    for &start in adjacency.keys() {
        if visited.contains(start) {
            continue;
        }
        let mut component = Vec::new();
        let mut queue = VecDeque::from([start]);
        visited.insert(start);
        while let Some(node) = queue.pop_front() {
            component.push(node.to_string());
            for &next in &adjacency[node] {
                if visited.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        component.sort();
        components.push(component);
    }
    components.sort();
    components
}
