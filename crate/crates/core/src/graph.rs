//! Region adjacency structures for intrinsic CAR fields.
//!
//! Graphs are undirected, unweighted and must be connected: the ICAR
//! precision `H - A` then has exactly one null direction (the constant
//! vector) per time slice, which the sum-to-zero constraint removes.

use std::collections::HashMap;
use std::io::BufRead;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Immutable undirected region graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    labels: Vec<String>,
    /// Each edge stored once with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    /// Builds a graph over `n` regions labelled `"0".."n-1"`.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let labels = (0..n).map(|i| i.to_string()).collect();
        Self::with_labels(labels, edges)
    }

    /// Builds a graph from region labels and index pairs. Duplicate edges
    /// (in either orientation) collapse to one; self-loops and
    /// disconnected graphs are rejected.
    pub fn with_labels(labels: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Invalid("graph has no regions".into()));
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Invalid(format!(
                    "edge ({a}, {b}) references a region outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::SelfLoop(labels[a].clone()));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();

        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &canon {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let graph = Self {
            labels,
            edges: canon,
            neighbors,
        };
        let components = graph.components();
        if components.len() > 1 {
            return Err(Error::Disconnected {
                components: components
                    .into_iter()
                    .map(|c| c.into_iter().map(|i| graph.labels[i].clone()).collect())
                    .collect(),
            });
        }
        Ok(graph)
    }

    pub fn n_regions(&self) -> usize {
        self.labels.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// `w_{i+}`: number of regions sharing a border with `i`.
    pub fn neighbor_count(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn neighbor_counts(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Label-to-index lookup table.
    pub fn index_map(&self) -> HashMap<String, usize> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect()
    }

    /// Dense `H - A`, the ICAR precision up to `1/tau^2`.
    pub fn precision_matrix(&self) -> DMatrix<f64> {
        let n = self.n_regions();
        let mut q = DMatrix::zeros(n, n);
        for &(a, b) in &self.edges {
            q[(a, a)] += 1.0;
            q[(b, b)] += 1.0;
            q[(a, b)] -= 1.0;
            q[(b, a)] -= 1.0;
        }
        q
    }

    /// Connected components as sorted index lists, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n_regions();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &w in &self.neighbors[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Rook-adjacency lattice; region `r * cols + c` sits at row `r`, column `c`.
pub fn build_grid_adjacency(rows: usize, cols: usize) -> Result<AdjacencyGraph> {
    if rows == 0 || cols == 0 || rows * cols < 2 {
        return Err(Error::InvalidDimension { rows, cols });
    }
    let mut edges = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    AdjacencyGraph::from_edges(rows * cols, &edges)
}

/// Reads a whitespace-separated edge list. Blank lines and lines starting
/// with `#` are skipped. Region labels are assigned dense indices in order
/// of first appearance.
pub fn load_adjacency<R: BufRead>(source: R) -> Result<AdjacencyGraph> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut edges = Vec::new();
    let mut intern = |label: &str| -> usize {
        if let Some(&i) = index.get(label) {
            return i;
        }
        let i = labels.len();
        labels.push(label.to_string());
        index.insert(label.to_string(), i);
        i
    };
    for (lineno, line) in source.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected two region identifiers, found {}", fields.len()),
            });
        }
        if fields[0] == fields[1] {
            return Err(Error::SelfLoop(fields[0].to_string()));
        }
        let a = intern(fields[0]);
        let b = intern(fields[1]);
        edges.push((a, b));
    }
    if labels.is_empty() {
        return Err(Error::Invalid("edge list contains no edges".into()));
    }
    AdjacencyGraph::with_labels(labels, &edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_10x10_has_180_edges() {
        let g = build_grid_adjacency(10, 10).unwrap();
        assert_eq!(g.n_regions(), 100);
        assert_eq!(g.edges().len(), 180);
    }

    #[test]
    fn grid_2x2_corners() {
        let g = build_grid_adjacency(2, 2).unwrap();
        assert!(g.neighbor_counts().iter().all(|&c| c == 2));
    }

    #[test]
    fn grid_3x3_center() {
        let g = build_grid_adjacency(3, 3).unwrap();
        assert_eq!(g.neighbor_count(4), 4);
        assert_eq!(g.edges().len(), 12);
        assert_eq!(g.neighbor_count(0), 2);
        assert_eq!(g.neighbor_count(1), 3);
        // rook only: diagonal cells are not neighbours
        assert!(!g.is_adjacent(0, 4));
    }

    #[test]
    fn grid_1x1_rejected() {
        assert_eq!(
            build_grid_adjacency(1, 1),
            Err(Error::InvalidDimension { rows: 1, cols: 1 })
        );
        assert!(build_grid_adjacency(1, 2).is_ok());
    }

    #[test]
    fn load_path() {
        let g = load_adjacency("1 2\n2 3\n".as_bytes()).unwrap();
        assert_eq!(g.n_regions(), 3);
        assert_eq!(g.neighbor_counts(), vec![1, 2, 1]);
        assert_eq!(g.labels(), &["1", "2", "3"]);
    }

    #[test]
    fn load_dedups() {
        let g = load_adjacency("# header\n1 2\n\n2 1\n".as_bytes()).unwrap();
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn load_rejects_two_components() {
        match load_adjacency("1 2\n3 4\n".as_bytes()) {
            Err(Error::Disconnected { components }) => {
                assert_eq!(components, vec![vec!["1", "2"], vec!["3", "4"]]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_rejects_self_loop_and_bad_lines() {
        assert!(matches!(
            load_adjacency("1 1\n".as_bytes()),
            Err(Error::SelfLoop(_))
        ));
        assert!(matches!(
            load_adjacency("1 2 3\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn fips_labels_keep_original_ids() {
        let g = load_adjacency("39001 39015\n39015 39027\n".as_bytes()).unwrap();
        assert_eq!(g.index_of("39027"), Some(2));
    }

    proptest! {
        #[test]
        fn degree_sum_and_null_vector(rows in 1usize..7, cols in 2usize..7) {
            let g = build_grid_adjacency(rows, cols).unwrap();
            let total: usize = g.neighbor_counts().iter().sum();
            prop_assert_eq!(total, 2 * g.edges().len());
            let q = g.precision_matrix();
            let ones = nalgebra::DVector::from_element(g.n_regions(), 1.0);
            prop_assert!((q * ones).amax() == 0.0);
            prop_assert_eq!(g.components().len(), 1);
        }
    }
}
