//! Directed communication graphs with leader pinning.
//!
//! Agents are indexed `0..N` internally; the text format and all printed
//! output use 1-based indices, with node `0` reserved for the leader.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Weighted digraph `a_ij > 0` iff agent `i` receives from agent `j`, plus
/// pinning gains `g_i > 0` for agents that receive from the leader.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    weights: DMatrix<f64>,
    pinning: DVector<f64>,
}

/// Outcome of the leader-rooted spanning tree test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanningTreeReport {
    pub leader_reaches_all: bool,
    pub smallest_singular_value: f64,
}

impl SpanningTreeReport {
    pub fn nonsingular(&self) -> bool {
        self.smallest_singular_value > 1e-12
    }
}

impl Topology {
    pub fn new(weights: DMatrix<f64>, pinning: DVector<f64>) -> Result<Self> {
        let n = weights.nrows();
        if !weights.is_square() || pinning.len() != n {
            return Err(Error::Dimension(format!(
                "adjacency {}x{} and pinning vector of length {} are inconsistent",
                weights.nrows(),
                weights.ncols(),
                pinning.len()
            )));
        }
        if weights
            .iter()
            .chain(pinning.iter())
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::Topology(
                "weights and pinning gains must be finite and >= 0".into(),
            ));
        }
        if (0..n).any(|i| weights[(i, i)] != 0.0) {
            return Err(Error::Topology("self-loops are not allowed".into()));
        }
        Ok(Self { weights, pinning })
    }

    /// Builds a graph from 0-based `(from, to, weight)` edges and `(agent, gain)` pins.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize, f64)],
        pins: &[(usize, f64)],
    ) -> Result<Self> {
        let mut a = DMatrix::zeros(n, n);
        for &(j, i, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Topology(format!(
                    "edge {} -> {} out of range",
                    j + 1,
                    i + 1
                )));
            }
            a[(i, j)] = w;
        }
        let mut g = DVector::zeros(n);
        for &(i, gain) in pins {
            if i >= n {
                return Err(Error::Topology(format!("pin {} out of range", i + 1)));
            }
            g[i] = gain;
        }
        Self::new(a, g)
    }

    /// Parses lines of the form `j -> i : weight` and `pin i : gain`
    /// (1-based agents). Blank lines and `#` comments are skipped.
    pub fn parse(n: usize, text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut pins = Vec::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (lhs, weight) = line
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("missing ':' in graph line {line:?}")))?;
            let weight: f64 = weight
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad weight in graph line {line:?}")))?;
            let agent = |s: &str| -> Result<usize> {
                match s.trim().parse::<usize>() {
                    Ok(k) if k >= 1 => Ok(k - 1),
                    _ => Err(Error::Parse(format!("bad agent index {s:?} in {line:?}"))),
                }
            };
            if let Some(rest) = lhs.trim().strip_prefix("pin") {
                pins.push((agent(rest)?, weight));
            } else if let Some((j, i)) = lhs.split_once("->") {
                edges.push((agent(j)?, agent(i)?, weight));
            } else {
                return Err(Error::Parse(format!("unrecognised graph line {line:?}")));
            }
        }
        Self::from_edges(n, &edges, &pins)
    }

    pub fn agents(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn pinning(&self) -> &DVector<f64> {
        &self.pinning
    }

    pub fn pin(&self, i: usize) -> f64 {
        self.pinning[i]
    }

    /// `L = D - A` with `D` the weighted in-degree matrix.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.agents();
        let mut l = -self.weights.clone();
        for i in 0..n {
            l[(i, i)] = self.weights.row(i).sum();
        }
        l
    }

    pub fn pinning_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.pinning)
    }

    /// `L + G`.
    pub fn leader_laplacian(&self) -> DMatrix<f64> {
        self.laplacian() + self.pinning_matrix()
    }

    /// `L_g = [-g  L+G]`, N x (N+1).
    pub fn extended_laplacian(&self) -> DMatrix<f64> {
        let n = self.agents();
        let mut lg = DMatrix::zeros(n, n + 1);
        lg.column_mut(0).copy_from(&(-&self.pinning));
        lg.view_mut((0, 1), (n, n))
            .copy_from(&self.leader_laplacian());
        lg
    }

    /// `I_g = [0  I_N]`, N x (N+1).
    pub fn agent_selector(&self) -> DMatrix<f64> {
        let n = self.agents();
        let mut ig = DMatrix::zeros(n, n + 1);
        ig.view_mut((0, 1), (n, n)).fill_with_identity();
        ig
    }

    /// Breadth-first search from the leader over edges `j -> i` (`a_ij > 0`)
    /// and `leader -> i` (`g_i > 0`), together with the smallest singular
    /// value of `L + G`.
    pub fn check_spanning_tree_with_leader(&self) -> SpanningTreeReport {
        let n = self.agents();
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| self.pinning[i] > 0.0).collect();
        for &i in &queue {
            seen[i] = true;
        }
        while let Some(j) = queue.pop_front() {
            for (i, reached) in seen.iter_mut().enumerate() {
                if !*reached && self.weights[(i, j)] > 0.0 {
                    *reached = true;
                    queue.push_back(i);
                }
            }
        }
        let smallest_singular_value = if n == 0 {
            0.0
        } else {
            linalg::singular_values(&self.leader_laplacian()).min()
        };
        SpanningTreeReport {
            leader_reaches_all: n > 0 && seen.iter().all(|&s| s),
            smallest_singular_value,
        }
    }

    /// `j -> i : w` / `pin i : g` lines, 1-based.
    pub fn to_text(&self) -> String {
        let n = self.agents();
        let mut out = String::new();
        for i in 0..n {
            for j in 0..n {
                if self.weights[(i, j)] > 0.0 {
                    out.push_str(&format!(
                        "{} -> {} : {}\n",
                        j + 1,
                        i + 1,
                        self.weights[(i, j)]
                    ));
                }
            }
        }
        for i in 0..n {
            if self.pinning[i] > 0.0 {
                out.push_str(&format!("pin {} : {}\n", i + 1, self.pinning[i]));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_graph() -> Topology {
        Topology::parse(
            4,
            "1 -> 2 : 1\n1 -> 3 : 1\n2 -> 3 : 1\n3 -> 4 : 1\npin 1 : 1\n",
        )
        .unwrap()
    }

    #[test]
    fn single_edge_laplacian() {
        let top = Topology::from_edges(2, &[(0, 1, 1.0)], &[]).unwrap();
        assert_eq!(
            top.laplacian(),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -1.0, 1.0])
        );
    }

    #[test]
    fn example_graph_laplacian() {
        let l = reference_graph().laplacian();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 0.0, 0.0, //
                -1.0, 1.0, 0.0, 0.0, //
                -1.0, -1.0, 2.0, 0.0, //
                0.0, 0.0, -1.0, 1.0,
            ],
        );
        assert_eq!(l, expected);
        assert_eq!(
            reference_graph().pinning_matrix(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]))
        );
    }

    #[test]
    fn empty_graph_laplacian_is_zero() {
        let top = Topology::new(DMatrix::zeros(3, 3), DVector::zeros(3)).unwrap();
        assert_eq!(top.laplacian(), DMatrix::zeros(3, 3));
        let lg = top.extended_laplacian();
        assert_eq!(lg, DMatrix::zeros(3, 4));
    }

    #[test]
    fn extended_matrices_single_agent() {
        let top = Topology::from_edges(1, &[], &[(0, 1.0)]).unwrap();
        assert_eq!(
            top.extended_laplacian(),
            DMatrix::from_row_slice(1, 2, &[-1.0, 1.0])
        );
        assert_eq!(
            top.agent_selector(),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0])
        );
    }

    #[test]
    fn spanning_tree_checks() {
        let rep = reference_graph().check_spanning_tree_with_leader();
        assert!(rep.leader_reaches_all && rep.nonsingular());
        assert!((reference_graph().leader_laplacian().determinant() - 2.0).abs() < 1e-12);

        let empty = Topology::new(DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap();
        let rep = empty.check_spanning_tree_with_leader();
        assert!(!rep.leader_reaches_all && !rep.nonsingular());

        let one = Topology::from_edges(1, &[], &[(0, 1.0)]).unwrap();
        assert!(one.check_spanning_tree_with_leader().leader_reaches_all);
    }

    #[test]
    fn invalid_graphs_are_rejected() {
        assert!(Topology::new(DMatrix::identity(2, 2), DVector::zeros(2)).is_err());
        assert!(Topology::from_edges(2, &[(0, 1, -1.0)], &[]).is_err());
        assert!(Topology::parse(2, "1 => 2 : 1").is_err());
        assert!(Topology::parse(2, "0 -> 2 : 1").is_err());
    }

    #[test]
    fn text_round_trip() {
        let g = reference_graph();
        assert_eq!(Topology::parse(4, &g.to_text()).unwrap(), g);
    }

    /// Random graph in which agent `i > 0` has a parent among `0..i` and agent 0 is pinned.
    fn rooted_graph() -> impl Strategy<Value = Topology> {
        (2usize..7)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    proptest::collection::vec(0.1f64..3.0, n * n),
                    proptest::collection::vec(proptest::bool::weighted(0.3), n * n),
                    proptest::collection::vec(0usize..100, n),
                    0.1f64..3.0,
                )
            })
            .prop_map(|(n, w, extra, parents, g0)| {
                let mut a = DMatrix::zeros(n, n);
                for i in 1..n {
                    a[(i, parents[i] % i)] = w[i * n];
                }
                for i in 0..n {
                    for j in 0..n {
                        if i != j && extra[i * n + j] {
                            a[(i, j)] = w[i * n + j];
                        }
                    }
                }
                let mut g = DVector::zeros(n);
                g[0] = g0;
                Topology::new(a, g).unwrap()
            })
    }

    proptest! {
        #[test]
        fn laplacian_rows_sum_to_zero(top in rooted_graph()) {
            let l = top.laplacian();
            for i in 0..top.agents() {
                prop_assert!(l.row(i).sum().abs() < 1e-12);
                for j in 0..top.agents() {
                    if i != j {
                        prop_assert!(l[(i, j)] <= 0.0);
                    }
                }
            }
        }

        #[test]
        fn spanning_tree_implies_nonsingular(top in rooted_graph()) {
            let rep = top.check_spanning_tree_with_leader();
            prop_assert!(rep.leader_reaches_all);
            prop_assert!(rep.smallest_singular_value > 1e-12);
        }
    }
}
