//! Discretized metric measure spaces.
//!
//! A [`MeasureSpace`] is a finite set of nodes carrying positive quadrature
//! weights and a full pairwise distance table. Intervals and their unions
//! live in a euclidean embedding; weighted graphs use shortest-path
//! distances on the supplied edge lengths.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadrature rule used to discretize an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureRule {
    /// `n` cells, one node at each cell center.
    Midpoint,
    /// `n` cells, `n + 1` nodes with half weights at the two endpoints.
    Trapezoid,
}

/// How node positions are described.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Points {
    /// Row-major coordinates, `dim` numbers per node.
    Euclidean { dim: usize, coords: Vec<f64> },
    /// Abstract graph vertices, identified by index.
    Graph,
}

/// Finite metric measure space `(Ω, d, dx)`.
#[derive(Debug, Clone)]
pub struct MeasureSpace {
    points: Points,
    weights: Vec<f64>,
    distances: DMatrix<f64>,
    total_measure: f64,
}

/// Result of an R-connectedness test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityCertificate {
    pub r: f64,
    pub connected: bool,
    /// Chain of nodes joining the two most distant nodes, each hop shorter than `r`.
    pub witness_chain: Option<Vec<usize>>,
    /// Smallest measure of a ball `B(x, r)` over all nodes.
    pub mu0: f64,
}

impl MeasureSpace {
    /// Euclidean point cloud with explicit weights.
    pub fn from_points(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        if coords.len() != dim * weights.len() {
            return Err(Error::invalid(format!(
                "{} coordinates do not describe {} points of dimension {dim}",
                coords.len(),
                weights.len()
            )));
        }
        check_weights(&weights)?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("coordinates must be finite"));
        }
        let n = weights.len();
        let distances = DMatrix::from_fn(n, n, |i, j| {
            let a = &coords[i * dim..(i + 1) * dim];
            let b = &coords[j * dim..(j + 1) * dim];
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        });
        Ok(Self::assemble(Points::Euclidean { dim, coords }, weights, distances))
    }

    /// Discretize `[a, b]` with `n` cells.
    pub fn interval(a: f64, b: f64, n: usize, rule: QuadratureRule) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::invalid(format!("interval requires a < b, got [{a}, {b}]")));
        }
        if n == 0 {
            return Err(Error::invalid("interval needs at least one cell"));
        }
        let len = b - a;
        let step = len / n as f64;
        let (coords, weights): (Vec<f64>, Vec<f64>) = match rule {
            QuadratureRule::Midpoint => (0..n)
                .map(|i| (a + (i as f64 + 0.5) * step, step))
                .unzip(),
            QuadratureRule::Trapezoid => (0..=n)
                .map(|i| {
                    let w = if i == 0 || i == n { 0.5 * step } else { step };
                    let x = if i == n { b } else { a + i as f64 * step };
                    (x, w)
                })
                .unzip(),
        };
        Self::from_points(1, coords, weights)
    }

    /// Weighted graph with shortest-path metric.
    ///
    /// Duplicate edges keep the smaller length. Vertices in different
    /// components are placed at a finite sentinel distance of
    /// `1000 * diameter` so that kernel laws stay finite.
    pub fn graph(vertices: usize, edges: &[(usize, usize, f64)], measures: Vec<f64>) -> Result<Self> {
        if vertices == 0 {
            return Err(Error::invalid("graph needs at least one vertex"));
        }
        if measures.len() != vertices {
            return Err(Error::DimensionMismatch { expected: vertices, found: measures.len() });
        }
        check_weights(&measures)?;
        let mut dist = DMatrix::from_element(vertices, vertices, f64::INFINITY);
        for i in 0..vertices {
            dist[(i, i)] = 0.0;
        }
        for &(i, j, len) in edges {
            if i >= vertices || j >= vertices {
                return Err(Error::invalid(format!("edge ({i}, {j}) references a missing vertex")));
            }
            if i == j {
                return Err(Error::invalid(format!("self-loop at vertex {i}")));
            }
            if !(len > 0.0 && len.is_finite()) {
                return Err(Error::invalid(format!("edge ({i}, {j}) has non-positive length {len}")));
            }
            if len < dist[(i, j)] {
                dist[(i, j)] = len;
                dist[(j, i)] = len;
            }
        }
        // Floyd-Warshall; graphs here are desk scale.
        for k in 0..vertices {
            for i in 0..vertices {
                let dik = dist[(i, k)];
                if !dik.is_finite() {
                    continue;
                }
                for j in 0..vertices {
                    let through = dik + dist[(k, j)];
                    if through < dist[(i, j)] {
                        dist[(i, j)] = through;
                    }
                }
            }
        }
        let diameter = dist.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max);
        let sentinel = 1e3 * if diameter > 0.0 { diameter } else { 1.0 };
        dist.apply(|d| {
            if !d.is_finite() {
                *d = sentinel;
            }
        });
        Ok(Self::assemble(Points::Graph, measures, dist))
    }

    /// Concatenate two euclidean spaces of the same dimension.
    pub fn union(&self, other: &MeasureSpace) -> Result<Self> {
        match (&self.points, &other.points) {
            (Points::Euclidean { dim: d1, coords: c1 }, Points::Euclidean { dim: d2, coords: c2 })
                if d1 == d2 =>
            {
                let coords = c1.iter().chain(c2).copied().collect();
                let weights = self.weights.iter().chain(&other.weights).copied().collect();
                Self::from_points(*d1, coords, weights)
            }
            _ => Err(Error::invalid("union requires two euclidean spaces of equal dimension")),
        }
    }

    /// Sub-space on the nodes where `mask` is true, keeping weights and distances.
    pub fn restrict(&self, mask: &[bool]) -> Result<Self> {
        crate::error::check_len(self.len(), mask.len())?;
        let idx: Vec<usize> = (0..self.len()).filter(|&i| mask[i]).collect();
        if idx.is_empty() {
            return Err(Error::invalid("restriction to an empty node set"));
        }
        let weights = idx.iter().map(|&i| self.weights[i]).collect();
        let distances = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.distances[(idx[a], idx[b])]);
        let points = match &self.points {
            Points::Euclidean { dim, coords } => Points::Euclidean {
                dim: *dim,
                coords: idx.iter().flat_map(|&i| coords[i * dim..(i + 1) * dim].iter().copied()).collect(),
            },
            Points::Graph => Points::Graph,
        };
        Ok(Self::assemble(points, weights, distances))
    }

    fn assemble(points: Points, weights: Vec<f64>, distances: DMatrix<f64>) -> Self {
        let total_measure = weights.iter().sum();
        Self { points, weights, distances, total_measure }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_measure(&self) -> f64 {
        self.total_measure
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[(i, j)]
    }

    pub fn distances(&self) -> &DMatrix<f64> {
        &self.distances
    }

    /// First coordinate of node `i`, or the vertex index on graphs.
    pub fn position(&self, i: usize) -> f64 {
        match &self.points {
            Points::Euclidean { dim, coords } => coords[i * dim],
            Points::Graph => i as f64,
        }
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        self.distances.iter().copied().fold(0.0, f64::max)
    }

    /// Measure of the open ball `B(x_i, r)`.
    pub fn ball_measure(&self, i: usize, r: f64) -> f64 {
        (0..self.len())
            .filter(|&j| self.distances[(i, j)] < r)
            .map(|j| self.weights[j])
            .sum()
    }

    /// Nodes joined to `i` by a hop shorter than `r`.
    pub fn neighbours(&self, i: usize, r: f64) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&j| j != i && self.distances[(i, j)] < r)
    }

    /// Hop counts from a set of source nodes in the graph `{(i, j) : d(i, j) < r}`.
    /// Unreachable nodes get `None`.
    pub fn hop_distances(&self, sources: &[usize], r: f64) -> Vec<Option<usize>> {
        let mut hops = vec![None; self.len()];
        let mut queue = VecDeque::new();
        for &s in sources {
            if hops[s].is_none() {
                hops[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(i) = queue.pop_front() {
            let next = hops[i].unwrap() + 1;
            for j in self.neighbours(i, r) {
                if hops[j].is_none() {
                    hops[j] = Some(next);
                    queue.push_back(j);
                }
            }
        }
        hops
    }

    /// Test R-connectedness and compute the ball-measure lower bound `mu0`.
    pub fn is_r_connected(&self, r: f64) -> Result<ConnectivityCertificate> {
        if !(r > 0.0) {
            return Err(Error::invalid(format!("connectivity radius must be positive, got {r}")));
        }
        let n = self.len();
        let mu0 = (0..n).map(|i| self.ball_measure(i, r)).fold(f64::INFINITY, f64::min);

        let (mut far_a, mut far_b, mut best) = (0, 0, -1.0);
        for i in 0..n {
            for j in i..n {
                if self.distances[(i, j)] > best {
                    best = self.distances[(i, j)];
                    far_a = i;
                    far_b = j;
                }
            }
        }

        let mut parent = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([far_a]);
        seen[far_a] = true;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbours(i, r) {
                if !seen[j] {
                    seen[j] = true;
                    parent[j] = i;
                    queue.push_back(j);
                }
            }
        }
        let connected = seen.iter().all(|&s| s);
        let witness_chain = connected.then(|| {
            let mut chain = vec![far_b];
            let mut cur = far_b;
            while cur != far_a {
                cur = parent[cur];
                chain.push(cur);
            }
            chain.reverse();
            chain
        });
        Ok(ConnectivityCertificate { r, connected, witness_chain, mu0 })
    }
}

impl ConnectivityCertificate {
    /// Check that every hop of the witness chain is shorter than `r`.
    pub fn validate(&self, space: &MeasureSpace) -> bool {
        match &self.witness_chain {
            None => !self.connected,
            Some(chain) => chain.windows(2).all(|w| space.distance(w[0], w[1]) < self.r),
        }
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::invalid("a space needs at least one node"));
    }
    if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::invalid(format!("weight of node {i} must be positive and finite, got {w}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_nodes_and_weights() {
        let s = MeasureSpace::interval(0.0, 1.0, 4, QuadratureRule::Midpoint).unwrap();
        let xs: Vec<f64> = (0..4).map(|i| s.position(i)).collect();
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(s.weights().iter().all(|&w| w == 0.25));
        assert_eq!(s.total_measure(), 1.0);

        let one = MeasureSpace::interval(0.0, 1.0, 1, QuadratureRule::Midpoint).unwrap();
        assert_eq!(one.position(0), 0.5);
        assert_eq!(one.weights(), &[1.0]);
    }

    #[test]
    fn trapezoid_half_endpoints() {
        let s = MeasureSpace::interval(0.0, 2.0, 8, QuadratureRule::Trapezoid).unwrap();
        assert_eq!(s.len(), 9);
        assert_eq!(s.weights()[0], 0.125);
        assert_eq!(s.weights()[8], 0.125);
        assert!(s.weights()[1..8].iter().all(|&w| w == 0.25));
        assert_eq!(s.total_measure(), 2.0);
        assert_eq!(s.position(8), 2.0);
    }

    #[test]
    fn interval_rejects_bad_input() {
        assert!(MeasureSpace::interval(0.0, 1.0, 0, QuadratureRule::Midpoint).is_err());
        assert!(MeasureSpace::interval(1.0, 1.0, 3, QuadratureRule::Midpoint).is_err());
        assert!(MeasureSpace::interval(2.0, 1.0, 3, QuadratureRule::Trapezoid).is_err());
    }

    #[test]
    fn graph_shortest_paths() {
        let g = MeasureSpace::graph(2, &[(0, 1, 1.0)], vec![0.5, 0.5]).unwrap();
        assert_eq!(g.distance(0, 1), 1.0);
        assert_eq!(g.total_measure(), 1.0);

        let path = MeasureSpace::graph(3, &[(0, 1, 1.0), (1, 2, 1.0)], vec![1.0; 3]).unwrap();
        assert_eq!(path.distance(0, 2), 2.0);

        let dup = MeasureSpace::graph(2, &[(0, 1, 3.0), (1, 0, 2.0)], vec![1.0; 2]).unwrap();
        assert_eq!(dup.distance(0, 1), 2.0);
    }

    #[test]
    fn graph_disconnected_sentinel() {
        let g = MeasureSpace::graph(2, &[], vec![1.0, 1.0]).unwrap();
        let d = g.distance(0, 1);
        assert!(d.is_finite() && d >= 1e3);

        let g = MeasureSpace::graph(4, &[(0, 1, 2.0)], vec![1.0; 4]).unwrap();
        assert_eq!(g.distance(2, 3), 2e3);
        assert!(g.distance(0, 3) > g.distance(0, 1));
    }

    #[test]
    fn graph_rejects_self_loops_and_bad_measures() {
        assert!(MeasureSpace::graph(2, &[(1, 1, 1.0)], vec![1.0; 2]).is_err());
        assert!(MeasureSpace::graph(2, &[(0, 1, 0.0)], vec![1.0; 2]).is_err());
        assert!(MeasureSpace::graph(2, &[(0, 1, 1.0)], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn r_connectivity() {
        let s = MeasureSpace::interval(0.0, 1.0, 8, QuadratureRule::Midpoint).unwrap();
        let cert = s.is_r_connected(0.2).unwrap();
        assert!(cert.connected);
        assert!(cert.validate(&s));
        let chain = cert.witness_chain.as_ref().unwrap();
        assert_eq!((chain[0], *chain.last().unwrap()), (0, 7));
        // each ball of radius 0.2 holds the node and at least one neighbour
        assert!((cert.mu0 - 0.25).abs() < 1e-15);

        let left = MeasureSpace::interval(0.0, 0.4, 4, QuadratureRule::Midpoint).unwrap();
        let right = MeasureSpace::interval(0.6, 1.0, 4, QuadratureRule::Midpoint).unwrap();
        let both = left.union(&right).unwrap();
        let cert = both.is_r_connected(0.15).unwrap();
        assert!(!cert.connected);
        assert!(cert.witness_chain.is_none());

        assert!(s.is_r_connected(0.0).is_err());
    }

    #[test]
    fn metric_axioms_on_graph() {
        let g = MeasureSpace::graph(
            5,
            &[(0, 1, 1.0), (1, 2, 0.5), (2, 3, 2.0), (0, 3, 4.0)],
            vec![1.0; 5],
        )
        .unwrap();
        let n = g.len();
        for i in 0..n {
            assert_eq!(g.distance(i, i), 0.0);
            for j in 0..n {
                assert_eq!(g.distance(i, j), g.distance(j, i));
                for k in 0..n {
                    assert!(g.distance(i, k) <= g.distance(i, j) + g.distance(j, k) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn restrict_keeps_weights() {
        let s = MeasureSpace::interval(0.0, 1.0, 4, QuadratureRule::Midpoint).unwrap();
        let sub = s.restrict(&[false, false, true, true]).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.total_measure(), 0.5);
        assert_eq!(sub.position(0), 0.625);
        assert!(s.restrict(&[false; 4]).is_err());
    }
}
