use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};

/// Weighted undirected edge `(a, b, length)`.
pub type Edge = (usize, usize, f64);

/// Pairwise shortest-path distances over the relaxed object graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicDistanceMatrix {
    distances: DMatrix<f64>,
}

impl GeodesicDistanceMatrix {
    pub fn len(&self) -> usize {
        self.distances.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.distances[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.distances
    }
}

/// Edges between consecutive points, with Euclidean lengths.
pub fn chain_edges(points: &[Vector3<f64>]) -> Vec<Edge> {
    points
        .windows(2)
        .enumerate()
        .map(|(i, w)| (i, i + 1, (w[1] - w[0]).norm()))
        .collect()
}

/// Edges for the given index pairs, with Euclidean lengths.
pub fn mesh_edges(points: &[Vector3<f64>], pairs: &[(usize, usize)]) -> Vec<Edge> {
    pairs
        .iter()
        .map(|&(a, b)| (a, b, (points[a] - points[b]).norm()))
        .collect()
}

#[derive(PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adjacency: &[Vec<(usize, f64)>], source: usize, out: &mut [f64]) {
    out.fill(f64::INFINITY);
    out[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Frontier {
        dist: 0.0,
        node: source,
    });
    while let Some(Frontier { dist, node }) = heap.pop() {
        if dist > out[node] {
            continue;
        }
        for &(next, len) in &adjacency[node] {
            let candidate = dist + len;
            if candidate < out[next] {
                out[next] = candidate;
                heap.push(Frontier {
                    dist: candidate,
                    node: next,
                });
            }
        }
    }
}

/// All-pairs geodesic distances of the relaxed object (Dijkstra from every
/// point).
pub fn geodesic_distance_matrix(
    relaxed_points: &[Vector3<f64>],
    edges: &[Edge],
) -> Result<GeodesicDistanceMatrix> {
    let n = relaxed_points.len();
    if n == 0 {
        return Err(Error::InvalidInput("object has no points".into()));
    }
    let mut adjacency = vec![Vec::new(); n];
    for &(a, b, len) in edges {
        if a >= n || b >= n {
            return Err(Error::InvalidInput(format!(
                "edge ({a}, {b}) references a point outside 0..{n}"
            )));
        }
        if !(len.is_finite() && len >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "edge ({a}, {b}) has invalid length {len}"
            )));
        }
        adjacency[a].push((b, len));
        adjacency[b].push((a, len));
    }

    let mut distances = DMatrix::zeros(n, n);
    let mut row = vec![0.0; n];
    for source in 0..n {
        dijkstra(&adjacency, source, &mut row);
        if source == 0 && row.iter().any(|d| d.is_infinite()) {
            return Err(Error::Disconnected {
                components: components(&adjacency),
            });
        }
        for (target, &d) in row.iter().enumerate() {
            distances[(source, target)] = d;
        }
    }
    // Symmetrize against round-off differences between the two directions.
    let distances = (&distances + distances.transpose()) * 0.5;
    Ok(GeodesicDistanceMatrix { distances })
}

fn components(adjacency: &[Vec<(usize, f64)>]) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; adjacency.len()];
    let mut out = Vec::new();
    for start in 0..adjacency.len() {
        if label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![start];
        label[start] = id;
        let mut stack = vec![start];
        while let Some(node) = stack.pop() {
            for &(next, _) in &adjacency[node] {
                if label[next] == usize::MAX {
                    label[next] = id;
                    members.push(next);
                    stack.push(next);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}
