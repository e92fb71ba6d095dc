//! Mutual-KNN graphs with Gaussian edge weights.
//!
//! Nodes `k` and `m` are linked iff each is among the other's `K` nearest
//! neighbours (Euclidean, self excluded, ties broken by lower index). A linked
//! pair has weight `exp(-|p_k - p_m|^2 / (2 * width))`.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Smallest width the median heuristic may return.
pub const WIDTH_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adjacency: Array2<f64>,
    edges: Vec<(usize, usize)>,
    width: f64,
    k_neighbors: usize,
}

impl WeightedGraph {
    pub fn adjacency(&self) -> ArrayView2<'_, f64> {
        self.adjacency.view()
    }

    /// Linked pairs `(k, m)` with `k < m`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Neighbour count after clamping to `n - 1`.
    pub fn k_neighbors(&self) -> usize {
        self.k_neighbors
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    /// Weighted degree of every node.
    pub fn degrees(&self) -> Vec<f64> {
        self.adjacency.rows().into_iter().map(|r| r.sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix(Array2<f64>);

impl LaplacianMatrix {
    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let v = ndarray::ArrayView1::from(x);
        v.dot(&self.0.dot(&v))
    }
}

/// Squared Euclidean distances between all rows.
pub fn squared_distances(points: ArrayView2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        for m in (k + 1)..n {
            let d: f64 = points
                .row(k)
                .iter()
                .zip(points.row(m))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out[[k, m]] = d;
            out[[m, k]] = d;
        }
    }
    out
}

/// Width chosen by the median heuristic, remembering which pair distances it
/// was read from so gradients can flow back into them.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthEstimate {
    value: f64,
    sources: Vec<((usize, usize), f64)>,
}

impl WidthEstimate {
    /// A width that does not depend on the points.
    pub fn fixed(value: f64) -> Self {
        WidthEstimate {
            value,
            sources: Vec::new(),
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Median of the squared pairwise distances, floored at [`WIDTH_FLOOR`].
pub fn median_width(sq_dist: ArrayView2<f64>) -> WidthEstimate {
    let n = sq_dist.nrows();
    let mut pairs: Vec<(f64, (usize, usize))> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for k in 0..n {
        for m in (k + 1)..n {
            pairs.push((sq_dist[[k, m]], (k, m)));
        }
    }
    if pairs.is_empty() {
        return WidthEstimate::fixed(WIDTH_FLOOR);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let len = pairs.len();
    let (value, sources) = if len % 2 == 1 {
        let (v, p) = pairs[len / 2];
        (v, vec![(p, 1.0)])
    } else {
        let (a, pa) = pairs[len / 2 - 1];
        let (b, pb) = pairs[len / 2];
        (0.5 * (a + b), vec![(pa, 0.5), (pb, 0.5)])
    };
    if value < WIDTH_FLOOR {
        WidthEstimate::fixed(WIDTH_FLOOR)
    } else {
        WidthEstimate { value, sources }
    }
}

/// For each node, its `k` nearest other nodes.
fn nearest_neighbors(sq_dist: ArrayView2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = sq_dist.nrows();
    (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| match sq_dist[[i, a]].total_cmp(&sq_dist[[i, b]]) {
                Ordering::Equal => a.cmp(&b),
                o => o,
            });
            others.truncate(k);
            others
        })
        .collect()
}

pub fn mutual_knn_adjacency(points: ArrayView2<f64>, k: usize, width: f64) -> Result<WeightedGraph> {
    let sq = validated_distances(points, k)?;
    if !width.is_finite() || width <= 0.0 {
        return Err(Error::config(format!("graph width must be positive, got {width}")));
    }
    Ok(build_from_distances(sq.view(), k, width))
}

/// Builds the graph with the median-heuristic width and returns both.
pub fn mutual_knn_adjacency_median(points: ArrayView2<f64>, k: usize) -> Result<(WeightedGraph, WidthEstimate)> {
    let sq = validated_distances(points, k)?;
    let width = median_width(sq.view());
    let graph = build_from_distances(sq.view(), k, width.value);
    Ok((graph, width))
}

fn validated_distances(points: ArrayView2<f64>, k: usize) -> Result<Array2<f64>> {
    if points.nrows() == 0 {
        return Err(Error::shape("graph needs at least one node"));
    }
    if k == 0 {
        return Err(Error::config("K must be at least 1"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("graph points must be finite".into()));
    }
    Ok(squared_distances(points))
}

fn build_from_distances(sq: ArrayView2<f64>, k: usize, width: f64) -> WeightedGraph {
    let n = sq.nrows();
    let k = k.min(n.saturating_sub(1));
    let mut adjacency = Array2::zeros((n, n));
    let mut edges = Vec::new();
    if k > 0 {
        let knn = nearest_neighbors(sq, k);
        for i in 0..n {
            for &j in &knn[i] {
                if i < j && knn[j].contains(&i) {
                    let w = (-sq[[i, j]] / (2.0 * width)).exp();
                    adjacency[[i, j]] = w;
                    adjacency[[j, i]] = w;
                    edges.push((i, j));
                }
            }
        }
        edges.sort_unstable();
    }
    WeightedGraph {
        adjacency,
        edges,
        width,
        k_neighbors: k,
    }
}

/// Degree matrix minus adjacency.
pub fn laplacian(g: &WeightedGraph) -> LaplacianMatrix {
    let mut l = g.adjacency.mapv(|a| -a);
    for (i, d) in g.degrees().into_iter().enumerate() {
        l[[i, i]] = d;
    }
    LaplacianMatrix(l)
}

/// Row `k` of the output is `sum_m a_km * embeddings[m]`.
pub fn propagate_embeddings(embeddings: ArrayView2<f64>, g: &WeightedGraph) -> Result<Array2<f64>> {
    if embeddings.nrows() != g.num_nodes() {
        return Err(Error::shape(format!(
            "{} embedding rows for a {}-node graph",
            embeddings.nrows(),
            g.num_nodes()
        )));
    }
    Ok(g.adjacency.dot(&embeddings))
}

/// `trace(E^T L E)`, which equals `1/2 sum_{k,m} a_km |e_k - e_m|^2`.
pub fn smoothness_energy(embeddings: ArrayView2<f64>, l: &LaplacianMatrix) -> Result<f64> {
    if embeddings.nrows() != l.0.nrows() {
        return Err(Error::shape(format!(
            "{} embedding rows for a {}-node Laplacian",
            embeddings.nrows(),
            l.0.nrows()
        )));
    }
    let le = l.0.dot(&embeddings);
    Ok(embeddings.iter().zip(le.iter()).map(|(a, b)| a * b).sum())
}

/// Pulls a gradient on the adjacency entries back onto the points.
///
/// `grad_adjacency[k][m]` is the derivative of the loss with respect to the
/// entry `a_km` taken as an independent variable. The neighbour structure is
/// piecewise constant and contributes nothing; the Gaussian weights and a
/// median-derived width are differentiated exactly.
pub fn adjacency_backward(
    points: ArrayView2<f64>,
    graph: &WeightedGraph,
    width: &WidthEstimate,
    grad_adjacency: ArrayView2<f64>,
) -> Array2<f64> {
    let n = points.nrows();
    let delta = width.value;
    let mut grad_sq = Array2::<f64>::zeros((n, n));
    let mut grad_width = 0.0;
    for &(k, m) in &graph.edges {
        let a = graph.adjacency[[k, m]];
        let g = grad_adjacency[[k, m]] + grad_adjacency[[m, k]];
        let sq: f64 = points
            .row(k)
            .iter()
            .zip(points.row(m))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        grad_sq[[k, m]] += g * (-a / (2.0 * delta));
        grad_width += g * a * sq / (2.0 * delta * delta);
    }
    for &((k, m), share) in &width.sources {
        grad_sq[[k, m]] += share * grad_width;
    }

    let mut grad_points = Array2::zeros(points.raw_dim());
    for k in 0..n {
        for m in (k + 1)..n {
            let g = grad_sq[[k, m]];
            if g == 0.0 {
                continue;
            }
            for c in 0..points.ncols() {
                let diff = 2.0 * g * (points[[k, c]] - points[[m, c]]);
                grad_points[[k, c]] += diff;
                grad_points[[m, c]] -= diff;
            }
        }
    }
    grad_points
}
