//! Expanding-window Gaussian graphical model.
//!
//! Events are ordered in time, so the dependence between two events should
//! be measured conditionally on what happened up to the later of the two and
//! never on later events. For every prefix `1..=k` of the event order a
//! graphical lasso is solved on the prefix covariance; its last column gives
//! the partial correlations of event `k` with each earlier event. Stacking
//! those columns yields the time-respecting matrix `C'`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::glasso::{
    self, empirical_covariance, graphical_lasso_with, partial_correlations, GlassoError, GlassoOptions,
    PartialCorrelationMatrix,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EwggmError {
    #[error("need at least two events, got {0}")]
    TooFewEvents(usize),
    #[error("window {window}: {source}")]
    Window {
        window: usize,
        #[source]
        source: GlassoError,
    },
    #[error(transparent)]
    Glasso(#[from] GlassoError),
}

/// Time-respecting partial correlations. Entry `(i, k)` with `i < k` is the
/// partial correlation of events `i` and `k` given all events before `k`;
/// storage is symmetric with a unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InformationFlowMatrix {
    #[serde(serialize_with = "serialize_dense")]
    entries: DMatrix<f64>,
    lambda: f64,
    #[serde(skip)]
    window_traces: Vec<Vec<f64>>,
}

fn serialize_dense<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    glasso::DenseMatrix::from(m.clone()).serialize(s)
}

impl InformationFlowMatrix {
    pub fn from_entries(entries: DMatrix<f64>, lambda: f64) -> Self {
        assert!(entries.is_square());
        InformationFlowMatrix {
            entries,
            lambda,
            window_traces: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.entries[(i, k)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Per-window objective traces, indexed by window size minus two.
    /// Empty unless the solver ran with tracing enabled.
    pub fn window_traces(&self) -> &[Vec<f64>] {
        &self.window_traces
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectedEdge {
    pub from: usize,
    pub to: usize,
    pub partial_correlation: f64,
}

/// Edges between events, always pointing forward in time.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DirectedEdgeSet {
    edges: Vec<DirectedEdge>,
}

impl DirectedEdgeSet {
    /// Builds an edge set from `(from, to, partial_correlation)` triples.
    /// Panics on a backward or self edge or a zero weight.
    pub fn new(edges: impl IntoIterator<Item = DirectedEdge>) -> Self {
        let mut edges: Vec<DirectedEdge> = edges.into_iter().collect();
        for e in &edges {
            assert!(e.from < e.to, "edge {} -> {} is not time-respecting", e.from, e.to);
            assert!(
                e.partial_correlation != 0.0,
                "edge {} -> {} has zero weight",
                e.from,
                e.to
            );
        }
        edges.sort_by_key(|e| (e.to, e.from));
        DirectedEdgeSet { edges }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DirectedEdge> {
        self.edges.iter()
    }

    /// Sources of incoming edges of `to`, in increasing order.
    pub fn sources_of(&self, to: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.to == to).map(|e| e.from).collect()
    }

    pub fn contains(&self, from: usize, to: usize) -> bool {
        self.edges.iter().any(|e| e.from == from && e.to == to)
    }

    pub fn without(&self, from: usize, to: usize) -> DirectedEdgeSet {
        DirectedEdgeSet {
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|e| !(e.from == from && e.to == to))
                .collect(),
        }
    }
}

pub fn expanding_window(x: &DMatrix<f64>, lambda: f64) -> Result<InformationFlowMatrix, EwggmError> {
    expanding_window_with(x, lambda, &GlassoOptions::default())
}

/// Runs one graphical lasso per prefix window `k = 2..=n` and assembles `C'`.
///
/// Windows are independent (no warm starts) and are solved in parallel; the
/// result does not depend on scheduling. Errors report the 1-based window size.
pub fn expanding_window_with(
    x: &DMatrix<f64>,
    lambda: f64,
    opts: &GlassoOptions,
) -> Result<InformationFlowMatrix, EwggmError> {
    let n = x.ncols();
    if n < 2 {
        return Err(EwggmError::TooFewEvents(n));
    }
    let s = empirical_covariance(x)?;
    let windows: Vec<Result<(PartialCorrelationMatrix, Vec<f64>), EwggmError>> = (2..=n)
        .into_par_iter()
        .map(|k| {
            let wrap = |source| EwggmError::Window { window: k, source };
            let theta = graphical_lasso_with(&s.leading(k), lambda, opts).map_err(wrap)?;
            let trace = theta.objective_trace().to_vec();
            Ok((partial_correlations(&theta).map_err(wrap)?, trace))
        })
        .collect();

    let mut entries = DMatrix::identity(n, n);
    let mut window_traces = Vec::with_capacity(n - 1);
    for (offset, window) in windows.into_iter().enumerate() {
        let (c, trace) = window?;
        let k = offset + 1;
        for i in 0..k {
            let v = c.get(i, k);
            entries[(i, k)] = v;
            entries[(k, i)] = v;
        }
        window_traces.push(trace);
    }
    if !opts.trace {
        window_traces.clear();
    }
    Ok(InformationFlowMatrix {
        entries,
        lambda,
        window_traces,
    })
}

/// One edge `i -> k` for every nonzero entry above the diagonal. The solver
/// emits exact zeros, so no further threshold is applied.
pub fn select_edges(c: &InformationFlowMatrix) -> DirectedEdgeSet {
    let n = c.len();
    let mut edges = Vec::new();
    for k in 0..n {
        for i in 0..k {
            let v = c.get(i, k);
            if v != 0.0 {
                edges.push(DirectedEdge {
                    from: i,
                    to: k,
                    partial_correlation: v,
                });
            }
        }
    }
    DirectedEdgeSet::new(edges)
}

/// Classical single-window GGM on all columns, for comparison with the
/// expanding-window estimate.
pub fn full_window_ggm(x: &DMatrix<f64>, lambda: f64) -> Result<PartialCorrelationMatrix, EwggmError> {
    let s = empirical_covariance(x)?;
    let theta = graphical_lasso_with(&s, lambda, &GlassoOptions::default())?;
    Ok(partial_correlations(&theta)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::standardize_columns;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn chain(t: usize, noise_sd: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(t, 3);
        for r in 0..t {
            let a: f64 = rng.sample(StandardNormal);
            let b = 0.9 * a + noise_sd * rng.sample::<f64, _>(StandardNormal);
            let c = 0.9 * b + noise_sd * rng.sample::<f64, _>(StandardNormal);
            x[(r, 0)] = a;
            x[(r, 1)] = b;
            x[(r, 2)] = c;
        }
        standardize_columns(&x, None).unwrap().0
    }

    #[test]
    fn independent_pair_is_disconnected() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let x = DMatrix::from_fn(1000, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = standardize_columns(&x, None).unwrap().0;
        let c = expanding_window(&x, 0.3).unwrap();
        assert_eq!(c.get(0, 1), 0.0);
        assert!(select_edges(&c).is_empty());
    }

    #[test]
    fn planted_chain_recovered() {
        let x = chain(500, 3.0, 32);
        let c = expanding_window(&x, 0.1).unwrap();
        assert_ne!(c.get(0, 1), 0.0);
        assert_ne!(c.get(1, 2), 0.0);
        assert_eq!(c.get(0, 2), 0.0);
        let edges = select_edges(&c);
        let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.from, e.to)).collect();
        assert_eq!(pairs, [(0, 1), (1, 2)]);
        // Nonzero entries agree in sign with the unpenalized regression route.
        for (i, k) in [(0, 1), (1, 2)] {
            let reg = glasso::partial_correlation_via_regression(&x.columns(0, k + 1).into_owned(), i, k).unwrap();
            assert_eq!(reg.signum(), c.get(i, k).signum());
            assert!(c.get(i, k).abs() <= reg.abs() + 1e-9);
        }
    }

    #[test]
    fn full_shrinkage_is_empty() {
        let x = chain(200, 0.5, 33);
        for lambda in [1.0, 1.2] {
            let c = expanding_window(&x, lambda).unwrap();
            assert!(select_edges(&c).is_empty());
        }
    }

    #[test]
    fn dense_matrix_gives_all_forward_edges() {
        let c = InformationFlowMatrix::from_entries(DMatrix::from_element(4, 4, 0.5), 0.0);
        let edges = select_edges(&c);
        assert_eq!(edges.len(), 6);
        assert!(edges.iter().all(|e| e.from < e.to));
        let empty = InformationFlowMatrix::from_entries(DMatrix::identity(4, 4), 0.0);
        assert!(select_edges(&empty).is_empty());
    }

    #[test]
    fn window_consistency_is_bit_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(34);
        let mut x = DMatrix::from_fn(120, 7, |_, _| rng.sample::<f64, _>(StandardNormal));
        for j in 1..7 {
            let prev = x.column(j - 1).into_owned();
            let mut col = x.column_mut(j);
            col += prev * 0.7;
        }
        let x = standardize_columns(&x, None).unwrap().0;
        let full = expanding_window(&x, 0.15).unwrap();
        for k in 2..7 {
            let part = expanding_window(&x.columns(0, k).into_owned(), 0.15).unwrap();
            for i in 0..k {
                for j in 0..k {
                    assert_eq!(part.get(i, j).to_bits(), full.get(i, j).to_bits());
                }
            }
        }
    }

    #[test]
    fn edge_count_non_increasing_in_lambda() {
        let x = chain(300, 1.0, 35);
        let mut prev = usize::MAX;
        for step in 0..20 {
            let lambda = 0.05 * step as f64;
            let count = select_edges(&expanding_window(&x, lambda).unwrap()).len();
            assert!(count <= prev);
            prev = count;
        }
    }

    #[test]
    fn lambda_zero_needs_enough_rows() {
        let mut rng = ChaCha20Rng::seed_from_u64(36);
        let x = DMatrix::from_fn(4, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        match expanding_window(&x, 0.0) {
            Err(EwggmError::Window {
                window,
                source: GlassoError::Singular { .. },
            }) => assert!(window >= 4),
            other => panic!("{other:?}"),
        }
        assert!(expanding_window(&x, 0.3).is_ok());
    }

    #[test]
    fn future_confounder_does_not_leak_backwards() {
        let base = chain(500, 1.0, 37);
        let mut rng = ChaCha20Rng::seed_from_u64(38);
        let mut x = base.clone().insert_column(3, 0.0);
        for r in 0..x.nrows() {
            // A later event driven by both early events: conditioning on it
            // couples them.
            x[(r, 3)] = x[(r, 0)] - x[(r, 1)] + 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let x = standardize_columns(&x, None).unwrap().0;
        let ew_before = expanding_window(&base, 0.05).unwrap();
        let ew_after = expanding_window(&x, 0.05).unwrap();
        assert_eq!(ew_before.get(0, 1).to_bits(), ew_after.get(0, 1).to_bits());
        let full_before = full_window_ggm(&base, 0.05).unwrap();
        let full_after = full_window_ggm(&x, 0.05).unwrap();
        assert!((full_before.get(0, 1) - full_after.get(0, 1)).abs() > 0.05);
    }

    #[test]
    fn single_event_rejected() {
        assert_eq!(
            expanding_window(&DMatrix::zeros(10, 1), 0.1),
            Err(EwggmError::TooFewEvents(1))
        );
    }
}
