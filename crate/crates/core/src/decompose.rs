//! Information decomposition over the selected network.
//!
//! Each event is regressed, without intercept, on the events that have an
//! edge into it. The coefficients say how much of the event is carried over
//! from each earlier event; the remainder is new information.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::ewggm::{expanding_window_with, select_edges, DirectedEdgeSet, EwggmError, InformationFlowMatrix};
use crate::glasso::GlassoOptions;
use crate::linalg::least_squares;
use crate::panel::{DialoguePanel, EventId, EventKind, EventSequence};
use crate::preprocess::{standardize_columns, PreprocessError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecomposeError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Ewggm(#[from] EwggmError),
    #[error("regression of {event} is rank deficient: {offending} is collinear with {}", list(.sources))]
    RankDeficient {
        event: EventId,
        offending: EventId,
        sources: Vec<EventId>,
    },
    #[error("event index {index} out of range for {len} events")]
    EventIndex { index: usize, len: usize },
}

fn list(events: &[EventId]) -> String {
    events.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Term {
    pub source: EventId,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DecompositionFlags {
    /// Some coefficient is negative, so shares cannot be read as percentages.
    pub negative_coefficient: bool,
    /// Coefficients sum above one, so the new-information share is negative.
    pub sum_exceeds_one: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventDecomposition {
    pub event: EventId,
    pub terms: Vec<Term>,
    /// `1 - sum(coefficients)`.
    pub epsilon_share: f64,
    /// `1 - sum(|coefficients|)`.
    pub epsilon_share_abs: f64,
    pub r_squared: f64,
    pub flags: DecompositionFlags,
    pub equation: String,
}

impl EventDecomposition {
    fn from_terms(event: EventId, terms: Vec<Term>, r_squared: f64) -> Self {
        let sum: f64 = terms.iter().map(|t| t.coefficient).sum();
        let sum_abs: f64 = terms.iter().map(|t| t.coefficient.abs()).sum();
        let flags = DecompositionFlags {
            negative_coefficient: terms.iter().any(|t| t.coefficient < 0.0),
            sum_exceeds_one: sum > 1.0,
        };
        let equation = equation(event, &terms);
        EventDecomposition {
            event,
            terms,
            epsilon_share: 1.0 - sum,
            epsilon_share_abs: 1.0 - sum_abs,
            r_squared,
            flags,
            equation,
        }
    }

    pub fn coefficient(&self, source: EventId) -> Option<f64> {
        self.terms.iter().find(|t| t.source == source).map(|t| t.coefficient)
    }
}

/// Two decimals with trailing zeros trimmed, keeping at least one digit
/// after the point.
fn format_coefficient(c: f64) -> String {
    let mut s = format!("{:.2}", c.abs());
    if s.ends_with('0') {
        s.pop();
    }
    s
}

/// Renders e.g. `F_1=0.5F_2+0.4F_4+ε`.
pub fn equation(event: EventId, terms: &[Term]) -> String {
    let mut out = format!("{}=", event.subscripted());
    for (i, t) in terms.iter().enumerate() {
        if t.coefficient < 0.0 {
            out.push('-');
        } else if i > 0 {
            out.push('+');
        }
        out.push_str(&format_coefficient(t.coefficient));
        out.push_str(&t.source.subscripted());
    }
    out.push_str(if terms.is_empty() { "ε" } else { "+ε" });
    out
}

/// Least squares of column `k` of `x` on the columns with an edge into `k`.
///
/// `x` must be standardized; no intercept is fitted.
pub fn decompose_event(
    x: &DMatrix<f64>,
    edges: &DirectedEdgeSet,
    k: usize,
    events: &EventSequence,
) -> Result<EventDecomposition, DecomposeError> {
    let event = events.get(k).ok_or(DecomposeError::EventIndex {
        index: k,
        len: events.len(),
    })?;
    let sources = edges.sources_of(k);
    let y = x.column(k).into_owned();
    let tss = y.norm_squared();
    if sources.is_empty() {
        return Ok(EventDecomposition::from_terms(event, Vec::new(), 0.0));
    }
    let a = x.select_columns(&sources);
    let beta = least_squares(&a, &y).map_err(|j| DecomposeError::RankDeficient {
        event,
        offending: events.get(sources[j.min(sources.len() - 1)]).unwrap_or(event),
        sources: sources.iter().filter_map(|&i| events.get(i)).collect(),
    })?;
    let residual: DVector<f64> = &y - &a * &beta;
    let r_squared = if tss > 0.0 {
        (1.0 - residual.norm_squared() / tss).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let terms = sources
        .iter()
        .zip(beta.iter())
        .map(|(&i, &c)| Term {
            source: events.get(i).expect("edge source within sequence"),
            coefficient: c,
        })
        .collect();
    Ok(EventDecomposition::from_terms(event, terms, r_squared))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetworkEdge {
    pub from: EventId,
    pub to: EventId,
    pub coefficient: f64,
    pub partial_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkMetadata {
    pub standardization: &'static str,
    pub markov_score: &'static str,
}

const METADATA: NetworkMetadata = NetworkMetadata {
    standardization: "columns scaled to mean 0 and sample standard deviation 1 (denominator T-1)",
    markov_score:
        "invented summary: share of absolute coefficient mass on edges from the latest preceding forecast and response",
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InformationFlowNetwork {
    pub events: EventSequence,
    pub edges: Vec<NetworkEdge>,
    pub decompositions: Vec<EventDecomposition>,
    pub lambda: f64,
    pub markov_score: f64,
    pub metadata: NetworkMetadata,
    #[serde(skip)]
    pub flow: InformationFlowMatrix,
}

impl InformationFlowNetwork {
    pub fn decomposition(&self, event: EventId) -> Option<&EventDecomposition> {
        self.decompositions.iter().find(|d| d.event == event)
    }

    pub fn edge(&self, from: EventId, to: EventId) -> Option<&NetworkEdge> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }
}

pub fn decompose_network(panel: &DialoguePanel, lambda: f64) -> Result<InformationFlowNetwork, DecomposeError> {
    decompose_network_with(panel, lambda, &GlassoOptions::default())
}

/// Standardizes the panel, selects edges with the expanding-window GGM and
/// decomposes every event after the first.
pub fn decompose_network_with(
    panel: &DialoguePanel,
    lambda: f64,
    opts: &GlassoOptions,
) -> Result<InformationFlowNetwork, DecomposeError> {
    let events = panel.event_sequence();
    let (x, _) = standardize_columns(&panel.observation_matrix(true), Some(events.events()))?;
    let flow = expanding_window_with(&x, lambda, opts)?;
    let selected = select_edges(&flow);
    let decompositions = (1..events.len())
        .into_par_iter()
        .map(|k| decompose_event(&x, &selected, k, &events))
        .collect::<Result<Vec<_>, _>>()?;

    let edges = selected
        .iter()
        .map(|e| {
            let to = events.events()[e.to];
            let from = events.events()[e.from];
            let coefficient = decompositions[e.to - 1]
                .coefficient(from)
                .expect("every selected edge is a regression term");
            NetworkEdge {
                from,
                to,
                coefficient,
                partial_correlation: e.partial_correlation,
            }
        })
        .collect::<Vec<_>>();
    let markov_score = markov_score_of(&events, &edges);
    Ok(InformationFlowNetwork {
        events,
        edges,
        decompositions,
        lambda,
        markov_score,
        metadata: METADATA,
        flow,
    })
}

/// Latest forecast and latest response strictly before position `k`.
pub fn markov_sources(events: &EventSequence, k: usize) -> (Option<EventId>, Option<EventId>) {
    let before = &events.events()[..k.min(events.len())];
    let latest = |kind| before.iter().rev().find(|e| e.kind() == kind).copied();
    (latest(EventKind::Forecast), latest(EventKind::Response))
}

fn markov_score_of(events: &EventSequence, edges: &[NetworkEdge]) -> f64 {
    let mut total = 0.0;
    let mut markov = 0.0;
    for e in edges {
        let k = events.index_of(e.to).expect("edge target in sequence");
        let (f, r) = markov_sources(events, k);
        let mass = e.coefficient.abs();
        total += mass;
        if Some(e.from) == f || Some(e.from) == r {
            markov += mass;
        }
    }
    if total > 0.0 {
        markov / total
    } else {
        1.0
    }
}

/// Share of absolute coefficient mass carried by edges from each target's
/// latest preceding forecast and response; 1.0 for an empty network.
pub fn markov_score(network: &InformationFlowNetwork) -> f64 {
    markov_score_of(&network.events, &network.edges)
}
