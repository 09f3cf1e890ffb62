//! JSON payloads consumed by the browser client.

use flownet_core::decompose::{EventDecomposition, InformationFlowNetwork, NetworkMetadata};
use flownet_core::{EventId, EventKind};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventNode {
    pub id: EventId,
    pub label: String,
    pub kind: &'static str,
    pub lag: usize,
    /// Position of the event on the time-line (its index in event order).
    pub x_time: usize,
    /// `top` for forecasts, `bottom` for responses, `right` for the shipment.
    pub hemisphere: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgePayload {
    pub from: EventId,
    pub to: EventId,
    pub coefficient: f64,
    pub partial_correlation: f64,
    /// `positive` or `negative`, from the coefficient.
    pub sign: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkPayload<'a> {
    pub lambda: f64,
    /// Box-Cox exponent applied before the analysis; `null` for raw data.
    pub gamma: Option<f64>,
    pub events: Vec<EventNode>,
    pub edges: Vec<EdgePayload>,
    pub decompositions: &'a [EventDecomposition],
    pub markov_score: f64,
    pub metadata: &'a NetworkMetadata,
}

fn node(index: usize, id: EventId) -> EventNode {
    let (kind, hemisphere) = match id.kind() {
        EventKind::Forecast => ("forecast", "top"),
        EventKind::Response => ("response", "bottom"),
        EventKind::Shipment => ("shipment", "right"),
    };
    EventNode {
        id,
        label: id.subscripted(),
        kind,
        lag: id.lag(),
        x_time: index,
        hemisphere,
    }
}

impl<'a> NetworkPayload<'a> {
    pub fn new(network: &'a InformationFlowNetwork, gamma: Option<f64>) -> Self {
        NetworkPayload {
            lambda: network.lambda,
            gamma,
            events: network.events.iter().enumerate().map(|(i, e)| node(i, e)).collect(),
            edges: network
                .edges
                .iter()
                .map(|e| EdgePayload {
                    from: e.from,
                    to: e.to,
                    coefficient: e.coefficient,
                    partial_correlation: e.partial_correlation,
                    sign: if e.coefficient < 0.0 { "negative" } else { "positive" },
                })
                .collect(),
            decompositions: &network.decompositions,
            markov_score: network.markov_score,
            metadata: &network.metadata,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetCreated {
    pub id: String,
    pub periods: usize,
    pub forecast_horizon: usize,
    pub response_horizon: usize,
}
