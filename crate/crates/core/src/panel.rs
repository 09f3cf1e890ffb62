//! Rolling-horizon data model.
//!
//! A [`DialoguePanel`] holds, for each realization period, the forecasts issued
//! 1..=N periods ahead, the supplier responses issued 1..=M periods ahead and the
//! realized shipment. Rows are periods, columns are lags. Downstream analyses
//! consume the panel as an observation matrix whose columns follow the
//! chronological [`EventSequence`].

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: duplicate record for period {period}, event {event}")]
    Duplicate { line: u64, period: String, event: EventId },
    #[error("incomplete panel: missing value for period {period}, event {event}")]
    Incomplete { period: String, event: EventId },
    #[error("incomplete panel: {0}")]
    Empty(String),
    #[error("response horizon M={m} exceeds forecast horizon N={n}")]
    HorizonOrder { n: usize, m: usize },
    #[error("non-finite value for period {period}, event {event}")]
    NonFinite { period: String, event: EventId },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Forecast,
    Response,
    Shipment,
}

impl EventKind {
    pub fn code(self) -> char {
        match self {
            EventKind::Forecast => 'F',
            EventKind::Response => 'R',
            EventKind::Shipment => 'S',
        }
    }
}

/// One node of the information-flow network: a forecast or response issued
/// `lag` periods before realization, or the shipment itself (lag 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId {
    kind: EventKind,
    lag: usize,
}

impl EventId {
    pub fn forecast(lag: usize) -> Self {
        assert!(lag >= 1, "forecast lag must be at least 1");
        EventId {
            kind: EventKind::Forecast,
            lag,
        }
    }

    pub fn response(lag: usize) -> Self {
        assert!(lag >= 1, "response lag must be at least 1");
        EventId {
            kind: EventKind::Response,
            lag,
        }
    }

    pub fn shipment() -> Self {
        EventId {
            kind: EventKind::Shipment,
            lag: 0,
        }
    }

    /// Checked constructor used by parsers.
    pub fn new(kind: EventKind, lag: usize) -> Option<Self> {
        match (kind, lag) {
            (EventKind::Shipment, 0) => Some(Self::shipment()),
            (EventKind::Shipment, _) | (_, 0) => None,
            (kind, lag) => Some(EventId { kind, lag }),
        }
    }

    pub fn kind(&self) -> EventKind {
        self.kind
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    /// Subscripted form used in decomposition equations, e.g. `F_3` or `S`.
    pub fn subscripted(&self) -> String {
        match self.kind {
            EventKind::Shipment => "S".to_string(),
            kind => format!("{}_{}", kind.code(), self.lag),
        }
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EventKind::Shipment => f.write_str("S"),
            kind => write!(f, "{}{}", kind.code(), self.lag),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid event id {0:?}")]
pub struct ParseEventIdError(String);

impl FromStr for EventId {
    type Err = ParseEventIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseEventIdError(s.to_string());
        let s = s.trim();
        if s == "S" {
            return Ok(EventId::shipment());
        }
        let mut chars = s.chars();
        let kind = match chars.next() {
            Some('F') => EventKind::Forecast,
            Some('R') => EventKind::Response,
            _ => return Err(err()),
        };
        let rest = chars.as_str().trim_start_matches('_');
        let lag: usize = rest.parse().map_err(|_| err())?;
        EventId::new(kind, lag).ok_or_else(err)
    }
}

impl Serialize for EventId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EventId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Chronological ordering of all events of a panel with horizons (N, M).
///
/// Forecast lag N comes first; for each lag k from N down to 1 the forecast
/// precedes the response of the same lag (when k <= M); the shipment is last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct EventSequence {
    events: Vec<EventId>,
}

impl EventSequence {
    pub fn new(n: usize, m: usize) -> Self {
        let mut events = Vec::with_capacity(n + m + 1);
        for lag in (1..=n).rev() {
            events.push(EventId::forecast(lag));
            if lag <= m {
                events.push(EventId::response(lag));
            }
        }
        events.push(EventId::shipment());
        EventSequence { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[EventId] {
        &self.events
    }

    pub fn get(&self, index: usize) -> Option<EventId> {
        self.events.get(index).copied()
    }

    pub fn index_of(&self, event: EventId) -> Option<usize> {
        self.events.iter().position(|e| *e == event)
    }

    pub fn iter(&self) -> impl Iterator<Item = EventId> + '_ {
        self.events.iter().copied()
    }

    /// The sequence without its trailing shipment event.
    pub fn without_shipment(&self) -> EventSequence {
        EventSequence {
            events: self
                .events
                .iter()
                .copied()
                .filter(|e| e.kind() != EventKind::Shipment)
                .collect(),
        }
    }
}

/// Forecast, response and shipment observations for T realization periods.
#[derive(Debug, Clone, PartialEq)]
pub struct DialoguePanel {
    forecasts: DMatrix<f64>,
    responses: DMatrix<f64>,
    shipments: DVector<f64>,
    period_labels: Vec<String>,
}

impl DialoguePanel {
    /// Builds a panel, checking dimensions, `M <= N` and finiteness.
    ///
    /// `forecasts` is T x N with column j holding lag j+1; `responses` is T x M.
    pub fn new(
        period_labels: Vec<String>,
        forecasts: DMatrix<f64>,
        responses: DMatrix<f64>,
        shipments: DVector<f64>,
    ) -> Result<Self, PanelError> {
        let t = period_labels.len();
        if t == 0 {
            return Err(PanelError::Empty("no periods".into()));
        }
        if forecasts.nrows() != t || responses.nrows() != t || shipments.len() != t {
            return Err(PanelError::Shape(format!(
                "{} labels but forecasts/responses/shipments have {}/{}/{} rows",
                t,
                forecasts.nrows(),
                responses.nrows(),
                shipments.len()
            )));
        }
        let (n, m) = (forecasts.ncols(), responses.ncols());
        if n == 0 {
            return Err(PanelError::Empty("no forecast lags".into()));
        }
        if m == 0 {
            return Err(PanelError::Empty("no response lags".into()));
        }
        if m > n {
            return Err(PanelError::HorizonOrder { n, m });
        }
        let panel = DialoguePanel {
            forecasts,
            responses,
            shipments,
            period_labels,
        };
        for (row, label) in panel.period_labels.iter().enumerate() {
            for event in panel.event_sequence().iter() {
                if !panel.value(row, event).is_finite() {
                    return Err(PanelError::NonFinite {
                        period: label.clone(),
                        event,
                    });
                }
            }
        }
        Ok(panel)
    }

    pub fn periods(&self) -> usize {
        self.period_labels.len()
    }

    pub fn forecast_horizon(&self) -> usize {
        self.forecasts.ncols()
    }

    pub fn response_horizon(&self) -> usize {
        self.responses.ncols()
    }

    pub fn forecasts(&self) -> &DMatrix<f64> {
        &self.forecasts
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    pub fn shipments(&self) -> &DVector<f64> {
        &self.shipments
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    pub fn event_sequence(&self) -> EventSequence {
        EventSequence::new(self.forecast_horizon(), self.response_horizon())
    }

    /// Observation of `event` in period row `row`.
    ///
    /// Panics if the event lies outside the panel's horizons.
    pub fn value(&self, row: usize, event: EventId) -> f64 {
        match event.kind() {
            EventKind::Forecast => self.forecasts[(row, event.lag() - 1)],
            EventKind::Response => self.responses[(row, event.lag() - 1)],
            EventKind::Shipment => self.shipments[row],
        }
    }

    pub fn column(&self, event: EventId) -> DVector<f64> {
        DVector::from_fn(self.periods(), |row, _| self.value(row, event))
    }

    /// T x n matrix with columns in event-sequence order. Only real events are
    /// included; lags beyond M never get a placeholder response column.
    pub fn observation_matrix(&self, include_shipment: bool) -> DMatrix<f64> {
        let seq = if include_shipment {
            self.event_sequence()
        } else {
            self.event_sequence().without_shipment()
        };
        DMatrix::from_fn(self.periods(), seq.len(), |row, col| self.value(row, seq.events()[col]))
    }

    /// Applies `f(row, event, value)` to every cell, keeping labels and shape.
    pub fn try_map<E>(&self, mut f: impl FnMut(usize, EventId, f64) -> Result<f64, E>) -> Result<DialoguePanel, E> {
        let mut out = self.clone();
        for row in 0..self.periods() {
            for lag in 1..=self.forecast_horizon() {
                let e = EventId::forecast(lag);
                out.forecasts[(row, lag - 1)] = f(row, e, self.value(row, e))?;
            }
            for lag in 1..=self.response_horizon() {
                let e = EventId::response(lag);
                out.responses[(row, lag - 1)] = f(row, e, self.value(row, e))?;
            }
            out.shipments[row] = f(row, EventId::shipment(), self.shipments[row])?;
        }
        Ok(out)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, PanelError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Parses the long `period,kind,lag,value` format. Rows may appear in any
    /// order; periods are sorted by label.
    pub fn from_csv_reader<R: io::Read>(reader: R) -> Result<Self, PanelError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);

        let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
        let expected = ["period", "kind", "lag", "value"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(PanelError::Parse {
                line: 1,
                message: format!(
                    "expected header `period,kind,lag,value`, found `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }

        let mut cells: BTreeMap<String, BTreeMap<EventId, f64>> = BTreeMap::new();
        let (mut n, mut m) = (0usize, 0usize);
        for record in rdr.records() {
            let record = record.map_err(|e| csv_error(e, 0))?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let parse_err = |message: String| PanelError::Parse { line, message };
            if record.len() != 4 {
                return Err(parse_err(format!("expected 4 fields, found {}", record.len())));
            }
            let period = record[0].to_string();
            if period.is_empty() {
                return Err(parse_err("empty period label".into()));
            }
            let kind = match &record[1] {
                "F" => EventKind::Forecast,
                "R" => EventKind::Response,
                "S" => EventKind::Shipment,
                other => return Err(parse_err(format!("unknown kind {other:?}"))),
            };
            let lag: usize = record[2]
                .parse()
                .map_err(|_| parse_err(format!("invalid lag {:?}", &record[2])))?;
            let event = EventId::new(kind, lag)
                .ok_or_else(|| parse_err(format!("lag {lag} is not valid for kind {}", kind.code())))?;
            let value: f64 = record[3]
                .parse()
                .map_err(|_| parse_err(format!("invalid value {:?}", &record[3])))?;
            if !value.is_finite() {
                return Err(parse_err(format!("non-finite value {:?}", &record[3])));
            }
            match kind {
                EventKind::Forecast => n = n.max(lag),
                EventKind::Response => m = m.max(lag),
                EventKind::Shipment => {}
            }
            match cells.entry(period.clone()).or_default().entry(event) {
                Entry::Occupied(_) => return Err(PanelError::Duplicate { line, period, event }),
                Entry::Vacant(slot) => {
                    slot.insert(value);
                }
            }
        }

        if cells.is_empty() {
            return Err(PanelError::Empty("no records".into()));
        }
        if n == 0 {
            return Err(PanelError::Empty("no forecast records".into()));
        }
        if m == 0 {
            return Err(PanelError::Empty("no response records".into()));
        }
        if m > n {
            return Err(PanelError::HorizonOrder { n, m });
        }

        let t = cells.len();
        let seq = EventSequence::new(n, m);
        let mut forecasts = DMatrix::zeros(t, n);
        let mut responses = DMatrix::zeros(t, m);
        let mut shipments = DVector::zeros(t);
        let mut labels = Vec::with_capacity(t);
        for (row, (period, values)) in cells.into_iter().enumerate() {
            for event in seq.iter() {
                let value = *values.get(&event).ok_or_else(|| PanelError::Incomplete {
                    period: period.clone(),
                    event,
                })?;
                match event.kind() {
                    EventKind::Forecast => forecasts[(row, event.lag() - 1)] = value,
                    EventKind::Response => responses[(row, event.lag() - 1)] = value,
                    EventKind::Shipment => shipments[row] = value,
                }
            }
            labels.push(period);
        }
        DialoguePanel::new(labels, forecasts, responses, shipments)
    }

    /// Writes the panel in long format, one row per (period, event) in event
    /// order. Values use the shortest representation that parses back to the
    /// same `f64`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), PanelError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let io_err = |e: csv::Error| PanelError::Io(io::Error::other(e));
        wtr.write_record(["period", "kind", "lag", "value"]).map_err(io_err)?;
        let seq = self.event_sequence();
        for (row, label) in self.period_labels.iter().enumerate() {
            for event in seq.iter() {
                let value = self.value(row, event);
                wtr.write_record([
                    label.as_str(),
                    &event.kind().code().to_string(),
                    &event.lag().to_string(),
                    &format!("{value:?}"),
                ])
                .map_err(io_err)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), PanelError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(io::BufWriter::new(file))
    }
}

fn csv_error(e: csv::Error, fallback_line: u64) -> PanelError {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => PanelError::Io(io),
        kind => PanelError::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}
