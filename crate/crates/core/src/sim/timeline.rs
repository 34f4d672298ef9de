//! Event log of a trial and its CSV form
//! `t_start,t_end,arm,action,target,outcome`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::model::{Layer, PartId};
use crate::sequencer::ActionKind;

use super::faults::FaultKind;

/// Simulated time in ticks of the fixed loop rate.
pub type Ticks = u64;

#[derive(Debug, Error)]
pub enum TimelineError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: bad {field} {value:?}")]
    Field { row: usize, field: &'static str, value: String },
    #[error("row {row}: t_end before t_start")]
    Reversed { row: usize },
    #[error("unexpected header {0:?}")]
    Header(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clock {
    pub ticks_per_second: u32,
}

impl Clock {
    pub fn new(ticks_per_second: u32) -> Self {
        assert!(ticks_per_second > 0);
        Clock { ticks_per_second }
    }

    /// Duration in ticks, rounded up to the next tick boundary.
    pub fn ticks(&self, seconds: f64) -> Ticks {
        let raw = seconds * self.ticks_per_second as f64;
        // absorb representation error before rounding up
        (raw - 1e-9).ceil().max(0.0) as Ticks
    }

    pub fn seconds(&self, t: Ticks) -> f64 {
        t as f64 / self.ticks_per_second as f64
    }

    /// Exact decimal rendering for power-of-ten tick rates.
    pub fn format(&self, t: Ticks) -> String {
        let tps = self.ticks_per_second as u64;
        match decimal_digits(tps) {
            Some(0) => t.to_string(),
            Some(d) => format!("{}.{:0width$}", t / tps, t % tps, width = d),
            None => format!("{}", self.seconds(t)),
        }
    }

    pub fn parse(&self, s: &str) -> Option<Ticks> {
        let v: f64 = s.parse().ok()?;
        if !(v >= 0.0 && v.is_finite()) {
            return None;
        }
        Some((v * self.ticks_per_second as f64).round() as Ticks)
    }
}

fn decimal_digits(mut tps: u64) -> Option<usize> {
    let mut d = 0;
    while tps > 1 {
        if !tps.is_multiple_of(10) {
            return None;
        }
        tps /= 10;
        d += 1;
    }
    Some(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Move,
    Align,
    Engage,
    Operate,
    Carry,
    Release,
    Hold,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Move => "move",
            Phase::Align => "align",
            Phase::Engage => "engage",
            Phase::Operate => "operate",
            Phase::Carry => "carry",
            Phase::Release => "release",
            Phase::Hold => "hold",
        }
    }
}

impl FromStr for Phase {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "move" => Phase::Move,
            "align" => Phase::Align,
            "engage" => Phase::Engage,
            "operate" => Phase::Operate,
            "carry" => Phase::Carry,
            "release" => Phase::Release,
            "hold" => Phase::Hold,
            _ => return Err(()),
        })
    }
}

/// What an event belongs to: an arm action or the device flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Action(ActionKind),
    Flip,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Action(k) => f.pad(k.as_str()),
            Task::Flip => f.pad("flip"),
        }
    }
}

impl FromStr for Task {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "unscrew" => Task::Action(ActionKind::Unscrew),
            "lift" => Task::Action(ActionKind::Lift),
            "remove" => Task::Action(ActionKind::Remove),
            "drop" => Task::Action(ActionKind::Drop),
            "hold" => Task::Action(ActionKind::Hold),
            "flip" => Task::Flip,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Success,
    EngageFail,
    Fault(FaultKind),
    Abandoned,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Success => f.pad("success"),
            Outcome::EngageFail => f.pad("engage_fail"),
            Outcome::Fault(k) => write!(f, "fault({})", k.as_str()),
            Outcome::Abandoned => f.pad("abandoned"),
        }
    }
}

impl FromStr for Outcome {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "success" => Ok(Outcome::Success),
            "engage_fail" => Ok(Outcome::EngageFail),
            "abandoned" => Ok(Outcome::Abandoned),
            _ => {
                let name = s.strip_prefix("fault(").and_then(|r| r.strip_suffix(')')).ok_or(())?;
                Ok(Outcome::Fault(name.parse()?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub t_start: Ticks,
    pub t_end: Ticks,
    pub arm: String,
    pub task: Task,
    pub phase: Phase,
    pub target: Option<PartId>,
    pub layer: Layer,
    pub outcome: Outcome,
}

impl SimEvent {
    pub fn record(&self, clock: &Clock) -> EventRecord {
        EventRecord {
            t_start: clock.format(self.t_start),
            t_end: clock.format(self.t_end),
            arm: self.arm.clone(),
            action: format!("{}:{}", self.task, self.phase.as_str()),
            target: self.target.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
            outcome: self.outcome.to_string(),
        }
    }
}

/// One CSV row as text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub t_start: String,
    pub t_end: String,
    pub arm: String,
    pub action: String,
    pub target: String,
    pub outcome: String,
}

/// A CSV row decoded back into typed fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedEvent {
    pub t_start: Ticks,
    pub t_end: Ticks,
    pub arm: String,
    pub task: Task,
    pub phase: Phase,
    pub target: Option<PartId>,
    pub outcome: Outcome,
}

pub const CSV_HEADER: [&str; 6] = ["t_start", "t_end", "arm", "action", "target", "outcome"];

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub clock: Clock,
    pub events: Vec<SimEvent>,
    /// End of the last event of each layer, cumulative so boundaries never
    /// move backwards.
    pub layer_boundaries: [Ticks; 3],
    pub total: Ticks,
}

impl Timeline {
    /// Sorts events by start time (stable) and derives layer boundaries.
    pub fn new(clock: Clock, mut events: Vec<SimEvent>) -> Self {
        events.sort_by_key(|e| e.t_start);
        let mut last = [0; 3];
        for e in &events {
            let i = e.layer.index();
            last[i] = last[i].max(e.t_end);
        }
        let mut layer_boundaries = [0; 3];
        let mut acc = 0;
        for i in 0..3 {
            acc = acc.max(last[i]);
            layer_boundaries[i] = acc;
        }
        let total = events.iter().map(|e| e.t_end).max().unwrap_or(0);
        Timeline {
            clock,
            events,
            layer_boundaries,
            total,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn layer_ticks(&self, layer: Layer) -> Ticks {
        let i = layer.index();
        let prev = if i == 0 { 0 } else { self.layer_boundaries[i - 1] };
        self.layer_boundaries[i] - prev
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TimelineError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for e in &self.events {
            let r = e.record(&self.clock);
            w.write_record([&r.t_start, &r.t_end, &r.arm, &r.action, &r.target, &r.outcome])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<EventRecord>, TimelineError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let fields: Vec<&str> = rec.iter().collect();
        if i == 0 {
            if fields != CSV_HEADER {
                return Err(TimelineError::Header(fields.join(",")));
            }
            continue;
        }
        if fields.len() != 6 {
            return Err(TimelineError::Field {
                row: i,
                field: "row",
                value: fields.join(","),
            });
        }
        out.push(EventRecord {
            t_start: fields[0].into(),
            t_end: fields[1].into(),
            arm: fields[2].into(),
            action: fields[3].into(),
            target: fields[4].into(),
            outcome: fields[5].into(),
        });
    }
    Ok(out)
}

pub fn write_records<W: Write>(writer: W, records: &[EventRecord]) -> Result<(), TimelineError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([&r.t_start, &r.t_end, &r.arm, &r.action, &r.target, &r.outcome])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

impl EventRecord {
    pub fn parse(&self, clock: &Clock, row: usize) -> Result<ParsedEvent, TimelineError> {
        let bad = |field: &'static str, value: &str| TimelineError::Field {
            row,
            field,
            value: value.to_owned(),
        };
        let t_start = clock.parse(&self.t_start).ok_or_else(|| bad("t_start", &self.t_start))?;
        let t_end = clock.parse(&self.t_end).ok_or_else(|| bad("t_end", &self.t_end))?;
        if t_end < t_start {
            return Err(TimelineError::Reversed { row });
        }
        let (task, phase) = self.action.split_once(':').ok_or_else(|| bad("action", &self.action))?;
        let task: Task = task.parse().map_err(|_| bad("action", &self.action))?;
        let phase: Phase = phase.parse().map_err(|_| bad("action", &self.action))?;
        let target = match self.target.as_str() {
            "-" => None,
            t => Some(PartId(
                t.strip_prefix('n')
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| bad("target", t))?,
            )),
        };
        let outcome = self.outcome.parse().map_err(|_| bad("outcome", &self.outcome))?;
        Ok(ParsedEvent {
            t_start,
            t_end,
            arm: self.arm.clone(),
            task,
            phase,
            target,
            outcome,
        })
    }
}
