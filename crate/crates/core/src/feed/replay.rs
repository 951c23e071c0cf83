use std::io::BufRead;

use super::wire::parse_event;
use super::{FeedError, OrderEvent};

/// Outcome of a completed replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplaySummary {
    pub count: u64,
    pub first_timestamp_ms: Option<i64>,
    pub last_timestamp_ms: Option<i64>,
}

/// Checks stream ordering one event at a time.
#[derive(Debug, Default, Clone)]
pub struct OrderCheck {
    last: Option<(u64, i64)>,
}

impl OrderCheck {
    pub fn check(&mut self, ev: &OrderEvent, line: u64) -> Result<(), FeedError> {
        if let Some((seq, ts)) = self.last {
            if ev.seq <= seq || ev.timestamp_ms < ts {
                return Err(FeedError::OutOfOrder {
                    line,
                    seq: ev.seq,
                    previous: seq,
                });
            }
        }
        self.last = Some((ev.seq, ev.timestamp_ms));
        Ok(())
    }
}

/// Parses `lines` in order and hands every event to `sink`.
///
/// Stops at the first parse error, ordering violation or sink error. Line
/// numbers in errors are 1-based. Empty lines are not records and are
/// rejected like any other malformed line.
pub fn replay<I, S, E>(lines: I, mut sink: S) -> Result<ReplaySummary, E>
where
    I: IntoIterator,
    I::Item: AsRef<str>,
    S: FnMut(OrderEvent) -> Result<(), E>,
    E: From<FeedError>,
{
    let mut summary = ReplaySummary::default();
    let mut order = OrderCheck::default();
    for (idx, line) in lines.into_iter().enumerate() {
        let line_no = idx as u64 + 1;
        let ev = parse_event(line.as_ref()).map_err(|e| FeedError::AtLine {
            line: line_no,
            source: Box::new(e),
        })?;
        order.check(&ev, line_no)?;
        summary.first_timestamp_ms.get_or_insert(ev.timestamp_ms);
        summary.last_timestamp_ms = Some(ev.timestamp_ms);
        summary.count += 1;
        sink(ev)?;
    }
    Ok(summary)
}

/// Reads and validates a whole `.ofr` stream into memory.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<OrderEvent>, FeedError> {
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| FeedError::Io {
            line: idx as u64 + 1,
            message: e.to_string(),
        })?;
        lines.push(line);
    }
    let mut events = Vec::with_capacity(lines.len());
    replay(lines, |ev| {
        events.push(ev);
        Ok::<(), FeedError>(())
    })?;
    Ok(events)
}

/// Serializes events as newline-terminated canonical records.
pub fn write_events<W: std::io::Write>(mut out: W, events: &[OrderEvent]) -> std::io::Result<()> {
    for ev in events {
        out.write_all(super::serialize_event(ev).as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
