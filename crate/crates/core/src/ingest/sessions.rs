use std::collections::HashSet;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::sessiongraph::Session;

/// Parsed sessions plus how many needed their events re-sorted.
#[derive(Clone, Debug, Default)]
pub struct SessionLog {
    pub sessions: Vec<Session>,
    pub resorted: usize,
}

pub fn load_sessions(path: &Path) -> Result<SessionLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sessions(&text).map_err(|e| match e {
        Error::Ingest(msg) => Error::Ingest(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses JSON-lines session records. Blank lines are ignored.
pub fn parse_sessions(text: &str) -> Result<SessionLog> {
    let mut log = SessionLog::default();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut s: Session = serde_json::from_str(line)
            .map_err(|e| Error::Ingest(format!("line {}: {e}", lineno + 1)))?;
        if !seen.insert(s.session_id.clone()) {
            return Err(Error::Ingest(format!(
                "line {}: duplicate session_id {}",
                lineno + 1,
                s.session_id
            )));
        }
        if s.events.windows(2).any(|w| w[1].ts < w[0].ts) {
            s.events.sort_by_key(|e| e.ts);
            log.resorted += 1;
        }
        log.sessions.push(s);
    }
    if log.resorted > 0 {
        warn!("{} sessions had out-of-order timestamps and were re-sorted", log.resorted);
    }
    Ok(log)
}

/// Anything carrying the timestamp that decides its side of the split.
pub trait SplitTimestamp {
    fn split_ts(&self) -> i64;
}

impl SplitTimestamp for Session {
    fn split_ts(&self) -> i64 {
        self.last_ts().unwrap_or(i64::MIN)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSplit<S> {
    pub train: Vec<S>,
    pub test: Vec<S>,
    /// Sessions at or after this timestamp are test sessions.
    pub boundary: i64,
}

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Sessions within the last `boundary_days` days (relative to the newest
/// session) become the test split.
pub fn time_split<S: SplitTimestamp>(sessions: Vec<S>, boundary_days: i64) -> Result<TimeSplit<S>> {
    let max_ts = sessions
        .iter()
        .map(SplitTimestamp::split_ts)
        .max()
        .ok_or_else(|| Error::Config("cannot split an empty session list".into()))?;
    let boundary = max_ts - boundary_days * SECONDS_PER_DAY;
    let (test, train): (Vec<S>, Vec<S>) = sessions.into_iter().partition(|s| s.split_ts() >= boundary);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "time split with a {boundary_days}-day boundary leaves {} train and {} test sessions",
            train.len(),
            test.len()
        )));
    }
    Ok(TimeSplit { train, test, boundary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sessiongraph::Event;

    fn sess(id: &str, ts: &[i64]) -> Session {
        Session {
            session_id: id.into(),
            events: ts
                .iter()
                .enumerate()
                .map(|(i, &t)| Event {
                    item: format!("i{i}"),
                    ts: t,
                })
                .collect(),
        }
    }

    #[test]
    fn empty_and_two_line_files() {
        assert!(parse_sessions("").unwrap().sessions.is_empty());
        let text = r#"{"session_id":"a","events":[{"item":"x","ts":1},{"item":"y","ts":2}]}
{"session_id":"b","events":[{"item":"y","ts":3}]}
"#;
        assert_eq!(parse_sessions(text).unwrap().sessions.len(), 2);
    }

    #[test]
    fn missing_timestamp_names_line() {
        let text = r#"{"session_id":"a","events":[{"item":"x","ts":1}]}
{"session_id":"b","events":[{"item":"y"}]}"#;
        let err = parse_sessions(text).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn duplicate_session_rejected() {
        let text = r#"{"session_id":"a","events":[]}
{"session_id":"a","events":[]}"#;
        assert!(matches!(parse_sessions(text), Err(Error::Ingest(_))));
    }

    #[test]
    fn out_of_order_events_resorted() {
        let text = r#"{"session_id":"a","events":[{"item":"x","ts":5},{"item":"y","ts":2}]}"#;
        let log = parse_sessions(text).unwrap();
        assert_eq!(log.resorted, 1);
        assert_eq!(log.sessions[0].events[0].item, "y");
    }

    #[test]
    fn same_day_split_fails() {
        let s = vec![sess("a", &[10]), sess("b", &[20])];
        assert!(time_split(s, 7).is_err());
    }

    #[test]
    fn boundary_tie_goes_to_test() {
        let max = 30 * SECONDS_PER_DAY;
        let boundary = max - 7 * SECONDS_PER_DAY;
        let s = vec![sess("a", &[0]), sess("b", &[boundary]), sess("c", &[max])];
        let split = time_split(s, 7).unwrap();
        assert_eq!(split.boundary, boundary);
        assert_eq!(split.train.len(), 1);
        assert_eq!(split.test.len(), 2);
    }

    #[test]
    fn split_uses_last_event() {
        let max = 30 * SECONDS_PER_DAY;
        // starts well before the boundary but ends after it
        let s = vec![sess("a", &[0, max - SECONDS_PER_DAY]), sess("b", &[0]), sess("c", &[max])];
        let split = time_split(s, 7).unwrap();
        assert_eq!(split.test.len(), 2);
    }
}
