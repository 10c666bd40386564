use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::ViewId;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    /// Warm-start step on pseudo ground truth (removal only).
    Pretrain,
    Admit,
    Replace,
    Train,
    Done,
}

/// One line of the event log. `step` is the number of training steps taken
/// before the event (for `train`, including itself).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub step: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_id: Option<ViewId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

impl ScheduleEvent {
    pub fn view(step: u64, kind: EventKind, id: ViewId) -> Self {
        ScheduleEvent {
            step,
            kind,
            view_id: Some(id),
            loss: None,
        }
    }

    pub fn train(step: u64, kind: EventKind, loss: f64) -> Self {
        ScheduleEvent {
            step,
            kind,
            view_id: None,
            loss: Some(loss),
        }
    }

    pub fn done(step: u64) -> Self {
        ScheduleEvent {
            step,
            kind: EventKind::Done,
            view_id: None,
            loss: None,
        }
    }
}

/// Newline-delimited JSON, one event per line.
pub fn write_event_log(events: &[ScheduleEvent], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_event_log(path: &Path) -> Result<Vec<ScheduleEvent>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut events = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            events.push(serde_json::from_str(&line)?);
        }
    }
    Ok(events)
}
