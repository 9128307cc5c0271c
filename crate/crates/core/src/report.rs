//! Machine-readable run outputs: per-point branch records (JSONL) with a
//! plain-text state-matrix sidecar, event and classification JSON, the
//! degree-balance report, and a plot-ready CSV summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::continuation::{Branch, Event, EventData};
use crate::degree::BalanceReport;
use crate::error::{Error, Result};
use crate::mcbvp::MeshProblem;

#[derive(Serialize)]
struct PointRecord {
    step: usize,
    lambda: f64,
    u_inf_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_inf_norm: Option<f64>,
    det_sign: i32,
    margin: f64,
    residual_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    event: Option<String>,
}

#[derive(Serialize)]
struct EventRecord {
    kind: String,
    step: usize,
    lambda: f64,
    u: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    det_before: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    det_after: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    separation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    outgoing: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    alternatives: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

impl EventRecord {
    fn from_event(ev: &Event) -> Self {
        let mut rec = EventRecord {
            kind: ev.kind.as_str().to_string(),
            step: ev.step,
            lambda: ev.location.lambda,
            u: ev.location.u.iter().cloned().collect(),
            det_before: None,
            det_after: None,
            margin: None,
            norm: None,
            separation: None,
            kernel_dim: None,
            outgoing: None,
            alternatives: Vec::new(),
            reason: None,
        };
        match &ev.data {
            EventData::Fold {
                det_before,
                det_after,
            } => {
                rec.det_before = Some(*det_before);
                rec.det_after = Some(*det_after);
            }
            EventData::Singular {
                kernel_dim,
                outgoing,
                alternatives,
            } => {
                rec.kernel_dim = Some(*kernel_dim);
                rec.outgoing = *outgoing;
                rec.alternatives = alternatives.clone();
            }
            EventData::BoundaryApproach { margin } => rec.margin = Some(*margin),
            EventData::Blowup { norm } => rec.norm = Some(*norm),
            EventData::BaseReturn { separation } => rec.separation = Some(*separation),
            EventData::StepFailure { reason } => rec.reason = Some(reason.clone()),
        }
        rec
    }
}

#[derive(Serialize)]
pub struct EvidenceRecord {
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal_event: Option<String>,
    pub final_lambda: f64,
    pub final_aug_norm: f64,
    pub final_margin: f64,
    pub min_margin: f64,
    pub steps: usize,
    pub crossing_count: usize,
}

#[derive(Serialize)]
pub struct GradMonitorRecord {
    pub max_grad_inf_norm: f64,
    pub threshold: f64,
    pub flagged: bool,
}

#[derive(Serialize)]
pub struct ClassificationRecord {
    pub classification: String,
    pub evidence: EvidenceRecord,
    /// Gradient blow-up monitor, reported for the discretized boundary value
    /// problem only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_monitor: Option<GradMonitorRecord>,
}

impl ClassificationRecord {
    pub fn from_branch(branch: &Branch, grad_monitor: Option<GradMonitorRecord>) -> Self {
        let e = &branch.evidence;
        ClassificationRecord {
            classification: branch.classification.as_str().to_string(),
            grad_monitor,
            evidence: EvidenceRecord {
                reason: e.reason.clone(),
                terminal_event: e.terminal_event.map(|k| k.as_str().to_string()),
                final_lambda: e.final_lambda,
                final_aug_norm: e.final_aug_norm,
                final_margin: e.final_margin,
                min_margin: e.min_margin,
                steps: e.steps,
                crossing_count: e.crossing_count,
            },
        }
    }
}

#[derive(Serialize)]
struct CrossingRecord {
    u: Vec<f64>,
    index: i32,
}

#[derive(Serialize)]
pub struct BalanceRecord {
    lambda0: f64,
    crossings: Vec<CrossingRecord>,
    index_sum: i64,
    nonzero_crossings: usize,
    balanced: bool,
}

impl BalanceRecord {
    pub fn new(branch: &Branch, report: &BalanceReport) -> Self {
        BalanceRecord {
            lambda0: branch
                .crossings
                .first()
                .map(|c| c.lambda0)
                .unwrap_or_default(),
            crossings: branch
                .crossings
                .iter()
                .map(|c| CrossingRecord {
                    u: c.u.iter().cloned().collect(),
                    index: c.index,
                })
                .collect(),
            index_sum: report.index_sum,
            nonzero_crossings: report.nonzero_crossings,
            balanced: report.balanced,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Eval(format!("serialization failed: {e}")))?;
    fs::write(path, body + "\n")?;
    Ok(())
}

/// Writes `branch_<side>.jsonl` (one record per accepted point) and the
/// sidecar `branch_<side>_states.txt` (one whitespace-separated row
/// `lambda u_1 ... u_n` per point, shortest round-trip float formatting so
/// every diagnostic is exactly recomputable).
pub fn write_branch_files(
    dir: &Path,
    branch: &Branch,
    mesh: Option<&MeshProblem>,
) -> Result<()> {
    let side = branch.side.as_str();
    let mut jsonl = String::new();
    let mut states = String::new();
    for (i, p) in branch.points.iter().enumerate() {
        let event = branch
            .events
            .iter()
            .find(|e| e.step == i)
            .map(|e| e.kind.as_str().to_string());
        let rec = PointRecord {
            step: i,
            lambda: p.lambda,
            u_inf_norm: p.u.amax(),
            grad_inf_norm: mesh.map(|m| m.max_abs_slope(&p.u)),
            det_sign: branch.det_signs[i],
            margin: branch.margins[i],
            residual_norm: branch.residual_norms[i],
            event,
        };
        jsonl.push_str(
            &serde_json::to_string(&rec)
                .map_err(|e| Error::Eval(format!("serialization failed: {e}")))?,
        );
        jsonl.push('\n');

        let _ = write!(states, "{}", p.lambda);
        for v in p.u.iter() {
            let _ = write!(states, " {v}");
        }
        states.push('\n');
    }
    fs::write(dir.join(format!("branch_{side}.jsonl")), jsonl)?;
    fs::write(dir.join(format!("branch_{side}_states.txt")), states)?;
    Ok(())
}

pub fn write_events(dir: &Path, branches: &[&Branch]) -> Result<()> {
    #[derive(Serialize)]
    struct SideEvents {
        side: String,
        events: Vec<EventRecord>,
    }
    let all: Vec<SideEvents> = branches
        .iter()
        .map(|b| SideEvents {
            side: b.side.as_str().to_string(),
            events: b.events.iter().map(EventRecord::from_event).collect(),
        })
        .collect();
    write_json(&dir.join("events.json"), &all)
}

pub fn write_classification(
    dir: &Path,
    branches: &[&Branch],
    grad_monitors: &[Option<GradMonitorRecord>],
) -> Result<()> {
    #[derive(Serialize)]
    struct SideClassification {
        side: String,
        #[serde(flatten)]
        record: ClassificationRecord,
    }
    let all: Vec<SideClassification> = branches
        .iter()
        .zip(grad_monitors)
        .map(|(b, g)| SideClassification {
            side: b.side.as_str().to_string(),
            record: ClassificationRecord::from_branch(
                b,
                g.as_ref().map(|g| GradMonitorRecord {
                    max_grad_inf_norm: g.max_grad_inf_norm,
                    threshold: g.threshold,
                    flagged: g.flagged,
                }),
            ),
        })
        .collect();
    write_json(&dir.join("classification.json"), &all)
}

/// Writes `balance.json` for every branch that returned to the base slice.
pub fn write_balance(dir: &Path, entries: &[(String, BalanceRecord)]) -> Result<()> {
    #[derive(Serialize)]
    struct SideBalance<'a> {
        side: &'a str,
        #[serde(flatten)]
        record: &'a BalanceRecord,
    }
    let all: Vec<SideBalance> = entries
        .iter()
        .map(|(side, rec)| SideBalance { side, record: rec })
        .collect();
    write_json(&dir.join("balance.json"), &all)
}

/// `summary.csv`: one row per accepted point, lambda against the sup norm.
pub fn write_summary(dir: &Path, branches: &[&Branch]) -> Result<()> {
    let mut csv = String::from("side,step,lambda,u_inf_norm\n");
    for b in branches {
        for (i, p) in b.points.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{},{}", b.side.as_str(), i, p.lambda, p.u.amax());
        }
    }
    fs::write(dir.join("summary.csv"), csv)?;
    Ok(())
}

#[derive(Serialize)]
pub struct ErrorRecord {
    pub error: String,
    pub context: String,
}

pub fn write_errors(dir: &Path, records: &[ErrorRecord]) -> Result<()> {
    write_json(&dir.join("errors.json"), &records)
}

#[derive(Serialize)]
pub struct VerifyCheck {
    pub name: String,
    pub pass: bool,
    pub measured_error: f64,
    pub threshold: f64,
    pub details: String,
}

#[derive(Serialize)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
    pub all_pass: bool,
}

pub fn write_verify(dir: &Path, report: &VerifyReport) -> Result<()> {
    write_json(&dir.join("verify.json"), report)
}
