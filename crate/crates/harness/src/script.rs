//! On-disk step-script format: a line-oriented document carrying prep
//! statements, per-session step lists with global sequence numbers,
//! isolation level, timing, and object placement. Rendering and parsing
//! round-trip exactly.

use std::time::Duration;

use thiserror::Error;

use popcheck_core::schedule::Schedule;
use popcheck_sim::IsolationLevel;

use crate::casegen::{
    GlobalStep, ObjectBinding, SessionPlan, SqlStep, StepRole, StepScript, Timing,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScriptError {
    #[error("line {0}: {1}")]
    Line(usize, String),
    #[error("script is missing required field `{0}`")]
    Missing(&'static str),
}

pub fn render(script: &StepScript) -> String {
    let mut out = String::new();
    out.push_str("# popcheck step script\n");
    out.push_str("version: 1\n");
    if let Some(id) = script.case_id {
        out.push_str(&format!("case: {id}\n"));
    }
    out.push_str(&format!("name: {}\n", script.name));
    out.push_str(&format!("dialect: {}\n", script.dialect));
    out.push_str(&format!("isolation: {}\n", script.isolation));
    out.push_str(&format!("delay-ms: {}\n", script.timing.step_delay.as_millis()));
    out.push_str(&format!("timeout-ms: {}\n", script.timing.timeout.as_millis()));
    out.push_str(&format!(
        "block-ms: {}\n",
        script.timing.block_threshold.as_millis()
    ));
    for o in &script.objects {
        out.push_str(&format!(
            "object: {} key={} table={} partition={}\n",
            o.name, o.key, o.table, o.partition
        ));
    }
    for p in &script.prep {
        out.push_str(&format!("prep: {p}\n"));
    }
    for s in &script.sessions {
        out.push_str(&format!("session: {}\n", s.txn));
    }
    for (seq, &g) in script.global_order.iter().enumerate() {
        let step = script.step(g);
        let role = match step.role {
            StepRole::Setup => "setup",
            StepRole::Op => "op",
            StepRole::Cleanup => "cleanup",
        };
        let intended = step
            .intended
            .as_ref()
            .map(|op| format!(" intends={op}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "step: seq={} session={} role={}{} sql={}\n",
            seq + 1,
            g.session + 1,
            role,
            intended,
            step.sql
        ));
    }
    out
}

pub fn parse(text: &str) -> Result<StepScript, ScriptError> {
    let mut case_id = None;
    let mut name = None;
    let mut dialect = None;
    let mut isolation: Option<IsolationLevel> = None;
    let mut timing = Timing::default();
    let mut objects: Vec<ObjectBinding> = Vec::new();
    let mut prep: Vec<String> = Vec::new();
    let mut sessions: Vec<SessionPlan> = Vec::new();
    let mut global_order: Vec<GlobalStep> = Vec::new();

    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| ScriptError::Line(ln, "expected `key: value`".into()))?;
        let value = value.trim();
        match key.trim() {
            "version" => {
                if value != "1" {
                    return Err(ScriptError::Line(ln, format!("unsupported version {value}")));
                }
            }
            "case" => {
                case_id = Some(value.parse().map_err(|_| {
                    ScriptError::Line(ln, format!("bad case id `{value}`"))
                })?);
            }
            "name" => name = Some(value.to_string()),
            "dialect" => dialect = Some(value.to_string()),
            "isolation" => {
                isolation =
                    Some(value.parse().map_err(|e| ScriptError::Line(ln, e))?);
            }
            "delay-ms" => timing.step_delay = parse_ms(ln, value)?,
            "timeout-ms" => timing.timeout = parse_ms(ln, value)?,
            "block-ms" => timing.block_threshold = parse_ms(ln, value)?,
            "object" => objects.push(parse_object(ln, value)?),
            "prep" => prep.push(value.to_string()),
            "session" => {
                let txn = value.parse().map_err(|_| {
                    ScriptError::Line(ln, format!("bad session transaction id `{value}`"))
                })?;
                sessions.push(SessionPlan { txn, steps: Vec::new() });
            }
            "step" => {
                let (g, step) = parse_step_line(ln, value)?;
                if g.session >= sessions.len() {
                    return Err(ScriptError::Line(ln, "session out of range".into()));
                }
                sessions[g.session].steps.push(step);
                global_order.push(GlobalStep {
                    session: g.session,
                    step: sessions[g.session].steps.len() - 1,
                });
            }
            other => {
                return Err(ScriptError::Line(ln, format!("unknown key `{other}`")));
            }
        }
    }

    Ok(StepScript {
        case_id,
        name: name.ok_or(ScriptError::Missing("name"))?,
        dialect: dialect.ok_or(ScriptError::Missing("dialect"))?,
        isolation: isolation.ok_or(ScriptError::Missing("isolation"))?,
        objects,
        prep,
        sessions,
        global_order,
        timing,
    })
}

fn parse_ms(ln: usize, value: &str) -> Result<Duration, ScriptError> {
    value
        .parse::<u64>()
        .map(Duration::from_millis)
        .map_err(|_| ScriptError::Line(ln, format!("bad milliseconds `{value}`")))
}

// `x key=0 table=t1 partition=0`
fn parse_object(ln: usize, value: &str) -> Result<ObjectBinding, ScriptError> {
    let mut parts = value.split_whitespace();
    let name = parts
        .next()
        .ok_or_else(|| ScriptError::Line(ln, "object needs a name".into()))?
        .to_string();
    let mut key = None;
    let mut table = None;
    let mut partition = 0;
    for p in parts {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| ScriptError::Line(ln, format!("bad object field `{p}`")))?;
        match k {
            "key" => key = v.parse().ok(),
            "table" => table = Some(v.to_string()),
            "partition" => {
                partition = v
                    .parse()
                    .map_err(|_| ScriptError::Line(ln, format!("bad partition `{v}`")))?;
            }
            _ => return Err(ScriptError::Line(ln, format!("unknown object field `{k}`"))),
        }
    }
    Ok(ObjectBinding {
        name,
        key: key.ok_or_else(|| ScriptError::Line(ln, "object needs key=".into()))?,
        table: table.ok_or_else(|| ScriptError::Line(ln, "object needs table=".into()))?,
        partition,
    })
}

// `seq=3 session=1 role=op intends=R1[x0] sql=SELECT ...`
fn parse_step_line(ln: usize, value: &str) -> Result<(GlobalStep, SqlStep), ScriptError> {
    let sql_pos = value
        .find("sql=")
        .ok_or_else(|| ScriptError::Line(ln, "step needs sql=".into()))?;
    let sql = value[sql_pos + 4..].to_string();
    let mut session = None;
    let mut role = StepRole::Op;
    let mut intended = None;
    for field in value[..sql_pos].split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| ScriptError::Line(ln, format!("bad step field `{field}`")))?;
        match k {
            "seq" => {} // positional; the line order is authoritative
            "session" => {
                let s: usize = v
                    .parse()
                    .map_err(|_| ScriptError::Line(ln, format!("bad session `{v}`")))?;
                if s == 0 {
                    return Err(ScriptError::Line(ln, "sessions are 1-based".into()));
                }
                session = Some(s - 1);
            }
            "role" => {
                role = match v {
                    "setup" => StepRole::Setup,
                    "op" => StepRole::Op,
                    "cleanup" => StepRole::Cleanup,
                    _ => return Err(ScriptError::Line(ln, format!("unknown role `{v}`"))),
                };
            }
            "intends" => {
                let sched = Schedule::parse_unchecked(v)
                    .map_err(|e| ScriptError::Line(ln, format!("bad intends token: {e}")))?;
                let op = sched
                    .ops()
                    .first()
                    .cloned()
                    .ok_or_else(|| ScriptError::Line(ln, "empty intends token".into()))?;
                intended = Some(op);
            }
            _ => return Err(ScriptError::Line(ln, format!("unknown step field `{k}`"))),
        }
    }
    let session =
        session.ok_or_else(|| ScriptError::Line(ln, "step needs session=".into()))?;
    Ok((
        GlobalStep { session, step: 0 },
        SqlStep { sql, role, intended },
    ))
}
