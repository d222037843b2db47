//! Case files: a line-oriented text format with named sections.
//!
//! ```text
//! voltmono-case 1
//! [system]
//! name = smib
//! base_mva = 100
//! frequency_hz = 60
//! slack_bus = 1
//! [buses]
//! # number kind base_kv         kind: slack | device | load | passive
//! 1 slack 20
//! 2 load 20
//! [branches]
//! # from to r x b [tap]
//! 1 2 0 0.5 0 1
//! [loads]
//! # bus p q [model [v_min]]      model: pq | z
//! 2 0.5 0.2 pq 0.7
//! [devices]
//! sg bus=1 p=0.5 v=1 xd=1.8 xd_p=0.3 xq=1.7 td0_p=8 ka=50 ta=0.05 h=3.5 d=7
//! gfm bus=.. p=.. v=.. ki=.. kd=.. tw=.. ku=.. [kq=0.1] [xl=0.1] [h=2] [d=100]
//! [scenario fault]
//! t_end = 3
//! dt = 0.001
//! jacobian_stride = 10
//! record = vm@2 eq@1
//! event 0.1 fault_on bus=2 [g=0] [b=-10000]
//! event 0.16 fault_off bus=2
//! event 1 vref_step bus=1 delta=0.05
//! event 1 qref_step bus=1 delta=0.1
//! event 0 load_shed bus=2 [dp=0] [dq=100Mvar]
//! ```
//!
//! Powers are per unit on `base_mva`; a `MW`, `Mvar` or `MVA` suffix converts
//! at parse time. Buses are referred to by number everywhere in the file.
//! `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex;
use thiserror::Error;

use crate::devices::{Device, DeviceModel, GfmParams, PqLoad, SgParams};
use crate::netmodel::{build_admittance, Branch, Bus, BusKind};
use crate::scalar::Real;
use crate::simulator::{Event, EventKind, Scenario, DEFAULT_FAULT_B};
use crate::system::{PowerSystem, Setpoint};

pub const FORMAT_HEADER: &str = "voltmono-case 1";

const SMIB: &str = include_str!("../cases/smib.case");
const CASE39_SG: &str = include_str!("../cases/case39_sg.case");
const CASE39_GFM: &str = include_str!("../cases/case39_gfm.case");

/// Names accepted by [`load_case`] in place of a path.
pub const BUNDLED: [&str; 3] = ["smib", "case39_sg", "case39_gfm"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("io: {0}")]
    Io(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> CaseError {
    CaseError::Validation { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSection {
    pub name: String,
    pub base_mva: f64,
    pub frequency_hz: f64,
    pub slack_bus: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusRow {
    pub number: u32,
    pub kind: BusKind,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRow {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub tap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadModel {
    /// Constant power, converting to constant impedance below `v_min`.
    Pq,
    /// Constant impedance at nominal voltage, folded into the admittance matrix.
    Z,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadRow {
    pub bus: u32,
    pub p: f64,
    pub q: f64,
    pub model: LoadModel,
    pub v_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceRow {
    Sg { bus: u32, p: f64, v: f64, xd: f64, xd_p: f64, xq: f64, td0_p: f64, ka: f64, ta: f64, h: f64, d: f64 },
    Gfm { bus: u32, p: f64, v: f64, xl: f64, ki: f64, kd: f64, tw: f64, ku: f64, kq: f64, h: f64, d: f64 },
}

impl DeviceRow {
    pub fn bus(&self) -> u32 {
        match self {
            DeviceRow::Sg { bus, .. } | DeviceRow::Gfm { bus, .. } => *bus,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventRowKind {
    FaultOn { bus: u32, g: f64, b: f64 },
    FaultOff { bus: u32 },
    VrefStep { bus: u32, delta: f64 },
    QrefStep { bus: u32, delta: f64 },
    LoadShed { bus: u32, dp: f64, dq: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRow {
    pub time: f64,
    pub kind: EventRowKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBlock {
    pub name: String,
    pub t_end: f64,
    pub dt: f64,
    pub jacobian_stride: usize,
    pub record: Vec<String>,
    pub events: Vec<EventRow>,
}

/// Defaults filled in while parsing. Diagnostic only: ignored by equality so
/// that a re-parse of the serialized (fully explicit) file compares equal.
#[derive(Debug, Clone, Default)]
pub struct ParseNotes(pub Vec<String>);

impl PartialEq for ParseNotes {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseFile {
    pub system: SystemSection,
    pub buses: Vec<BusRow>,
    pub branches: Vec<BranchRow>,
    pub loads: Vec<LoadRow>,
    pub devices: Vec<DeviceRow>,
    pub scenarios: Vec<ScenarioBlock>,
    pub notes: ParseNotes,
}

#[derive(PartialEq, Eq, Clone, Copy)]
enum Section {
    None,
    System,
    Buses,
    Branches,
    Loads,
    Devices,
    Scenario,
}

fn num(tok: &str, line: usize, what: &str) -> Result<f64, CaseError> {
    let v: f64 =
        tok.parse().map_err(|_| CaseError::Parse { line, message: format!("`{tok}` is not a number ({what})") })?;
    if !v.is_finite() {
        return Err(CaseError::Parse { line, message: format!("{what} must be finite") });
    }
    Ok(v)
}

/// Number with an optional MW/Mvar/MVA suffix, returned in per unit.
fn power(tok: &str, base: f64, line: usize, what: &str) -> Result<f64, CaseError> {
    let lower = tok.to_ascii_lowercase();
    for suffix in ["mvar", "mva", "mw"] {
        if let Some(stem) = lower.strip_suffix(suffix) {
            return Ok(num(stem, line, what)? / base);
        }
    }
    num(tok, line, what)
}

fn bus_number(tok: &str, line: usize) -> Result<u32, CaseError> {
    tok.parse().map_err(|_| CaseError::Parse { line, message: format!("`{tok}` is not a bus number") })
}

/// `key=value` tokens after a leading keyword.
fn key_values(toks: &[&str], line: usize) -> Result<Vec<(String, String)>, CaseError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for t in toks {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| CaseError::Parse { line, message: format!("expected key=value, got `{t}`") })?;
        if out.iter().any(|(ok, _)| ok == k) {
            return Err(CaseError::Parse { line, message: format!("duplicate key `{k}`") });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

struct Fields<'a> {
    kv: Vec<(String, String)>,
    line: usize,
    ctx: &'a str,
    base: f64,
}

impl Fields<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
    fn req(&self, key: &str) -> Result<f64, CaseError> {
        match self.raw(key) {
            Some(v) => num(v, self.line, key),
            None => Err(invalid(format!("{}.{key}", self.ctx), format!("missing (line {})", self.line))),
        }
    }
    fn req_power(&self, key: &str) -> Result<f64, CaseError> {
        match self.raw(key) {
            Some(v) => power(v, self.base, self.line, key),
            None => Err(invalid(format!("{}.{key}", self.ctx), format!("missing (line {})", self.line))),
        }
    }
    fn opt(&self, key: &str, default: f64, notes: &mut Vec<String>) -> Result<f64, CaseError> {
        match self.raw(key) {
            Some(v) => num(v, self.line, key),
            None => {
                notes.push(format!("line {}: {}.{key} defaulted to {default}", self.line, self.ctx));
                Ok(default)
            }
        }
    }
    fn opt_power(&self, key: &str, default: f64) -> Result<f64, CaseError> {
        match self.raw(key) {
            Some(v) => power(v, self.base, self.line, key),
            None => Ok(default),
        }
    }
    fn bus(&self) -> Result<u32, CaseError> {
        match self.raw("bus") {
            Some(v) => bus_number(v, self.line),
            None => Err(invalid(format!("{}.bus", self.ctx), format!("missing (line {})", self.line))),
        }
    }
    fn check_known(&self, known: &[&str]) -> Result<(), CaseError> {
        for (k, _) in &self.kv {
            if !known.contains(&k.as_str()) {
                return Err(CaseError::Parse {
                    line: self.line,
                    message: format!("unknown key `{k}` for {}", self.ctx),
                });
            }
        }
        Ok(())
    }
}

/// A data row with its 1-based line number.
type NumberedRow = (usize, Vec<String>);

pub fn parse_case_text(text: &str) -> Result<CaseFile, CaseError> {
    let mut section = Section::None;
    let mut header_seen = false;
    let mut sys_kv: Vec<(String, String, usize)> = Vec::new();
    let mut buses = Vec::new();
    let mut branches = Vec::new();
    let mut loads_raw: Vec<(usize, Vec<String>)> = Vec::new();
    let mut devices_raw: Vec<(usize, Vec<String>)> = Vec::new();
    let mut scen_raw: Vec<(String, usize, Vec<NumberedRow>)> = Vec::new();
    let mut notes = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if !header_seen {
            if content != FORMAT_HEADER {
                return Err(CaseError::Parse { line, message: format!("expected header `{FORMAT_HEADER}`") });
            }
            header_seen = true;
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            section = match name {
                "system" => Section::System,
                "buses" => Section::Buses,
                "branches" => Section::Branches,
                "loads" => Section::Loads,
                "devices" => Section::Devices,
                _ => {
                    if let Some(sname) = name.strip_prefix("scenario ") {
                        let sname = sname.trim().to_string();
                        if sname.is_empty() || scen_raw.iter().any(|(n, _, _)| *n == sname) {
                            return Err(CaseError::Parse {
                                line,
                                message: "scenario names must be unique and non-empty".into(),
                            });
                        }
                        scen_raw.push((sname, line, Vec::new()));
                        Section::Scenario
                    } else {
                        return Err(CaseError::Parse { line, message: format!("unknown section `{name}`") });
                    }
                }
            };
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        match section {
            Section::None => return Err(CaseError::Parse { line, message: "content outside a section".into() }),
            Section::System => {
                let (k, v) = content
                    .split_once('=')
                    .ok_or_else(|| CaseError::Parse { line, message: "expected key = value".into() })?;
                sys_kv.push((k.trim().to_string(), v.trim().to_string(), line));
            }
            Section::Buses => {
                if toks.len() != 3 {
                    return Err(CaseError::Parse { line, message: "bus rows are `number kind base_kv`".into() });
                }
                let kind = BusKind::parse(toks[1])
                    .ok_or_else(|| CaseError::Parse { line, message: format!("unknown bus kind `{}`", toks[1]) })?;
                buses.push(BusRow {
                    number: bus_number(toks[0], line)?,
                    kind,
                    base_kv: num(toks[2], line, "base_kv")?,
                });
            }
            Section::Branches => {
                if toks.len() != 5 && toks.len() != 6 {
                    return Err(CaseError::Parse { line, message: "branch rows are `from to r x b [tap]`".into() });
                }
                let tap = if toks.len() == 6 { num(toks[5], line, "tap")? } else { 1.0 };
                branches.push(BranchRow {
                    from: bus_number(toks[0], line)?,
                    to: bus_number(toks[1], line)?,
                    r: num(toks[2], line, "r")?,
                    x: num(toks[3], line, "x")?,
                    b: num(toks[4], line, "b")?,
                    tap,
                });
            }
            Section::Loads => loads_raw.push((line, toks.iter().map(|s| s.to_string()).collect())),
            Section::Devices => devices_raw.push((line, toks.iter().map(|s| s.to_string()).collect())),
            Section::Scenario => {
                scen_raw.last_mut().unwrap().2.push((line, vec![content.to_string()]));
            }
        }
    }
    if !header_seen {
        return Err(CaseError::Parse { line: 1, message: format!("expected header `{FORMAT_HEADER}`") });
    }

    // system section
    let get = |k: &str| sys_kv.iter().find(|(kk, _, _)| kk == k);
    for (k, _, line) in &sys_kv {
        if !["name", "base_mva", "frequency_hz", "slack_bus"].contains(&k.as_str()) {
            return Err(CaseError::Parse { line: *line, message: format!("unknown system key `{k}`") });
        }
    }
    let name = get("name").map(|(_, v, _)| v.clone()).ok_or_else(|| invalid("system.name", "missing"))?;
    let base_mva = match get("base_mva") {
        Some((_, v, l)) => num(v, *l, "base_mva")?,
        None => {
            notes.push("system.base_mva defaulted to 100".into());
            100.0
        }
    };
    if !(base_mva > 0.0) {
        return Err(invalid("system.base_mva", "must be positive"));
    }
    let frequency_hz = match get("frequency_hz") {
        Some((_, v, l)) => num(v, *l, "frequency_hz")?,
        None => {
            notes.push("system.frequency_hz defaulted to 60".into());
            60.0
        }
    };
    if !(frequency_hz > 0.0) {
        return Err(invalid("system.frequency_hz", "must be positive"));
    }
    let slack_bus = match get("slack_bus") {
        Some((_, v, l)) => bus_number(v, *l)?,
        None => return Err(invalid("system.slack_bus", "missing")),
    };

    let mut loads = Vec::new();
    for (line, toks) in loads_raw {
        if toks.len() < 3 || toks.len() > 5 {
            return Err(CaseError::Parse { line, message: "load rows are `bus p q [model [v_min]]`".into() });
        }
        let model = match toks.get(3).map(|s| s.as_str()) {
            None | Some("pq") => LoadModel::Pq,
            Some("z") => LoadModel::Z,
            Some(m) => return Err(CaseError::Parse { line, message: format!("unknown load model `{m}`") }),
        };
        let v_min = match toks.get(4) {
            Some(t) => num(t, line, "v_min")?,
            None => 0.7,
        };
        loads.push(LoadRow {
            bus: bus_number(&toks[0], line)?,
            p: power(&toks[1], base_mva, line, "p")?,
            q: power(&toks[2], base_mva, line, "q")?,
            model,
            v_min,
        });
    }

    let mut devices = Vec::new();
    for (line, toks) in devices_raw {
        let kind = toks[0].as_str();
        let kv = key_values(&toks[1..].iter().map(|s| s.as_str()).collect::<Vec<_>>(), line)?;
        let f = Fields { kv, line, ctx: kind, base: base_mva };
        match kind {
            "sg" => {
                f.check_known(&["bus", "p", "v", "xd", "xd_p", "xq", "td0_p", "ka", "ta", "h", "d"])?;
                let h = f.req("h")?;
                devices.push(DeviceRow::Sg {
                    bus: f.bus()?,
                    p: f.req_power("p")?,
                    v: f.req("v")?,
                    xd: f.req("xd")?,
                    xd_p: f.req("xd_p")?,
                    xq: f.req("xq")?,
                    td0_p: f.req("td0_p")?,
                    ka: f.req("ka")?,
                    ta: f.req("ta")?,
                    h,
                    d: f.opt("d", 2.0 * h, &mut notes)?,
                });
            }
            "gfm" => {
                f.check_known(&["bus", "p", "v", "xl", "ki", "kd", "tw", "ku", "kq", "h", "d"])?;
                devices.push(DeviceRow::Gfm {
                    bus: f.bus()?,
                    p: f.req_power("p")?,
                    v: f.req("v")?,
                    xl: f.opt("xl", 0.1, &mut notes)?,
                    ki: f.req("ki")?,
                    kd: f.req("kd")?,
                    tw: f.req("tw")?,
                    ku: f.req("ku")?,
                    kq: f.opt("kq", 0.1, &mut notes)?,
                    h: f.opt("h", 2.0, &mut notes)?,
                    d: f.opt("d", 100.0, &mut notes)?,
                });
            }
            other => return Err(CaseError::Parse { line, message: format!("unknown device kind `{other}`") }),
        }
    }

    let mut scenarios = Vec::new();
    for (sname, sline, rows) in scen_raw {
        let mut t_end = None;
        let mut dt = None;
        let mut stride = 0usize;
        let mut record = Vec::new();
        let mut events = Vec::new();
        for (line, row) in rows {
            let row = &row[0];
            if let Some(rest) = row.strip_prefix("event ") {
                let toks: Vec<&str> = rest.split_whitespace().collect();
                if toks.len() < 2 {
                    return Err(CaseError::Parse {
                        line,
                        message: "event rows are `event TIME KIND key=value...`".into(),
                    });
                }
                let time = num(toks[0], line, "event time")?;
                let kv = key_values(&toks[2..], line)?;
                let f = Fields { kv, line, ctx: toks[1], base: base_mva };
                let kind = match toks[1] {
                    "fault_on" => {
                        f.check_known(&["bus", "g", "b"])?;
                        EventRowKind::FaultOn {
                            bus: f.bus()?,
                            g: f.opt_power("g", 0.0)?,
                            b: f.opt_power("b", DEFAULT_FAULT_B)?,
                        }
                    }
                    "fault_off" => {
                        f.check_known(&["bus"])?;
                        EventRowKind::FaultOff { bus: f.bus()? }
                    }
                    "vref_step" => {
                        f.check_known(&["bus", "delta"])?;
                        EventRowKind::VrefStep { bus: f.bus()?, delta: f.req("delta")? }
                    }
                    "qref_step" => {
                        f.check_known(&["bus", "delta"])?;
                        EventRowKind::QrefStep { bus: f.bus()?, delta: f.req_power("delta")? }
                    }
                    "load_shed" => {
                        f.check_known(&["bus", "dp", "dq"])?;
                        EventRowKind::LoadShed {
                            bus: f.bus()?,
                            dp: f.opt_power("dp", 0.0)?,
                            dq: f.opt_power("dq", 0.0)?,
                        }
                    }
                    other => return Err(CaseError::Parse { line, message: format!("unknown event kind `{other}`") }),
                };
                events.push(EventRow { time, kind });
                continue;
            }
            let (k, v) = row
                .split_once('=')
                .ok_or_else(|| CaseError::Parse { line, message: "expected key = value or an event row".into() })?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "t_end" => t_end = Some(num(v, line, "t_end")?),
                "dt" => dt = Some(num(v, line, "dt")?),
                "jacobian_stride" => {
                    stride = v
                        .parse()
                        .map_err(|_| CaseError::Parse { line, message: "jacobian_stride must be an integer".into() })?
                }
                "record" => record = v.split_whitespace().map(|s| s.to_string()).collect(),
                _ => return Err(CaseError::Parse { line, message: format!("unknown scenario key `{k}`") }),
            }
        }
        let t_end =
            t_end.ok_or_else(|| invalid(format!("scenario {sname}.t_end"), format!("missing (line {sline})")))?;
        let dt = match dt {
            Some(d) => d,
            None => {
                notes.push(format!("scenario {sname}.dt defaulted to 0.001"));
                0.001
            }
        };
        events.sort_by(|a: &EventRow, b: &EventRow| a.time.total_cmp(&b.time));
        scenarios.push(ScenarioBlock { name: sname, t_end, dt, jacobian_stride: stride, record, events });
    }

    let case = CaseFile {
        system: SystemSection { name, base_mva, frequency_hz, slack_bus },
        buses,
        branches,
        loads,
        devices,
        scenarios,
        notes: ParseNotes(notes),
    };
    validate(&case)?;
    Ok(case)
}

/// Referential integrity and parameter ranges. Full model validation also
/// happens when the case is turned into a [`PowerSystem`].
pub fn validate(case: &CaseFile) -> Result<(), CaseError> {
    let has_bus = |b: u32| case.buses.iter().any(|r| r.number == b);
    if case.buses.is_empty() {
        return Err(invalid("buses", "no buses"));
    }
    match case.buses.iter().find(|b| b.number == case.system.slack_bus) {
        Some(b) if b.kind == BusKind::Slack => {}
        Some(_) => return Err(invalid("system.slack_bus", "bus is not declared as kind slack")),
        None => return Err(invalid("system.slack_bus", "bus does not exist")),
    }
    for (k, br) in case.branches.iter().enumerate() {
        if !has_bus(br.from) || !has_bus(br.to) {
            return Err(invalid(format!("branches[{k}]"), "references a missing bus"));
        }
    }
    for (k, l) in case.loads.iter().enumerate() {
        if !has_bus(l.bus) {
            return Err(invalid(format!("loads[{k}].bus"), "references a missing bus"));
        }
        if !(l.v_min > 0.0 && l.v_min < 1.0) {
            return Err(invalid(format!("loads[{k}].v_min"), "must lie in (0, 1)"));
        }
    }
    for (k, d) in case.devices.iter().enumerate() {
        if !has_bus(d.bus()) {
            return Err(invalid(format!("devices[{k}].bus"), "references a missing bus"));
        }
        if case.devices[..k].iter().any(|o| o.bus() == d.bus()) {
            return Err(invalid(format!("devices[{k}].bus"), "bus already has a device"));
        }
        let v = match d {
            DeviceRow::Sg { v, .. } | DeviceRow::Gfm { v, .. } => *v,
        };
        if !(v > 0.0) {
            return Err(invalid(format!("devices[{k}].v"), "must be positive"));
        }
    }
    for s in &case.scenarios {
        if !(s.dt > 0.0) {
            return Err(invalid(format!("scenario {}.dt", s.name), "must be positive"));
        }
        if !(s.t_end > 0.0) {
            return Err(invalid(format!("scenario {}.t_end", s.name), "must be positive"));
        }
        for e in &s.events {
            if !(e.time >= 0.0) {
                return Err(invalid(format!("scenario {}.event", s.name), "time must be non-negative"));
            }
            let b = match e.kind {
                EventRowKind::FaultOn { bus, .. }
                | EventRowKind::FaultOff { bus }
                | EventRowKind::VrefStep { bus, .. }
                | EventRowKind::QrefStep { bus, .. }
                | EventRowKind::LoadShed { bus, .. } => bus,
            };
            if !has_bus(b) {
                return Err(invalid(format!("scenario {}.event", s.name), format!("bus {b} does not exist")));
            }
        }
    }
    Ok(())
}

pub fn parse_case(path: &Path) -> Result<CaseFile, CaseError> {
    let text = std::fs::read_to_string(path).map_err(|e| CaseError::Io(format!("{}: {e}", path.display())))?;
    parse_case_text(&text)
}

pub fn bundled_case_text(name: &str) -> Option<&'static str> {
    match name {
        "smib" => Some(SMIB),
        "case39_sg" => Some(CASE39_SG),
        "case39_gfm" => Some(CASE39_GFM),
        _ => None,
    }
}

/// A bundled case name or a path to a case file.
pub fn load_case(name_or_path: &str) -> Result<CaseFile, CaseError> {
    match bundled_case_text(name_or_path) {
        Some(text) => parse_case_text(text),
        None => parse_case(Path::new(name_or_path)),
    }
}

pub fn bundled_system<T: Real>(name: &str) -> Result<PowerSystem<T>, CaseError> {
    let text = bundled_case_text(name).ok_or_else(|| CaseError::Io(format!("no bundled case `{name}`")))?;
    build_system(&parse_case_text(text)?)
}

fn fmt_num(out: &mut String, x: f64) {
    // Display for f64 is the shortest representation that parses back exactly
    let _ = write!(out, "{x}");
}

pub fn serialize_case(case: &CaseFile) -> String {
    let mut s = String::new();
    s.push_str(FORMAT_HEADER);
    s.push_str("\n\n[system]\n");
    let _ = writeln!(s, "name = {}", case.system.name);
    s.push_str("base_mva = ");
    fmt_num(&mut s, case.system.base_mva);
    s.push_str("\nfrequency_hz = ");
    fmt_num(&mut s, case.system.frequency_hz);
    let _ = writeln!(s, "\nslack_bus = {}", case.system.slack_bus);
    s.push_str("\n[buses]\n# number kind base_kv\n");
    for b in &case.buses {
        let _ = write!(s, "{} {} ", b.number, b.kind.as_str());
        fmt_num(&mut s, b.base_kv);
        s.push('\n');
    }
    s.push_str("\n[branches]\n# from to r x b tap\n");
    for br in &case.branches {
        let _ = writeln!(s, "{} {} {} {} {} {}", br.from, br.to, br.r, br.x, br.b, br.tap);
    }
    s.push_str("\n[loads]\n# bus p q model v_min\n");
    for l in &case.loads {
        let m = match l.model {
            LoadModel::Pq => "pq",
            LoadModel::Z => "z",
        };
        let _ = writeln!(s, "{} {} {} {} {}", l.bus, l.p, l.q, m, l.v_min);
    }
    s.push_str("\n[devices]\n");
    for d in &case.devices {
        match d {
            DeviceRow::Sg { bus, p, v, xd, xd_p, xq, td0_p, ka, ta, h, d } => {
                let _ = writeln!(
                    s,
                    "sg bus={bus} p={p} v={v} xd={xd} xd_p={xd_p} xq={xq} td0_p={td0_p} ka={ka} ta={ta} h={h} d={d}"
                );
            }
            DeviceRow::Gfm { bus, p, v, xl, ki, kd, tw, ku, kq, h, d } => {
                let _ = writeln!(
                    s,
                    "gfm bus={bus} p={p} v={v} xl={xl} ki={ki} kd={kd} tw={tw} ku={ku} kq={kq} h={h} d={d}"
                );
            }
        }
    }
    for sc in &case.scenarios {
        let _ = writeln!(s, "\n[scenario {}]", sc.name);
        let _ = writeln!(s, "t_end = {}", sc.t_end);
        let _ = writeln!(s, "dt = {}", sc.dt);
        let _ = writeln!(s, "jacobian_stride = {}", sc.jacobian_stride);
        if !sc.record.is_empty() {
            let _ = writeln!(s, "record = {}", sc.record.join(" "));
        }
        for e in &sc.events {
            let _ = match &e.kind {
                EventRowKind::FaultOn { bus, g, b } => writeln!(s, "event {} fault_on bus={bus} g={g} b={b}", e.time),
                EventRowKind::FaultOff { bus } => writeln!(s, "event {} fault_off bus={bus}", e.time),
                EventRowKind::VrefStep { bus, delta } => {
                    writeln!(s, "event {} vref_step bus={bus} delta={delta}", e.time)
                }
                EventRowKind::QrefStep { bus, delta } => {
                    writeln!(s, "event {} qref_step bus={bus} delta={delta}", e.time)
                }
                EventRowKind::LoadShed { bus, dp, dq } => {
                    writeln!(s, "event {} load_shed bus={bus} dp={dp} dq={dq}", e.time)
                }
            };
        }
    }
    s
}

fn index_map(case: &CaseFile) -> impl Fn(u32) -> usize + '_ {
    move |n| case.buses.iter().position(|b| b.number == n).expect("validated bus reference")
}

pub fn build_system<T: Real>(case: &CaseFile) -> Result<PowerSystem<T>, CaseError> {
    validate(case)?;
    let idx = index_map(case);
    let t = |x: f64| T::lit(x);
    let buses: Vec<Bus> =
        case.buses.iter().map(|b| Bus { number: b.number, base_kv: b.base_kv, kind: b.kind }).collect();
    let branches: Vec<Branch<T>> = case
        .branches
        .iter()
        .map(|b| Branch { from: idx(b.from), to: idx(b.to), r: t(b.r), x: t(b.x), b_shunt: t(b.b), tap: t(b.tap) })
        .collect();
    let mut shunts = Vec::new();
    let mut loads = Vec::new();
    for l in &case.loads {
        match l.model {
            // consumption S at 1 p.u. means admittance conj(S)
            LoadModel::Z => shunts.push((idx(l.bus), Complex::new(t(l.p), t(-l.q)))),
            LoadModel::Pq => loads.push(PqLoad { bus: idx(l.bus), s: Complex::new(t(l.p), t(l.q)), v_min: t(l.v_min) }),
        }
    }
    let net = build_admittance(buses, branches, &shunts).map_err(|e| invalid("network", e.to_string()))?;
    let omega_b = t(2.0 * std::f64::consts::PI * case.system.frequency_hz);
    let mut devices = Vec::new();
    let mut setpoints = Vec::new();
    for d in &case.devices {
        match *d {
            DeviceRow::Sg { bus, p, v, xd, xd_p, xq, td0_p, ka, ta, h, d } => {
                devices.push(Device {
                    bus: idx(bus),
                    model: DeviceModel::Sg(SgParams {
                        xd: t(xd),
                        xq: t(xq),
                        xd_p: t(xd_p),
                        td0_p: t(td0_p),
                        ka: t(ka),
                        ta: t(ta),
                        h: t(h),
                        d: t(d),
                        omega_b,
                        v_ref: t(v),
                        p_m: t(p),
                    }),
                });
                setpoints.push(Setpoint { p: t(p), v: t(v) });
            }
            DeviceRow::Gfm { bus, p, v, xl, ki, kd, tw, ku, kq, h, d } => {
                devices.push(Device {
                    bus: idx(bus),
                    model: DeviceModel::Gfm(GfmParams {
                        xl: t(xl),
                        ki: t(ki),
                        kd: t(kd),
                        tw: t(tw),
                        ku: t(ku),
                        kq: t(kq),
                        h: t(h),
                        d: t(d),
                        omega_b,
                        v_ref: t(v),
                        q_ref: T::zero(),
                        p_ref: t(p),
                    }),
                });
                setpoints.push(Setpoint { p: t(p), v: t(v) });
            }
        }
    }
    // device order follows bus order so state blocks are addressable by bus
    let mut order: Vec<usize> = (0..devices.len()).collect();
    order.sort_by_key(|&k| devices[k].bus);
    let devices: Vec<_> = order.iter().map(|&k| devices[k]).collect();
    let setpoints: Vec<_> = order.iter().map(|&k| setpoints[k]).collect();
    PowerSystem::new(case.system.name.clone(), case.system.base_mva, net, devices, setpoints, loads).map_err(|e| {
        let field = match &e {
            crate::system::SystemError::Device(crate::devices::DeviceError::InvalidParameter { field, .. }) => {
                format!("device.{field}")
            }
            _ => "system".to_string(),
        };
        invalid(field, e.to_string())
    })
}

pub fn scenario_names(case: &CaseFile) -> Vec<&str> {
    case.scenarios.iter().map(|s| s.name.as_str()).collect()
}

pub fn build_scenario<T: Real>(case: &CaseFile, name: &str) -> Result<Scenario<T>, CaseError> {
    let sc =
        case.scenarios.iter().find(|s| s.name == name).ok_or_else(|| CaseError::UnknownScenario(name.to_string()))?;
    let idx = index_map(case);
    let t = |x: f64| T::lit(x);
    let events = sc
        .events
        .iter()
        .map(|e| Event {
            time: e.time,
            kind: match e.kind {
                EventRowKind::FaultOn { bus, g, b } => {
                    EventKind::FaultOn { bus: idx(bus), y: Complex::new(t(g), t(b)) }
                }
                EventRowKind::FaultOff { bus } => EventKind::FaultOff { bus: idx(bus) },
                EventRowKind::VrefStep { bus, delta } => EventKind::VrefStep { bus: idx(bus), delta: t(delta) },
                EventRowKind::QrefStep { bus, delta } => EventKind::QrefStep { bus: idx(bus), delta: t(delta) },
                EventRowKind::LoadShed { bus, dp, dq } => EventKind::LoadShed { bus: idx(bus), dp: t(dp), dq: t(dq) },
            },
        })
        .collect();
    Ok(Scenario {
        name: sc.name.clone(),
        t_end: sc.t_end,
        dt: sc.dt,
        events,
        record: sc.record.clone(),
        jacobian_stride: sc.jacobian_stride,
    })
}
