//! Case-file readers and the native JSON writer.
//!
//! Two inputs are understood:
//!
//! * the native JSON schema:
//!   `{"base_mva", "slack", "buses": [...], "branches": [...]}` where a bus is
//!   `{id, kind, shunt_g, shunt_b, p_inj?, q_inj?, v_set?, vmag?, angle_deg?}`
//!   (shunts and injections per-unit) and a branch is
//!   `{from, to, r, x, b, tap, shift_deg, status}`;
//! * MATPOWER-style text (`mpc.baseMVA = ...; mpc.bus = [...]; ...`).
//!
//! MATPOWER column map (0-based, unused columns ignored):
//!
//! | table    | columns read |
//! |----------|--------------|
//! | `bus`    | 0 id, 1 type (1 PQ, 2 PV, 3 ref), 2 Pd MW, 3 Qd MVAr, 4 Gs MW, 5 Bs MVAr, 7 Vm pu, 8 Va deg |
//! | `gen`    | 0 bus, 1 Pg MW, 2 Qg MVAr, 5 Vg pu, 7 status |
//! | `branch` | 0 from, 1 to, 2 r, 3 x, 4 b, 8 tap (0 = none), 9 shift deg, 10 status |
//!
//! `Vm`/`Va` become the recorded true state of each bus.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Branch, Bus, BusId, BusKind, NetworkError, NetworkGraph};

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse error on line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing table `{0}`")]
    MissingTable(&'static str),
    #[error("{table} row {row} has {found} columns, need at least {need}")]
    ShortRow {
        table: &'static str,
        row: usize,
        found: usize,
        need: usize,
    },
    #[error("invalid value in {table} row {row}: {msg}")]
    Value {
        table: &'static str,
        row: usize,
        msg: String,
    },
    #[error("no slack (type 3) bus")]
    MissingSlack,
    #[error("more than one slack bus: {0} and {1}")]
    MultipleSlack(BusId, BusId),
    #[error("invalid network: {0}")]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    NativeJson,
    Matpower,
}

impl CaseFormat {
    /// Guess from the file extension: `.json` is native, anything else MATPOWER.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => CaseFormat::NativeJson,
            _ => CaseFormat::Matpower,
        }
    }
}

pub fn import_case(path: &Path, format: Option<CaseFormat>) -> Result<NetworkGraph, CaseError> {
    let text = std::fs::read_to_string(path)?;
    match format.unwrap_or_else(|| CaseFormat::from_path(path)) {
        CaseFormat::NativeJson => parse_native_json(&text),
        CaseFormat::Matpower => parse_matpower(&text),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonCase {
    base_mva: f64,
    slack: BusId,
    buses: Vec<JsonBus>,
    branches: Vec<JsonBranch>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonBus {
    id: BusId,
    kind: BusKind,
    #[serde(default)]
    shunt_g: f64,
    #[serde(default)]
    shunt_b: f64,
    #[serde(default)]
    p_inj: f64,
    #[serde(default)]
    q_inj: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_set: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vmag: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    angle_deg: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonBranch {
    from: BusId,
    to: BusId,
    r: f64,
    x: f64,
    #[serde(default)]
    b: f64,
    #[serde(default = "one")]
    tap: f64,
    #[serde(default)]
    shift_deg: f64,
    #[serde(default = "in_service")]
    status: u8,
}

fn one() -> f64 {
    1.0
}

fn in_service() -> u8 {
    1
}

/// Degrees for `rad` chosen so that converting back is exact.
pub fn to_degrees_exact(rad: f64) -> f64 {
    let deg = rad.to_degrees();
    if deg.to_radians() == rad || !deg.is_finite() || deg == 0.0 {
        return deg;
    }
    let mut lo = deg;
    let mut hi = deg;
    for _ in 0..8 {
        lo = f64::from_bits(if lo > 0.0 { lo.to_bits() - 1 } else { lo.to_bits() + 1 });
        hi = f64::from_bits(if hi > 0.0 { hi.to_bits() + 1 } else { hi.to_bits() - 1 });
        if lo.to_radians() == rad {
            return lo;
        }
        if hi.to_radians() == rad {
            return hi;
        }
    }
    deg
}

pub fn parse_native_json(text: &str) -> Result<NetworkGraph, CaseError> {
    let case: JsonCase = serde_json::from_str(text)?;
    let buses = case
        .buses
        .into_iter()
        .map(|b| Bus {
            id: b.id,
            kind: b.kind,
            shunt_g: b.shunt_g,
            shunt_b: b.shunt_b,
            p_inj: b.p_inj,
            q_inj: b.q_inj,
            v_set: b.v_set,
            true_vmag: b.vmag,
            true_angle: b.angle_deg.map(f64::to_radians),
        })
        .collect();
    let branches = case
        .branches
        .into_iter()
        .map(|b| Branch {
            from_bus: b.from,
            to_bus: b.to,
            r: b.r,
            x: b.x,
            b_charging: b.b,
            tap_ratio: b.tap,
            phase_shift: b.shift_deg.to_radians(),
            in_service: b.status != 0,
        })
        .collect();
    Ok(NetworkGraph::new(buses, branches, case.slack, case.base_mva)?)
}

pub fn to_native_json(graph: &NetworkGraph) -> String {
    let case = JsonCase {
        base_mva: graph.base_mva(),
        slack: graph.slack_bus(),
        buses: graph
            .buses()
            .iter()
            .map(|b| JsonBus {
                id: b.id,
                kind: b.kind,
                shunt_g: b.shunt_g,
                shunt_b: b.shunt_b,
                p_inj: b.p_inj,
                q_inj: b.q_inj,
                v_set: b.v_set,
                vmag: b.true_vmag,
                angle_deg: b.true_angle.map(to_degrees_exact),
            })
            .collect(),
        branches: graph
            .branches()
            .iter()
            .map(|b| JsonBranch {
                from: b.from_bus,
                to: b.to_bus,
                r: b.r,
                x: b.x,
                b: b.b_charging,
                tap: b.tap_ratio,
                shift_deg: to_degrees_exact(b.phase_shift),
                status: u8::from(b.in_service),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&case).expect("case serializes")
}

pub fn export_case(graph: &NetworkGraph, path: &Path) -> Result<(), CaseError> {
    std::fs::write(path, to_native_json(graph))?;
    Ok(())
}

/// Numeric matrices and scalars of a MATPOWER-style file, keyed by field name.
#[derive(Debug, Default)]
struct MatpowerTables {
    scalars: BTreeMap<String, f64>,
    matrices: BTreeMap<String, Vec<Vec<f64>>>,
}

fn parse_number(tok: &str, line: usize) -> Result<f64, CaseError> {
    match tok {
        "Inf" | "inf" => Ok(f64::INFINITY),
        "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok.parse::<f64>().map_err(|_| CaseError::Syntax {
            line,
            msg: format!("bad number `{tok}`"),
        }),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(p) => &line[..p],
        None => line,
    }
}

/// Matrix being read: name, finished rows, current row, opening line.
type OpenMatrix = (String, Vec<Vec<f64>>, Vec<f64>, usize);

fn tokenize_tables(text: &str) -> Result<MatpowerTables, CaseError> {
    let mut out = MatpowerTables::default();
    let mut open: Option<OpenMatrix> = None;
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let mut rest = strip_comment(raw).trim();
        if rest.is_empty() {
            continue;
        }
        if open.is_none() {
            if rest.starts_with("function") {
                continue;
            }
            let Some(eq) = rest.find('=') else {
                return Err(CaseError::Syntax {
                    line: line_no,
                    msg: "expected assignment".into(),
                });
            };
            let name = rest[..eq].trim();
            let name = name.strip_prefix("mpc.").unwrap_or(name).to_string();
            let rhs = rest[eq + 1..].trim();
            if let Some(body) = rhs.strip_prefix('[') {
                open = Some((name, Vec::new(), Vec::new(), line_no));
                rest = body;
            } else {
                let value = rhs.trim_end_matches(';').trim();
                if value.starts_with('\'') || value.starts_with('"') {
                    continue;
                }
                out.scalars.insert(name, parse_number(value, line_no)?);
                continue;
            }
        }
        let Some((_, rows, row, _)) = open.as_mut() else {
            continue;
        };
        let mut closed = false;
        let body = match rest.find(']') {
            Some(p) => {
                closed = true;
                if !rest[p + 1..].trim().trim_end_matches(';').trim().is_empty() {
                    return Err(CaseError::Syntax {
                        line: line_no,
                        msg: "trailing text after `]`".into(),
                    });
                }
                &rest[..p]
            }
            None => rest,
        };
        for (k, segment) in body.split(';').enumerate() {
            if k > 0 && !row.is_empty() {
                rows.push(std::mem::take(row));
            }
            for tok in segment.split(|c: char| c.is_whitespace() || c == ',') {
                if !tok.is_empty() {
                    row.push(parse_number(tok, line_no)?);
                }
            }
        }
        // a newline also ends a row
        if !row.is_empty() {
            rows.push(std::mem::take(row));
        }
        if closed {
            let (name, rows, _, _) = open.take().expect("open matrix");
            out.matrices.insert(name, rows);
        }
    }
    if let Some((name, _, _, line)) = open {
        return Err(CaseError::Syntax {
            line,
            msg: format!("matrix `{name}` is never closed"),
        });
    }
    Ok(out)
}

fn checked_id(v: f64, table: &'static str, row: usize) -> Result<BusId, CaseError> {
    if v.fract() != 0.0 || !(0.0..=f64::from(u32::MAX)).contains(&v) {
        return Err(CaseError::Value {
            table,
            row,
            msg: format!("bus id {v} is not a non-negative integer"),
        });
    }
    Ok(v as BusId)
}

fn need(table: &'static str, rows: &[Vec<f64>], cols: usize) -> Result<(), CaseError> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() < cols {
            return Err(CaseError::ShortRow {
                table,
                row: i + 1,
                found: r.len(),
                need: cols,
            });
        }
    }
    Ok(())
}

pub fn parse_matpower(text: &str) -> Result<NetworkGraph, CaseError> {
    let tables = tokenize_tables(text)?;
    let base = tables.scalars.get("baseMVA").copied().unwrap_or(100.0);
    if !(base.is_finite() && base > 0.0) {
        return Err(CaseError::Value {
            table: "baseMVA",
            row: 1,
            msg: format!("{base}"),
        });
    }
    let bus_rows = tables.matrices.get("bus").ok_or(CaseError::MissingTable("bus"))?;
    let branch_rows = tables.matrices.get("branch").ok_or(CaseError::MissingTable("branch"))?;
    let empty = Vec::new();
    let gen_rows = tables.matrices.get("gen").unwrap_or(&empty);
    need("bus", bus_rows, 9)?;
    need("branch", branch_rows, 11)?;
    need("gen", gen_rows, 8)?;

    // Aggregate in-service generation per bus.
    let mut gen: BTreeMap<BusId, (f64, f64, f64)> = BTreeMap::new();
    for (i, r) in gen_rows.iter().enumerate() {
        if r[7] <= 0.0 {
            continue;
        }
        let id = checked_id(r[0], "gen", i + 1)?;
        let e = gen.entry(id).or_insert((0.0, 0.0, r[5]));
        e.0 += r[1];
        e.1 += r[2];
    }

    let mut slack = None;
    let mut buses = Vec::with_capacity(bus_rows.len());
    for (i, r) in bus_rows.iter().enumerate() {
        let id = checked_id(r[0], "bus", i + 1)?;
        let generating = gen.get(&id);
        let kind = match r[1] as i64 {
            3 => {
                if let Some(prev) = slack.replace(id) {
                    return Err(CaseError::MultipleSlack(prev, id));
                }
                BusKind::Slack
            }
            2 if generating.is_some() => BusKind::Generator,
            1 | 2 => BusKind::Load,
            t => {
                return Err(CaseError::Value {
                    table: "bus",
                    row: i + 1,
                    msg: format!("unsupported bus type {t}"),
                })
            }
        };
        let (pg, qg, vg) = generating.copied().unwrap_or((0.0, 0.0, r[7]));
        buses.push(Bus {
            id,
            kind,
            shunt_g: r[4] / base,
            shunt_b: r[5] / base,
            p_inj: (pg - r[2]) / base,
            q_inj: (qg - r[3]) / base,
            v_set: (kind != BusKind::Load).then_some(vg),
            true_vmag: Some(r[7]),
            true_angle: Some(r[8].to_radians()),
        });
    }
    let slack = slack.ok_or(CaseError::MissingSlack)?;

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (i, r) in branch_rows.iter().enumerate() {
        let tap = if r[8] == 0.0 { 1.0 } else { r[8] };
        branches.push(Branch {
            from_bus: checked_id(r[0], "branch", i + 1)?,
            to_bus: checked_id(r[1], "branch", i + 1)?,
            r: r[2],
            x: r[3],
            b_charging: r[4],
            tap_ratio: tap,
            phase_shift: r[9].to_radians(),
            in_service: r[10] > 0.0,
        });
    }
    Ok(NetworkGraph::new(buses, branches, slack, base)?)
}
