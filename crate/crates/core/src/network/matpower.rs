//! Importer for matrix-style text cases (`mpc.bus`, `mpc.gen`, `mpc.branch`).
//!
//! Only the columns needed for a balanced power flow are read. Loads, generation
//! and shunts are converted to p.u. on `mpc.baseMVA`; angles to radians.

use std::collections::HashMap;

use num_complex::Complex64;

use super::{Bus, BusType, LabelledBranch, NetworkCase};
use crate::error::{Error, Result};

pub(super) fn parse(text: &str) -> Result<NetworkCase> {
    let mut base_mva = 100.0;
    let mut tables: HashMap<&'static str, Vec<Vec<f64>>> = HashMap::new();

    let cleaned: Vec<String> = text
        .lines()
        .map(|l| match l.find('%') {
            Some(pos) => l[..pos].to_string(),
            None => l.to_string(),
        })
        .collect();
    let body = cleaned.join("\n");

    let mut rest = body.as_str();
    while let Some(pos) = rest.find("mpc.") {
        rest = &rest[pos + 4..];
        let name_end = rest
            .find(|c: char| !(c.is_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        let name = &rest[..name_end];
        let after = rest[name_end..].trim_start();
        let Some(after) = after.strip_prefix('=') else {
            continue;
        };
        let after = after.trim_start();
        if name == "baseMVA" {
            let end = after.find(';').unwrap_or(after.len());
            base_mva = after[..end].trim().parse().map_err(|_| {
                Error::Parse(format!("bad baseMVA value '{}'", after[..end].trim()))
            })?;
            continue;
        }
        let key = match name {
            "bus" => "bus",
            "gen" => "gen",
            "branch" => "branch",
            _ => continue,
        };
        let Some(open) = after.strip_prefix('[') else {
            return Err(Error::Parse(format!("expected '[' after mpc.{name}")));
        };
        let close = open
            .find(']')
            .ok_or_else(|| Error::Parse(format!("unterminated mpc.{name} table")))?;
        tables.insert(key, parse_rows(&open[..close], name)?);
        rest = &open[close..];
    }

    let bus_rows = tables
        .remove("bus")
        .ok_or_else(|| Error::Parse("mpc.bus table not found".into()))?;
    let gen_rows = tables.remove("gen").unwrap_or_default();
    let branch_rows = tables
        .remove("branch")
        .ok_or_else(|| Error::Parse("mpc.branch table not found".into()))?;

    build(base_mva, &bus_rows, &gen_rows, &branch_rows)
}

fn parse_rows(block: &str, name: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for raw in block.split([';', '\n']) {
        let fields: Vec<&str> = raw
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        let row = fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number '{f}' in mpc.{name}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn column(row: &[f64], idx: usize, table: &str) -> Result<f64> {
    row.get(idx)
        .copied()
        .ok_or_else(|| Error::Parse(format!("mpc.{table} row has only {} columns", row.len())))
}

fn build(
    base: f64,
    bus_rows: &[Vec<f64>],
    gen_rows: &[Vec<f64>],
    branch_rows: &[Vec<f64>],
) -> Result<NetworkCase> {
    // bus: BUS_I TYPE PD QD GS BS AREA VM VA ...
    // gen: GEN_BUS PG QG QMAX QMIN VG MBASE STATUS ...
    // branch: F T R X B RATEA RATEB RATEC RATIO ANGLE STATUS ...
    struct GenSum {
        p: f64,
        q: f64,
        vg: f64,
    }
    let mut gens: HashMap<u32, GenSum> = HashMap::new();
    for row in gen_rows {
        let status = row.get(7).copied().unwrap_or(1.0);
        if status <= 0.0 {
            continue;
        }
        let id = column(row, 0, "gen")? as u32;
        let entry = gens.entry(id).or_insert(GenSum {
            p: 0.0,
            q: 0.0,
            vg: column(row, 5, "gen")?,
        });
        entry.p += column(row, 1, "gen")?;
        entry.q += column(row, 2, "gen")?;
    }

    let mut buses = Vec::with_capacity(bus_rows.len());
    for row in bus_rows {
        let id = column(row, 0, "bus")? as u32;
        let code = column(row, 1, "bus")? as i64;
        let gen = gens.get(&id);
        let kind = match code {
            1 => BusType::Pq,
            // A PV bus without an in-service generator has nothing to hold its voltage.
            2 if gen.is_some() => BusType::Pv,
            2 => BusType::Pq,
            3 => BusType::Slack,
            4 => return Err(Error::InvalidCase(format!("bus {id} is isolated"))),
            other => {
                return Err(Error::Parse(format!(
                    "unknown bus type {other} at bus {id}"
                )))
            }
        };
        let (pg, qg) = gen.map_or((0.0, 0.0), |g| (g.p, g.q));
        let vm = column(row, 7, "bus")?;
        let v_set = match (kind, gen) {
            (BusType::Pq, _) => vm,
            (_, Some(g)) => g.vg,
            (_, None) => vm,
        };
        buses.push(Bus {
            id,
            kind,
            v_set,
            angle: column(row, 8, "bus")?.to_radians(),
            p_inj: (pg - column(row, 2, "bus")?) / base,
            q_inj: (qg - column(row, 3, "bus")?) / base,
            shunt: Complex64::new(column(row, 4, "bus")? / base, column(row, 5, "bus")? / base),
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for row in branch_rows {
        let status = row.get(10).copied().unwrap_or(1.0);
        if status <= 0.0 {
            continue;
        }
        branches.push(LabelledBranch {
            from: column(row, 0, "branch")? as u32,
            to: column(row, 1, "branch")? as u32,
            r: column(row, 2, "branch")?,
            x: column(row, 3, "branch")?,
            b_charging: column(row, 4, "branch")?,
            tap: row.get(8).copied().unwrap_or(0.0),
            phase_shift: row.get(9).copied().unwrap_or(0.0).to_radians(),
        });
    }

    NetworkCase::new(base, buses, branches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_nine_bus_tables() {
        let case = crate::cases::wscc9();
        assert_eq!(case.base_mva, 100.0);
        assert_eq!(case.branches.len(), 9);
        let bus5 = &case.buses[case.index_of(5).unwrap()];
        assert_eq!(bus5.kind, BusType::Pq);
        assert!((bus5.p_inj + 0.9).abs() < 1e-15);
        assert!((bus5.q_inj + 0.3).abs() < 1e-15);
        let bus2 = &case.buses[case.index_of(2).unwrap()];
        assert_eq!(bus2.kind, BusType::Pv);
        assert!((bus2.p_inj - 1.63).abs() < 1e-15);
        assert_eq!(bus2.v_set, 1.025);
        let slack = case.buses.last().unwrap();
        assert_eq!((slack.id, slack.v_set), (1, 1.04));
    }

    #[test]
    fn missing_table_is_reported() {
        let err = parse("mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 345 1 1.1 0.9;];");
        assert!(matches!(err, Err(Error::Parse(_))));
    }

    #[test]
    fn reads_taps_and_skips_out_of_service() {
        let text = "
            mpc.baseMVA = 50;
            mpc.bus = [
                1 3 0 0 0 0 1 1.0 0 1 1 1.1 0.9;
                2 1 10 5 0 5 1 1.0 0 1 1 1.1 0.9;
            ];
            mpc.gen = [ 1 0 0 10 -10 1.02 50 1 10 0; ];
            mpc.branch = [
                1 2 0.01 0.1 0.02 0 0 0 0.95 3 1 -360 360;
                1 2 0.01 0.1 0.02 0 0 0 0 0 0 -360 360;
            ];
        ";
        let case = parse(text).unwrap();
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.branches[0].tap, 0.95);
        assert!((case.branches[0].phase_shift - 3f64.to_radians()).abs() < 1e-15);
        assert_eq!(case.buses[0].p_inj, -0.2);
        assert_eq!(case.buses[0].shunt.im, 0.1);
        assert_eq!(case.buses[1].v_set, 1.02);
    }
}
