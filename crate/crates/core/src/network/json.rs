use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Bus, BusType, LabelledBranch, NetworkCase};
use crate::error::{Error, Result};

fn default_base() -> f64 {
    100.0
}

fn one() -> f64 {
    1.0
}

/// Native case document. All quantities are p.u. on `base_mva`, angles in radians.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonCase {
    #[serde(default = "default_base")]
    pub base_mva: f64,
    pub buses: Vec<JsonBus>,
    pub branches: Vec<JsonBranch>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonBus {
    pub id: u32,
    #[serde(rename = "type")]
    pub kind: BusType,
    #[serde(default = "one")]
    pub v_set: f64,
    #[serde(default)]
    pub angle: f64,
    #[serde(default)]
    pub p_inj: f64,
    #[serde(default)]
    pub q_inj: f64,
    #[serde(default)]
    pub shunt_g: f64,
    #[serde(default)]
    pub shunt_b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonBranch {
    pub from: u32,
    pub to: u32,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_charging: f64,
    #[serde(default)]
    pub tap: f64,
    #[serde(default)]
    pub phase_shift: f64,
}

pub(super) fn parse(text: &str) -> Result<NetworkCase> {
    let doc: JsonCase = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let buses = doc
        .buses
        .iter()
        .map(|b| Bus {
            id: b.id,
            kind: b.kind,
            v_set: b.v_set,
            angle: b.angle,
            p_inj: b.p_inj,
            q_inj: b.q_inj,
            shunt: Complex64::new(b.shunt_g, b.shunt_b),
        })
        .collect();
    let branches = doc
        .branches
        .iter()
        .map(|br| LabelledBranch {
            from: br.from,
            to: br.to,
            r: br.r,
            x: br.x,
            b_charging: br.b_charging,
            tap: br.tap,
            phase_shift: br.phase_shift,
        })
        .collect();
    NetworkCase::new(doc.base_mva, buses, branches)
}

pub(super) fn to_json(case: &NetworkCase) -> JsonCase {
    JsonCase {
        base_mva: case.base_mva,
        buses: case
            .buses
            .iter()
            .map(|b| JsonBus {
                id: b.id,
                kind: b.kind,
                v_set: b.v_set,
                angle: b.angle,
                p_inj: b.p_inj,
                q_inj: b.q_inj,
                shunt_g: b.shunt.re,
                shunt_b: b.shunt.im,
            })
            .collect(),
        branches: case
            .branches
            .iter()
            .map(|br| JsonBranch {
                from: case.buses[br.from].id,
                to: case.buses[br.to].id,
                r: br.r,
                x: br.x,
                b_charging: br.b_charging,
                tap: br.tap,
                phase_shift: br.phase_shift,
            })
            .collect(),
    }
}
