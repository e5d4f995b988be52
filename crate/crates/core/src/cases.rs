//! Bundled benchmark cases.

use crate::network::NetworkCase;

pub const WSCC9_TEXT: &str = include_str!("../cases/case9.m");
pub const TWO_BUS_JSON: &str = include_str!("../cases/two_bus.json");
/// Stand-in 4-bus system: 2 PQ, 1 PV, 1 slack (Grainger & Stevenson example data).
pub const FOUR_BUS_JSON: &str = include_str!("../cases/four_bus.json");

/// WSCC 9-bus system.
pub fn wscc9() -> NetworkCase {
    NetworkCase::load(WSCC9_TEXT).expect("bundled 9-bus case parses")
}

/// Slack plus one PQ bus over a lossless x = 1 p.u. line, no load.
pub fn two_bus() -> NetworkCase {
    NetworkCase::load(TWO_BUS_JSON).expect("bundled two-bus case parses")
}

pub fn four_bus() -> NetworkCase {
    NetworkCase::load(FOUR_BUS_JSON).expect("bundled 4-bus case parses")
}

/// Resolves `case9`, `two-bus`, `four-bus` to bundled cases.
pub fn by_name(name: &str) -> Option<NetworkCase> {
    match name {
        "case9" | "wscc9" | "9-bus" => Some(wscc9()),
        "two-bus" | "2-bus" => Some(two_bus()),
        "four-bus" | "4-bus" => Some(four_bus()),
        _ => None,
    }
}
