//! Network cases and nodal admittance assembly.
//!
//! Buses are stored in canonical order: PQ buses first, then PV buses, with the
//! slack bus last. Original bus labels are kept so that reports can refer to
//! buses the way the case file does.

mod json;
mod matpower;

use std::collections::{HashMap, VecDeque};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use json::{JsonBranch, JsonBus, JsonCase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Pq,
    Pv,
    Slack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// Label used by the source document.
    pub id: u32,
    pub kind: BusType,
    /// Voltage magnitude set-point (PV, slack) or initial guess (PQ), p.u.
    pub v_set: f64,
    /// Angle set-point at the slack, initial guess elsewhere, radians.
    pub angle: f64,
    /// Scheduled net active injection, p.u.
    pub p_inj: f64,
    /// Scheduled net reactive injection, p.u. (only binding at PQ buses).
    pub q_inj: f64,
    /// Bus shunt admittance, p.u.
    pub shunt: Complex64,
}

/// A series branch between two canonical bus indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, split evenly between both ends.
    pub b_charging: f64,
    /// Off-nominal tap ratio at the from side; 0 means nominal.
    pub tap: f64,
    /// Phase shift, radians.
    pub phase_shift: f64,
}

impl Branch {
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x)
    }

    fn tap_phasor(&self) -> Complex64 {
        let ratio = if self.tap == 0.0 { 1.0 } else { self.tap };
        Complex64::from_polar(ratio, self.phase_shift)
    }

    fn sort_key(&self) -> (usize, usize, u64, u64, u64, u64, u64) {
        (
            self.from,
            self.to,
            self.r.to_bits(),
            self.x.to_bits(),
            self.b_charging.to_bits(),
            self.tap.to_bits(),
            self.phase_shift.to_bits(),
        )
    }
}

/// Index arithmetic for the canonical bus ordering.
///
/// Reduced coordinates are `(δ_1..δ_{N-1}, V_1..V_{N_l})`. Full injection rows are
/// `(P_1..P_{N-1}, Q_1..Q_{N-1})`; the reduced injection rows are the first `n` of
/// them, since PQ buses come first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub buses: usize,
    pub pq: usize,
    pub pv: usize,
}

impl Layout {
    pub fn new(buses: usize, pq: usize, pv: usize) -> Self {
        assert_eq!(
            buses,
            pq + pv + 1,
            "bus partition must leave exactly one slack"
        );
        Layout { buses, pq, pv }
    }

    /// Reduced dimension `n = 2 N_l + N_g`.
    pub fn dim(&self) -> usize {
        self.buses - 1 + self.pq
    }

    pub fn angle_count(&self) -> usize {
        self.buses - 1
    }

    /// Rows of the full map, `2 (N - 1)`.
    pub fn full_rows(&self) -> usize {
        2 * (self.buses - 1)
    }

    pub fn slack(&self) -> usize {
        self.buses - 1
    }

    pub fn is_pq(&self, bus: usize) -> bool {
        bus < self.pq
    }

    pub fn angle_coord(&self, bus: usize) -> Option<usize> {
        (bus < self.buses - 1).then_some(bus)
    }

    pub fn voltage_coord(&self, bus: usize) -> Option<usize> {
        (bus < self.pq).then(|| self.buses - 1 + bus)
    }

    pub fn p_row(&self, bus: usize) -> usize {
        bus
    }

    pub fn q_row(&self, bus: usize) -> usize {
        self.buses - 1 + bus
    }

    /// Bus a reduced coordinate belongs to, and whether it is an angle.
    pub fn coord_bus(&self, coord: usize) -> (usize, bool) {
        if coord < self.buses - 1 {
            (coord, true)
        } else {
            (coord - (self.buses - 1), false)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub base_mva: f64,
    /// Buses in canonical order.
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    layout: Layout,
}

impl NetworkCase {
    /// Validates and canonicalizes a bus/branch list given in source labels.
    ///
    /// `branches` refer to buses by label.
    pub fn new(base_mva: f64, buses: Vec<Bus>, branches: Vec<LabelledBranch>) -> Result<Self> {
        if !(base_mva > 0.0) {
            return Err(Error::InvalidCase(format!(
                "base power must be positive, got {base_mva}"
            )));
        }
        if buses.len() < 2 {
            return Err(Error::InvalidCase("a case needs at least two buses".into()));
        }
        let mut seen: HashMap<u32, BusType> = HashMap::new();
        let mut slack: Option<u32> = None;
        for bus in &buses {
            if seen.insert(bus.id, bus.kind).is_some() {
                return Err(Error::DuplicateBus(bus.id));
            }
            if bus.kind == BusType::Slack {
                if let Some(first) = slack {
                    return Err(Error::MultipleSlack(first, bus.id));
                }
                slack = Some(bus.id);
            }
            if bus.kind != BusType::Pq && !(bus.v_set > 0.0) {
                return Err(Error::InvalidCase(format!(
                    "bus {} needs a positive voltage set-point",
                    bus.id
                )));
            }
        }
        if slack.is_none() {
            return Err(Error::MissingSlack);
        }

        // Stable partition keeps the source order inside each class.
        let mut ordered: Vec<Bus> = Vec::with_capacity(buses.len());
        for kind in [BusType::Pq, BusType::Pv, BusType::Slack] {
            ordered.extend(buses.iter().filter(|b| b.kind == kind).cloned());
        }
        let pq = ordered.iter().filter(|b| b.kind == BusType::Pq).count();
        let pv = ordered.iter().filter(|b| b.kind == BusType::Pv).count();
        let layout = Layout::new(ordered.len(), pq, pv);

        let index: HashMap<u32, usize> =
            ordered.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let mut canonical = Vec::with_capacity(branches.len());
        for br in branches {
            let from = *index.get(&br.from).ok_or_else(|| {
                Error::InvalidCase(format!("branch refers to unknown bus {}", br.from))
            })?;
            let to = *index.get(&br.to).ok_or_else(|| {
                Error::InvalidCase(format!("branch refers to unknown bus {}", br.to))
            })?;
            if from == to {
                return Err(Error::InvalidCase(format!(
                    "branch {}-{} is a self loop",
                    br.from, br.to
                )));
            }
            canonical.push(Branch {
                from,
                to,
                r: br.r,
                x: br.x,
                b_charging: br.b_charging,
                tap: br.tap,
                phase_shift: br.phase_shift,
            });
        }

        let case = NetworkCase {
            base_mva,
            buses: ordered,
            branches: canonical,
            layout,
        };
        case.check_connected()?;
        Ok(case)
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.buses.len();
        let mut adjacency = vec![Vec::new(); n];
        for br in &self.branches {
            adjacency[br.from].push(br.to);
            adjacency[br.to].push(br.from);
        }
        let mut reached = vec![false; n];
        let mut queue = VecDeque::from([self.layout.slack()]);
        reached[self.layout.slack()] = true;
        while let Some(bus) = queue.pop_front() {
            for &next in &adjacency[bus] {
                if !reached[next] {
                    reached[next] = true;
                    queue.push_back(next);
                }
            }
        }
        match reached.iter().position(|r| !r) {
            Some(bus) => Err(Error::Disconnected(self.buses[bus].id)),
            None => Ok(()),
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn bus_count(&self) -> usize {
        self.layout.buses
    }

    pub fn pq_count(&self) -> usize {
        self.layout.pq
    }

    pub fn pv_count(&self) -> usize {
        self.layout.pv
    }

    /// Reduced dimension `n`.
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn bus_ids(&self) -> Vec<u32> {
        self.buses.iter().map(|b| b.id).collect()
    }

    /// Label for a reduced coordinate, e.g. `delta_5` or `v_7`.
    pub fn coord_label(&self, coord: usize) -> String {
        let (bus, is_angle) = self.layout.coord_bus(coord);
        let id = self.buses[bus].id;
        if is_angle {
            format!("delta_{id}")
        } else {
            format!("v_{id}")
        }
    }

    /// Label for a full injection row, e.g. `p_5` or `q_2`.
    pub fn row_label(&self, row: usize) -> String {
        let m = self.layout.angle_count();
        if row < m {
            format!("p_{}", self.buses[row].id)
        } else {
            format!("q_{}", self.buses[row - m].id)
        }
    }

    /// Parses either the native JSON schema or a matrix-style text case.
    pub fn load(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            json::parse(text)
        } else {
            matpower::parse(text)
        }
    }

    pub fn load_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::load(&text)
    }

    pub fn to_json(&self) -> JsonCase {
        json::to_json(self)
    }
}

/// A branch that still refers to buses by their source labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledBranch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    pub tap: f64,
    pub phase_shift: f64,
}

/// Conductance and susceptance parts of the bus admittance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrices {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl AdmittanceMatrices {
    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.g[(i, j)], self.b[(i, j)])
    }

    pub fn size(&self) -> usize {
        self.g.nrows()
    }
}

/// Assembles `Y = G + jB` with the usual pi-model stamps.
///
/// Branches are accumulated in a canonical order so the result does not depend
/// on the order of the branch list.
pub fn build_admittance(case: &NetworkCase) -> Result<AdmittanceMatrices> {
    let n = case.bus_count();
    let mut y = DMatrix::<Complex64>::zeros(n, n);

    let mut order: Vec<&Branch> = case.branches.iter().collect();
    order.sort_by_key(|br| br.sort_key());
    for br in order {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::ZeroImpedance {
                from: case.buses[br.from].id,
                to: case.buses[br.to].id,
            });
        }
        let ys = br.series_admittance();
        let charging = Complex64::new(0.0, br.b_charging / 2.0);
        let t = br.tap_phasor();
        let (f, k) = (br.from, br.to);
        y[(f, f)] += (ys + charging) / t.norm_sqr();
        y[(k, k)] += ys + charging;
        y[(f, k)] -= ys / t.conj();
        y[(k, f)] -= ys / t;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        y[(i, i)] += bus.shunt;
    }

    Ok(AdmittanceMatrices {
        g: y.map(|c| c.re),
        b: y.map(|c| c.im),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    #[test]
    fn nine_bus_dimensions() {
        let case = cases::wscc9();
        assert_eq!(case.bus_count(), 9);
        assert_eq!(case.pq_count(), 6);
        assert_eq!(case.pv_count(), 2);
        assert_eq!(case.dim(), 14);
        assert_eq!(case.buses.last().unwrap().id, 1);
        assert_eq!(case.bus_ids(), vec![4, 5, 6, 7, 8, 9, 2, 3, 1]);
    }

    #[test]
    fn four_bus_dimensions() {
        let case = cases::four_bus();
        assert_eq!(
            (case.bus_count(), case.pq_count(), case.pv_count()),
            (4, 2, 1)
        );
        assert_eq!(case.dim(), 5);
    }

    #[test]
    fn two_bus_dimensions() {
        let case = cases::two_bus();
        assert_eq!(
            (case.bus_count(), case.pq_count(), case.pv_count()),
            (2, 1, 0)
        );
        assert_eq!(case.dim(), 2);
        let layout = case.layout();
        assert_eq!(layout.dim(), layout.angle_count() + layout.pq);
    }

    #[test]
    fn two_bus_admittance_by_hand() {
        let y = build_admittance(&cases::two_bus()).unwrap();
        // y = 1 / (j 1) = -j
        assert_eq!(y.g, DMatrix::zeros(2, 2));
        assert_eq!(y.b, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
    }

    #[test]
    fn nine_bus_row_sums_equal_shunts() {
        let case = cases::wscc9();
        let y = build_admittance(&case).unwrap();
        // Independent oracle: total shunt at each bus is half the charging of
        // every incident branch (no taps in this case) plus the bus shunt.
        let mut shunt = [Complex64::new(0.0, 0.0); 9];
        for br in &case.branches {
            shunt[br.from] += Complex64::new(0.0, br.b_charging / 2.0);
            shunt[br.to] += Complex64::new(0.0, br.b_charging / 2.0);
        }
        for (i, expected) in shunt.iter().enumerate() {
            let row: Complex64 = (0..9).map(|j| y.entry(i, j)).sum();
            assert!(
                (row - expected).norm() < 1e-10,
                "bus {i}: {row} vs {expected}"
            );
        }
        assert_eq!(y.g, y.g.transpose());
        assert_eq!(y.b, y.b.transpose());
    }

    #[test]
    fn shunt_free_rows_vanish() {
        let mut case = cases::wscc9();
        for br in &mut case.branches {
            br.b_charging = 0.0;
        }
        let y = build_admittance(&case).unwrap();
        for i in 0..9 {
            let g: f64 = y.g.row(i).iter().sum();
            let b: f64 = y.b.row(i).iter().sum();
            assert!(g.abs() <= 1e-12 && b.abs() <= 1e-12);
        }
    }

    #[test]
    fn branch_order_does_not_change_bits() {
        let case = cases::wscc9();
        let reference = build_admittance(&case).unwrap();
        let mut shuffled = case.clone();
        shuffled.branches.reverse();
        shuffled.branches.swap(1, 5);
        let again = build_admittance(&shuffled).unwrap();
        for (a, b) in reference.g.iter().zip(again.g.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in reference.b.iter().zip(again.b.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_impedance_is_rejected() {
        let mut case = cases::two_bus();
        case.branches[0].x = 0.0;
        assert!(matches!(
            build_admittance(&case),
            Err(Error::ZeroImpedance { .. })
        ));
    }

    #[test]
    fn off_nominal_tap_stamps() {
        let mut case = cases::two_bus();
        case.branches[0].tap = 0.5;
        let y = build_admittance(&case).unwrap();
        // from side scaled by 1/t^2, mutual terms by 1/t
        let from = case.branches[0].from;
        let to = case.branches[0].to;
        assert!((y.b[(from, from)] + 4.0).abs() < 1e-12);
        assert!((y.b[(to, to)] + 1.0).abs() < 1e-12);
        assert!((y.b[(from, to)] - 2.0).abs() < 1e-12);
        assert!((y.b[(to, from)] - 2.0).abs() < 1e-12);
    }

    fn bus(id: u32, kind: BusType) -> Bus {
        Bus {
            id,
            kind,
            v_set: 1.0,
            angle: 0.0,
            p_inj: 0.0,
            q_inj: 0.0,
            shunt: Complex64::new(0.0, 0.0),
        }
    }

    fn line(from: u32, to: u32) -> LabelledBranch {
        LabelledBranch {
            from,
            to,
            r: 0.0,
            x: 0.1,
            b_charging: 0.0,
            tap: 0.0,
            phase_shift: 0.0,
        }
    }

    #[test]
    fn validation_errors() {
        let err = NetworkCase::new(
            100.0,
            vec![bus(1, BusType::Pq), bus(2, BusType::Pq)],
            vec![line(1, 2)],
        );
        assert!(matches!(err, Err(Error::MissingSlack)));

        let err = NetworkCase::new(
            100.0,
            vec![bus(1, BusType::Slack), bus(2, BusType::Slack)],
            vec![line(1, 2)],
        );
        assert!(matches!(err, Err(Error::MultipleSlack(1, 2))));

        let err = NetworkCase::new(
            100.0,
            vec![bus(1, BusType::Slack), bus(1, BusType::Pq)],
            vec![line(1, 2)],
        );
        assert!(matches!(err, Err(Error::DuplicateBus(1))));

        let err = NetworkCase::new(
            100.0,
            vec![
                bus(1, BusType::Slack),
                bus(2, BusType::Pq),
                bus(3, BusType::Pq),
            ],
            vec![line(1, 2)],
        );
        assert!(matches!(err, Err(Error::Disconnected(3))));

        let err = NetworkCase::new(
            100.0,
            vec![bus(1, BusType::Slack), bus(2, BusType::Pq)],
            vec![],
        );
        assert!(matches!(err, Err(Error::Disconnected(2))));
    }

    #[test]
    fn canonical_order_keeps_labels() {
        let case = NetworkCase::new(
            100.0,
            vec![
                bus(7, BusType::Slack),
                bus(3, BusType::Pv),
                bus(9, BusType::Pq),
                bus(1, BusType::Pq),
            ],
            vec![line(7, 3), line(3, 9), line(9, 1)],
        )
        .unwrap();
        assert_eq!(case.bus_ids(), vec![9, 1, 3, 7]);
        assert_eq!(case.index_of(3), Some(2));
        assert_eq!(case.coord_label(0), "delta_9");
        assert_eq!(case.coord_label(3), "v_9");
        assert_eq!(case.row_label(4), "q_1");
    }
}
