//! Static CAL analysis of a scenario document.

use std::collections::BTreeMap;

use anyhow::Result;
use calsim::fedmodel::{derive_offsets, logical_delay_matrix, CoordinationMode, ExecBounds};
use calsim::maxplus::{
    build_gamma, cal_unavailability, classify_cycles, pessimistic_offsets, Cycle, MaxPlusMatrix, MaxPlusVector,
    OffsetStatus,
};
use calsim::timekit::Interval;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::table::{matrix_table, vector_table};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub nodes: Vec<String>,
    pub weight: Interval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OffsetTable {
    Derived { sta: BTreeMap<String, Interval>, staa: BTreeMap<String, Interval> },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CalReport {
    pub nodes: Vec<String>,
    pub mode: CoordinationMode,
    pub apparent_latency: MaxPlusMatrix,
    pub inconsistency: MaxPlusMatrix,
    pub gamma: MaxPlusMatrix,
    pub cycles: String,
    /// `Unique`, `NonUnique`, `Unbounded` or `NoConstraint`.
    pub offset_status: String,
    pub witness: Option<Witness>,
    pub physical: MaxPlusVector,
    pub pessimistic_offsets: MaxPlusVector,
    pub processing_offsets: MaxPlusVector,
    pub unavailability: MaxPlusVector,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sta_staa: Option<OffsetTable>,
}

impl CalReport {
    pub fn all_offsets_infinite(&self) -> bool {
        self.pessimistic_offsets.as_slice().iter().all(|v| v.is_inf())
    }
}

fn witness(c: &Cycle, names: &[String]) -> Witness {
    Witness { nodes: c.nodes.iter().map(|&k| names[k].clone()).collect(), weight: c.weight }
}

/// `X_ij`: the slowest reaction of the writer `j`.
fn exec_matrix(exec: &ExecBounds, n: usize) -> MaxPlusMatrix {
    let worst: Vec<Interval> =
        (0..n).map(|j| exec.0.get(j).and_then(|r| r.iter().copied().max()).unwrap_or(Interval::ZERO)).collect();
    MaxPlusMatrix::from_fn(n, |_, j| worst[j])
}

fn sum(parts: &[Interval]) -> Interval {
    parts.iter().try_fold(Interval::ZERO, |acc, p| acc.checked_add(*p)).unwrap_or(Interval::INF)
}

pub fn cal(cfg: &ScenarioConfig) -> Result<CalReport> {
    let sim = cfg.to_sim();
    let spec = &sim.federation;
    let n = cfg.n();
    let names: Vec<String> = spec.federates.iter().map(|f| f.name.clone()).collect();
    let b = &cfg.bounds;

    let latency = b.latency.clone().unwrap_or_else(|| sim.latency_bounds());
    let clock_error = b.clock_error.clone().unwrap_or_else(|| sim.clock_error_bounds());
    let exec = b.exec.clone().unwrap_or_default();
    let x = exec_matrix(&exec, n);
    let inconsistency = match &b.inconsistency {
        Some(m) => m.clone(),
        None => logical_delay_matrix(spec)?,
    };
    let o = b.processing_offsets.clone().unwrap_or_else(|| MaxPlusVector::filled(n, Interval::ZERO));
    let z = b.physical.clone().unwrap_or_else(|| {
        MaxPlusVector::new(
            spec.federates
                .iter()
                .map(|f| if f.actions.iter().any(|a| a.is_physical()) { Interval::ZERO } else { Interval::NEG_INF })
                .collect(),
        )
    });
    let apparent = b.apparent_latency.clone().unwrap_or_else(|| {
        MaxPlusMatrix::from_fn(n, |i, j| sum(&[o.get(j), x.get(i, j), latency.get(i, j), clock_error.get(i, j)]))
    });

    // No self-edges, and pairs with no write path contribute nothing.
    let masked = |i: usize, j: usize| i == j || inconsistency.get(i, j).is_inf();
    let lat = MaxPlusMatrix::from_fn(n, |i, j| if masked(i, j) { Interval::NEG_INF } else { apparent.get(i, j) });
    let inc = MaxPlusMatrix::from_fn(n, |i, j| if masked(i, j) { Interval::ZERO } else { inconsistency.get(i, j) });
    let gamma = build_gamma(&lat, &inc, &o)?;

    let report = pessimistic_offsets(&gamma, &z)?;
    let (offset_status, witness) = match &report.status {
        OffsetStatus::Unique => ("unique".to_string(), None),
        OffsetStatus::NonUnique(c) => ("non_unique".to_string(), Some(witness(c, &names))),
        OffsetStatus::Unbounded(c) => ("unbounded".to_string(), Some(witness(c, &names))),
        OffsetStatus::NoConstraint => ("no_constraint".to_string(), None),
    };
    let unavailability = cal_unavailability(&gamma, &o)?;

    let sta_staa = (spec.mode == CoordinationMode::Decentralized).then(|| {
        match derive_offsets(spec, &latency, &clock_error, &exec) {
            Ok(d) => OffsetTable::Derived {
                sta: names.iter().cloned().zip(d.sta.iter().copied()).collect(),
                staa: d
                    .staa
                    .iter()
                    .map(|(&(f, p), v)| (format!("{}.{}", names[f], spec.federates[f].inputs[p].name), *v))
                    .collect(),
            },
            Err(e) => OffsetTable::Failed { error: e.to_string() },
        }
    });

    Ok(CalReport {
        nodes: names,
        mode: spec.mode,
        apparent_latency: apparent,
        inconsistency,
        cycles: classify_cycles(&gamma).to_string(),
        gamma,
        offset_status,
        witness,
        physical: z,
        pessimistic_offsets: report.offsets,
        processing_offsets: o,
        unavailability,
        sta_staa,
    })
}

impl CalReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&matrix_table("apparent latency L[i][j] (write on j, seen on i)", &self.nodes, &self.apparent_latency));
        out.push_str(&matrix_table("inconsistency bound C[i][j]", &self.nodes, &self.inconsistency));
        out.push_str(&matrix_table("gamma", &self.nodes, &self.gamma));
        out.push_str(&format!("heaviest cycle: {}\n", self.cycles));
        match (&self.offset_status[..], &self.witness) {
            ("unbounded", Some(w)) => out.push_str(&format!(
                "offsets unbounded: positive cycle {} -> {} (weight {}); every node waits forever\n",
                w.nodes.join(" -> "),
                w.nodes[0],
                w.weight
            )),
            ("non_unique", Some(w)) => out.push_str(&format!(
                "warning: zero-weight cycle {} -> {}; the offsets below are one of several solutions\n",
                w.nodes.join(" -> "),
                w.nodes[0]
            )),
            ("no_constraint", _) => out.push_str("no federate has physically timestamped inputs\n"),
            _ => {}
        }
        out.push_str(&vector_table(
            &self.nodes,
            &[
                ("Z", &self.physical),
                ("O=G*Z", &self.pessimistic_offsets),
                ("O used", &self.processing_offsets),
                ("A=(I+G)O", &self.unavailability),
            ],
        ));
        match &self.sta_staa {
            Some(OffsetTable::Derived { sta, staa }) => {
                out.push_str(&format!("{:<20}{:>12}\n", "federate", "STA"));
                for (k, v) in sta {
                    out.push_str(&format!("{k:<20}{:>12}\n", v.to_string()));
                }
                out.push_str(&format!("{:<20}{:>12}\n", "input", "STAA"));
                for (k, v) in staa {
                    out.push_str(&format!("{k:<20}{:>12}\n", v.to_string()));
                }
            }
            Some(OffsetTable::Failed { error }) => out.push_str(&format!("STA/STAA: {error}\n")),
            None => {}
        }
        out
    }
}
