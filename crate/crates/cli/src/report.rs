use std::io::Write;

use anyhow::Result;
use lowrank_opf::engine::TraceRow;
use lowrank_opf::{Certificate, Network64, SolveReport64};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct BusVoltage {
    pub bus: usize,
    pub vm: f64,
    pub va_deg: f64,
}

/// JSON body of `lropf solve`. Keys are fixed; `voltages` is present only for
/// a confirmed rank-one solution and `certificate` is null when the target
/// infeasibility was not reached.
#[derive(Debug, Serialize)]
pub struct SolveJson {
    pub objective: f64,
    pub infeasibility: f64,
    pub iterations: usize,
    pub rank: usize,
    pub time_s: f64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voltages: Option<Vec<BusVoltage>>,
    pub certificate: Option<Certificate>,
}

impl SolveJson {
    pub fn new(rep: &SolveReport64, net: &Network64) -> Self {
        // angles are reported relative to the reference bus
        let voltages = rep.voltages.as_ref().map(|v| {
            let va_ref = v.get(net.reference_bus()).map_or(0.0, |z| z.arg());
            v.iter()
                .zip(&net.buses)
                .map(|(v, b)| BusVoltage { bus: b.id, vm: v.norm(), va_deg: wrap_deg((v.arg() - va_ref).to_degrees()) })
                .collect()
        });
        SolveJson {
            objective: rep.objective,
            infeasibility: rep.t_final,
            iterations: rep.iterations,
            rank: rep.rank_numeric,
            time_s: rep.wall_time,
            status: rep.status.to_string(),
            voltages,
            certificate: rep.certificate.clone(),
        }
    }
}

fn wrap_deg(d: f64) -> f64 {
    let w = (d + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

pub fn write_trace<W: Write>(out: W, rows: &[TraceRow<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "objective", "T", "mu", "accepted"])?;
    for row in rows {
        w.write_record([
            row.iter.to_string(),
            row.objective.to_string(),
            row.infeasibility.to_string(),
            row.mu.to_string(),
            u8::from(row.accepted).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
