//! CSV emitters for particle dumps, run traces and diagnostic tables.
//!
//! Floats are written in Rust's shortest round-tripping decimal form, so
//! identical runs produce byte-identical files.

use crate::cloud::{CloudError, ParticleCloud};
use crate::diagnostics::{KdeTable, ModeReport};
use crate::engine::RunTrace;
use std::io::Write;
use std::path::Path;

/// One row per particle, columns `x1..xd`.
pub fn particles_csv(cloud: &ParticleCloud) -> String {
    let mut out = String::new();
    for j in 0..cloud.dim() {
        if j > 0 {
            out.push(',');
        }
        out.push_str(&format!("x{}", j + 1));
    }
    out.push('\n');
    for row in cloud.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_particles_csv<P: AsRef<Path>>(path: P, cloud: &ParticleCloud) -> std::io::Result<()> {
    write_string(path, &particles_csv(cloud))
}

/// Reads a particle dump produced by [`write_particles_csv`].
pub fn read_particles_csv<P: AsRef<Path>>(path: P) -> Result<ParticleCloud, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let dim = header.split(',').count();
    let mut data = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| format!("line {}: bad number '{field}'", i + 2))?;
            data.push(v);
        }
    }
    ParticleCloud::from_flat(data, dim).map_err(|e: CloudError| e.to_string())
}

/// Trace columns: `t,eta,anneal,err,sm_loss,oracle_kl,oracle_w2,elapsed_ms`.
/// Missing optional fields are left empty. The timing column is empty
/// unless `with_timing` is set, so that identical runs produce
/// byte-identical files; opt in for profiling output.
pub fn trace_csv(trace: &RunTrace, with_timing: bool) -> String {
    let mut out = String::from("t,eta,anneal,err,sm_loss,oracle_kl,oracle_w2,elapsed_ms\n");
    for row in &trace.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.t,
            row.eta,
            row.anneal,
            row.err,
            opt(row.sm_loss),
            opt(row.oracle_kl),
            opt(row.oracle_w2),
            if with_timing {
                format!("{}", row.elapsed_ms)
            } else {
                String::new()
            },
        ));
    }
    out
}

pub fn write_trace_csv<P: AsRef<Path>>(
    path: P,
    trace: &RunTrace,
    with_timing: bool,
) -> std::io::Result<()> {
    write_string(path, &trace_csv(trace, with_timing))
}

/// KDE table columns: `grid_x,density`.
pub fn kde_csv(table: &KdeTable) -> String {
    let mut out = String::from("grid_x,density\n");
    for (g, d) in table.grid.iter().zip(&table.density) {
        out.push_str(&format!("{g},{d}\n"));
    }
    out
}

pub fn write_kde_csv<P: AsRef<Path>>(path: P, table: &KdeTable) -> std::io::Result<()> {
    write_string(path, &kde_csv(table))
}

/// Mode report columns: `mode_index,fraction,displacement`.
pub fn mode_report_csv(report: &ModeReport) -> String {
    let mut out = String::from("mode_index,fraction,displacement\n");
    for (i, (f, d)) in report.fractions.iter().zip(&report.displacements).enumerate() {
        out.push_str(&format!("{i},{f},{d}\n"));
    }
    out
}

pub fn write_mode_report_csv<P: AsRef<Path>>(path: P, report: &ModeReport) -> std::io::Result<()> {
    write_string(path, &mode_report_csv(report))
}

/// Structured `key=value` report text.
pub fn key_values_text(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out
}

pub fn write_key_values<P: AsRef<Path>>(
    path: P,
    pairs: &[(String, String)],
) -> std::io::Result<()> {
    write_string(path, &key_values_text(pairs))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn write_string<P: AsRef<Path>>(path: P, content: &str) -> std::io::Result<()> {
    if let Some(parent) = path.as_ref().parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(content.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{StopReason, TraceRow};

    #[test]
    fn particles_round_trip() {
        let cloud =
            ParticleCloud::from_rows(&[vec![0.1, -2.5], vec![1.0 / 3.0, 1e-17]]).unwrap();
        let mut path = std::env::temp_dir();
        path.push(format!("wgdflow_io_test_{}.csv", std::process::id()));
        write_particles_csv(&path, &cloud).unwrap();
        let restored = read_particles_csv(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(cloud, restored);
    }

    #[test]
    fn trace_header_and_empty_optionals() {
        let trace = RunTrace {
            rows: vec![TraceRow {
                t: 0,
                eta: 0.01,
                anneal: 0.0,
                err: 1.5,
                sm_loss: None,
                oracle_kl: Some(2.0),
                oracle_w2: None,
                elapsed_ms: 3.25,
            }],
            stop_reason: StopReason::MaxIters,
        };
        let text = trace_csv(&trace, true);
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,eta,anneal,err,sm_loss,oracle_kl,oracle_w2,elapsed_ms"
        );
        assert_eq!(lines.next().unwrap(), "0,0.01,0,1.5,,2,,3.25");
        let untimed = trace_csv(&trace, false);
        assert!(untimed.lines().nth(1).unwrap().ends_with("2,,"));
    }

    #[test]
    fn deterministic_serialization() {
        let cloud = ParticleCloud::from_rows(&[vec![0.1234567891234, 7.0]]).unwrap();
        assert_eq!(particles_csv(&cloud), particles_csv(&cloud));
    }
}
