//! CSV and manifest output with a stable column order; identical inputs
//! produce byte-identical files.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::episode::{InfoBandRow, MetricsRow};
use super::montecarlo::McAggregateRow;
use super::sweep::SweepPoint;
use crate::error::Result;

/// Shortest round-trip decimal form (Rust's float Display), so reruns are
/// byte-identical.
fn f(x: f64) -> String {
    format!("{x}")
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: &mut W) -> Result<()> {
    writeln!(
        out,
        "run_id,t,method,target_id,sensor_id,mse_to_centralized,mse_to_truth,trace_cov,cum_bits"
    )?;
    for r in rows {
        let sensor = r.sensor.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.run_id,
            r.t,
            r.method.as_str(),
            r.target_id,
            sensor,
            f(r.mse_to_centralized),
            f(r.mse_to_truth),
            f(r.trace_cov),
            r.cum_bits
        )?;
    }
    Ok(())
}

pub fn write_info_bands_csv<W: Write>(rows: &[InfoBandRow], out: &mut W) -> Result<()> {
    writeln!(out, "run_id,t,target_id,sensor_id,info_trace,central_info_trace")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.run_id,
            r.t,
            r.target_id,
            r.sensor,
            f(r.info_trace),
            f(r.central_info_trace)
        )?;
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(seed: u64, points: &[SweepPoint], out: &mut W) -> Result<()> {
    writeln!(out, "seed,method,rounds,bits_per_node,err_to_central")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{}",
            seed,
            p.method.as_str(),
            p.rounds,
            f(p.bits_per_node),
            f(p.err_to_central)
        )?;
    }
    Ok(())
}

pub fn write_mc_csv<W: Write>(rows: &[McAggregateRow], out: &mut W) -> Result<()> {
    writeln!(
        out,
        "method,t,n_runs,mse_truth_mean,mse_truth_sem,mse_central_mean,trace_cov_mean,bits_per_node_mean"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method.as_str(),
            r.t,
            r.n_runs,
            f(r.mse_truth_mean),
            f(r.mse_truth_sem),
            f(r.mse_central_mean),
            f(r.trace_cov_mean),
            f(r.bits_per_node_mean)
        )?;
    }
    Ok(())
}

/// Run provenance and metric conventions, written next to every output set.
pub struct Manifest<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub config_text: &'a str,
    pub bits_per_scalar: u64,
}

impl Manifest<'_> {
    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut hasher = Sha256::new();
        hasher.update(self.config_text.as_bytes());
        let hash = hasher.finalize();
        writeln!(out, "command = {}", self.command)?;
        writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(out, "seed = {}", self.seed)?;
        writeln!(out, "config_sha256 = {}", hex_string(&hash))?;
        writeln!(out, "bits_per_scalar = {}", self.bits_per_scalar)?;
        writeln!(
            out,
            "convention_distance = relative L2 error of the window mean to the centralized estimate, averaged over nodes"
        )?;
        writeln!(
            out,
            "convention_trace = trace of the final-timestep marginal covariance; network-fused information for drwt aggregates, node mean for ckf and local-only"
        )?;
        writeln!(
            out,
            "convention_bits = one scalar costs bits_per_scalar bits; bits per node is the network total divided by the member count"
        )?;
        Ok(())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Writes `content` produced by `fill` into `dir/name`.
pub fn write_file(dir: &Path, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    fill(&mut buf)?;
    fs::write(dir.join(name), buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::episode::Method;

    #[test]
    fn empty_rows_give_header_only() {
        let mut buf = Vec::new();
        write_metrics_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "run_id,t,method,target_id,sensor_id,mse_to_centralized,mse_to_truth,trace_cov,cum_bits\n"
        );
    }

    #[test]
    fn rows_serialize_deterministically() {
        let rows = vec![MetricsRow {
            run_id: 1,
            t: 3,
            method: Method::Drwt,
            target_id: 0,
            sensor: Some(4),
            mse_to_centralized: 0.125,
            mse_to_truth: f64::INFINITY,
            trace_cov: 2.5,
            cum_bits: 1024,
        }];
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_metrics_csv(&rows, &mut a).unwrap();
        write_metrics_csv(&rows, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.contains("1,3,drwt,0,4,0.125,inf,2.5,1024"));
    }

    #[test]
    fn manifest_contains_hash_and_conventions() {
        let manifest = Manifest {
            command: "mc",
            seed: 9,
            config_text: "n_sensors = 5\n",
            bits_per_scalar: 64,
        };
        let mut buf = Vec::new();
        manifest.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("config_sha256 = "));
        assert!(text.contains("seed = 9"));
        assert!(text.contains("convention_bits"));
    }
}
