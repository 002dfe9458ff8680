//! Scenario configuration and its flat `key = value` text format.
//!
//! Lines are `key = value`, `#` starts a comment, blank lines are ignored.
//! Unknown and duplicate keys are errors; every key has a default, so a valid
//! file may set any subset.

use std::fmt::Write as _;
use std::path::Path;

use crate::drwt::PrimalUpdate;
use crate::error::{Error, Result};
use crate::netgraph::ConnectivityPolicy;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_sensors: usize,
    pub n_targets: usize,
    pub comm_radius_m: f64,
    pub sensing_radius_m: f64,
    pub rate_hz: f64,
    pub window_seconds: f64,
    /// White-noise acceleration intensity of the double integrator.
    pub q_accel: f64,
    /// Position-measurement noise standard deviation (meters).
    pub r_std_m: f64,
    pub prior_pos_std_m: f64,
    pub prior_vel_std_mps: f64,
    /// Probability that a geometrically visible observation is dropped.
    pub dropout_prob: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub bits_per_scalar: u64,
    pub rho: f64,
    pub drwt_iters: usize,
    pub ckf_rounds: usize,
    pub primal_update: PrimalUpdate,
    /// Estimator process noise = truth process noise scaled by this factor
    /// (1.0 = matched models).
    pub q_inflation: f64,
    pub connectivity: ConnectivityPolicy,
    /// Side length of the square operating area (meters).
    pub area_m: f64,
    /// Scale of initial target speeds (m/s).
    pub target_speed_mps: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_sensors: 50,
            n_targets: 50,
            comm_radius_m: 200.0,
            sensing_radius_m: 100.0,
            rate_hz: 4.0,
            window_seconds: 5.0,
            q_accel: 0.5,
            r_std_m: 1.0,
            prior_pos_std_m: 5.0,
            prior_vel_std_mps: 2.0,
            dropout_prob: 0.05,
            n_steps: 40,
            seed: 1,
            bits_per_scalar: 64,
            rho: 1.0,
            drwt_iters: 10,
            ckf_rounds: 10,
            primal_update: PrimalUpdate::Fast,
            q_inflation: 1.0,
            connectivity: ConnectivityPolicy::Components,
            area_m: 400.0,
            target_speed_mps: 8.0,
        }
    }
}

impl ScenarioConfig {
    /// Window length in steps, `round(window_seconds * rate_hz)`.
    pub fn window_steps(&self) -> usize {
        (self.window_seconds * self.rate_hz).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.n_sensors == 0 {
            return err("n_sensors must be at least 1".into());
        }
        if self.n_targets == 0 {
            return err("n_targets must be at least 1".into());
        }
        if !(self.comm_radius_m > 0.0) {
            return err(format!("comm_radius_m must be positive, got {}", self.comm_radius_m));
        }
        if !(self.sensing_radius_m > 0.0) {
            return err(format!(
                "sensing_radius_m must be positive, got {}",
                self.sensing_radius_m
            ));
        }
        if !(self.rate_hz > 0.0) {
            return err(format!("rate_hz must be positive, got {}", self.rate_hz));
        }
        if self.window_steps() < 1 {
            return err(format!(
                "window_seconds * rate_hz must round to at least 1 step, got {}",
                self.window_steps()
            ));
        }
        if !(self.q_accel > 0.0) {
            return err(format!("q_accel must be positive, got {}", self.q_accel));
        }
        if !(self.r_std_m > 0.0) {
            return err(format!("r_std_m must be positive, got {}", self.r_std_m));
        }
        if !(self.prior_pos_std_m > 0.0) || !(self.prior_vel_std_mps > 0.0) {
            return err("prior standard deviations must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return err(format!("dropout_prob must lie in [0, 1), got {}", self.dropout_prob));
        }
        if self.n_steps == 0 {
            return err("n_steps must be at least 1".into());
        }
        if self.bits_per_scalar == 0 {
            return err("bits_per_scalar must be at least 1".into());
        }
        if !(self.rho > 0.0) {
            return err(format!("rho must be positive, got {}", self.rho));
        }
        if self.drwt_iters == 0 {
            return err("drwt_iters must be at least 1".into());
        }
        if !(self.q_inflation > 0.0) {
            return err(format!("q_inflation must be positive, got {}", self.q_inflation));
        }
        if !(self.area_m > 0.0) {
            return err(format!("area_m must be positive, got {}", self.area_m));
        }
        if !(self.target_speed_mps >= 0.0) {
            return err(format!(
                "target_speed_mps must be non-negative, got {}",
                self.target_speed_mps
            ));
        }
        Ok(())
    }

    /// Parses the flat key/value format. Unknown keys, duplicate keys,
    /// malformed lines, and out-of-range values are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ScenarioConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.split_once('#') {
                Some((before, _)) => before.trim(),
                None => raw.trim(),
            };
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {line_no}: expected `key = value`, got `{raw}`"
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {line_no}: duplicate key `{key}`")));
            }
            cfg.set(key, value, line_no)?;
            // Keys are a fixed small set; remember the canonical spelling.
            seen.push(match KEYS.iter().find(|k| **k == key) {
                Some(k) => k,
                None => unreachable!("set() rejected unknown keys"),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str, line_no: usize) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str, line_no: usize) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!("line {line_no}: invalid value `{value}` for `{key}`"))
            })
        }
        match key {
            "n_sensors" => self.n_sensors = num(key, value, line_no)?,
            "n_targets" => self.n_targets = num(key, value, line_no)?,
            "comm_radius_m" => self.comm_radius_m = num(key, value, line_no)?,
            "sensing_radius_m" => self.sensing_radius_m = num(key, value, line_no)?,
            "rate_hz" => self.rate_hz = num(key, value, line_no)?,
            "window_seconds" => self.window_seconds = num(key, value, line_no)?,
            "q_accel" => self.q_accel = num(key, value, line_no)?,
            "r_std_m" => self.r_std_m = num(key, value, line_no)?,
            "prior_pos_std_m" => self.prior_pos_std_m = num(key, value, line_no)?,
            "prior_vel_std_mps" => self.prior_vel_std_mps = num(key, value, line_no)?,
            "dropout_prob" => self.dropout_prob = num(key, value, line_no)?,
            "n_steps" => self.n_steps = num(key, value, line_no)?,
            "seed" => self.seed = num(key, value, line_no)?,
            "bits_per_scalar" => self.bits_per_scalar = num(key, value, line_no)?,
            "rho" => self.rho = num(key, value, line_no)?,
            "drwt_iters" => self.drwt_iters = num(key, value, line_no)?,
            "ckf_rounds" => self.ckf_rounds = num(key, value, line_no)?,
            "primal_update" => {
                self.primal_update = match value {
                    "fast" => PrimalUpdate::Fast,
                    "dense" => PrimalUpdate::Dense,
                    _ => {
                        return Err(Error::Config(format!(
                            "line {line_no}: primal_update must be `fast` or `dense`, got `{value}`"
                        )))
                    }
                }
            }
            "q_inflation" => self.q_inflation = num(key, value, line_no)?,
            "connectivity" => {
                self.connectivity = match value {
                    "error" => ConnectivityPolicy::Error,
                    "components" => ConnectivityPolicy::Components,
                    _ => {
                        return Err(Error::Config(format!(
                            "line {line_no}: connectivity must be `error` or `components`, got `{value}`"
                        )))
                    }
                }
            }
            "area_m" => self.area_m = num(key, value, line_no)?,
            "target_speed_mps" => self.target_speed_mps = num(key, value, line_no)?,
            _ => {
                return Err(Error::Config(format!("line {line_no}: unknown key `{key}`")));
            }
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_sensors = {}", self.n_sensors);
        let _ = writeln!(s, "n_targets = {}", self.n_targets);
        let _ = writeln!(s, "comm_radius_m = {}", self.comm_radius_m);
        let _ = writeln!(s, "sensing_radius_m = {}", self.sensing_radius_m);
        let _ = writeln!(s, "rate_hz = {}", self.rate_hz);
        let _ = writeln!(s, "window_seconds = {}", self.window_seconds);
        let _ = writeln!(s, "q_accel = {}", self.q_accel);
        let _ = writeln!(s, "r_std_m = {}", self.r_std_m);
        let _ = writeln!(s, "prior_pos_std_m = {}", self.prior_pos_std_m);
        let _ = writeln!(s, "prior_vel_std_mps = {}", self.prior_vel_std_mps);
        let _ = writeln!(s, "dropout_prob = {}", self.dropout_prob);
        let _ = writeln!(s, "n_steps = {}", self.n_steps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "bits_per_scalar = {}", self.bits_per_scalar);
        let _ = writeln!(s, "rho = {}", self.rho);
        let _ = writeln!(s, "drwt_iters = {}", self.drwt_iters);
        let _ = writeln!(s, "ckf_rounds = {}", self.ckf_rounds);
        let _ = writeln!(
            s,
            "primal_update = {}",
            match self.primal_update {
                PrimalUpdate::Fast => "fast",
                PrimalUpdate::Dense => "dense",
            }
        );
        let _ = writeln!(s, "q_inflation = {}", self.q_inflation);
        let _ = writeln!(
            s,
            "connectivity = {}",
            match self.connectivity {
                ConnectivityPolicy::Error => "error",
                ConnectivityPolicy::Components => "components",
            }
        );
        let _ = writeln!(s, "area_m = {}", self.area_m);
        let _ = writeln!(s, "target_speed_mps = {}", self.target_speed_mps);
        s
    }
}

const KEYS: &[&str] = &[
    "n_sensors",
    "n_targets",
    "comm_radius_m",
    "sensing_radius_m",
    "rate_hz",
    "window_seconds",
    "q_accel",
    "r_std_m",
    "prior_pos_std_m",
    "prior_vel_std_mps",
    "dropout_prob",
    "n_steps",
    "seed",
    "bits_per_scalar",
    "rho",
    "drwt_iters",
    "ckf_rounds",
    "primal_update",
    "q_inflation",
    "connectivity",
    "area_m",
    "target_speed_mps",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_scale() {
        let cfg = ScenarioConfig::default();
        assert_eq!(cfg.n_sensors, 50);
        assert_eq!(cfg.n_targets, 50);
        assert_eq!(cfg.comm_radius_m, 200.0);
        assert_eq!(cfg.rate_hz, 4.0);
        // 5 s window at 4 Hz = 20 steps.
        assert_eq!(cfg.window_steps(), 20);
        cfg.validate().unwrap();
    }

    #[test]
    fn parse_overrides_and_comments() {
        let cfg = ScenarioConfig::parse(
            "# small test\nn_sensors = 4\nn_targets = 1 # one target\n\nrho = 2.5\nprimal_update = dense\n",
        )
        .unwrap();
        assert_eq!(cfg.n_sensors, 4);
        assert_eq!(cfg.n_targets, 1);
        assert_eq!(cfg.rho, 2.5);
        assert_eq!(cfg.primal_update, PrimalUpdate::Dense);
        // Untouched keys keep defaults.
        assert_eq!(cfg.comm_radius_m, 200.0);
    }

    #[test]
    fn unknown_key_is_error() {
        assert!(ScenarioConfig::parse("n_sensor = 4\n").is_err());
        assert!(ScenarioConfig::parse("frobnicate = 1\n").is_err());
    }

    #[test]
    fn duplicate_key_is_error() {
        assert!(ScenarioConfig::parse("seed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn malformed_lines_are_errors() {
        assert!(ScenarioConfig::parse("just some words\n").is_err());
        assert!(ScenarioConfig::parse("rho = not_a_number\n").is_err());
        assert!(ScenarioConfig::parse("dropout_prob = 1.5\n").is_err());
        assert!(ScenarioConfig::parse("rate_hz = -4\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ScenarioConfig::default();
        cfg.n_sensors = 7;
        cfg.rho = 0.25;
        cfg.connectivity = ConnectivityPolicy::Error;
        let parsed = ScenarioConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
    }
}
