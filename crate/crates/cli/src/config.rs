//! Flat `key = value` run configuration with dotted section prefixes.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every recognized key with its default.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("c_mps", "343"),
    ("frequency_hz", "40000"),
    ("geometry.csv", ""),
    ("geometry.elements", "16"),
    ("geometry.diameter_m", "0.03"),
    ("beamformer.loading", "0"),
    ("grid.az_min", "-90"),
    ("grid.az_max", "90"),
    ("grid.az_step", "1"),
    ("grid.el_min", "-90"),
    ("grid.el_max", "90"),
    ("grid.el_step", "1"),
    ("psf.sources", "0,0; 30,0; -45,-15"),
    ("psf.beamformers", "bartlett, mvdr"),
    ("psf.signal_power", "1"),
    ("psf.noise_power", "0.01"),
    ("scene.file", ""),
    ("scene.azimuth_deg", "0"),
    ("scene.elevation_deg", "0"),
    ("scene.power", "1"),
    ("scene.noise_power", "0.01"),
    ("scan.beamformer", "mvdr"),
    ("scan.snapshots", "0"),
    ("scan.max_peaks", "3"),
    ("scan.min_separation_deg", "5"),
    ("chirp.f_start_hz", "36000"),
    ("chirp.f_end_hz", "44000"),
    ("chirp.duration_s", "0.003"),
    ("chirp.window", "none"),
    ("simulate.range_m", "1"),
    ("simulate.azimuth_deg", "0"),
    ("simulate.elevation_deg", "0"),
    ("simulate.strength", "1"),
    ("simulate.snr_db", "20"),
    ("simulate.duration_s", "3"),
    ("simulate.ping_rate_hz", "10"),
    ("simulate.frames", "false"),
    ("simulate.frame_samples", "4096"),
    ("decode.decimate", "false"),
    ("decode.rate_hz", "4450000"),
    ("bench.frame_samples", "4096"),
    ("bench.duration_s", "1"),
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        Self {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::defaults();
        cfg.merge_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{origin}:{}: expected key = value", n + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), CliError> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{kv}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key `{key}`"))),
        }
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.str(key);
        raw.parse()
            .map_err(|_| CliError::Usage(format!("{key}: cannot parse `{raw}`")))
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.str(key) {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            other => Err(CliError::Usage(format!(
                "{key}: expected a boolean, got `{other}`"
            ))),
        }
    }

    /// The effective configuration, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
