//! Flat `key = value` experiment configuration files, with `#` comments.
//! Command-line flags override file values.

use nflb_core::attacks::PgdConfig;
use nflb_core::classifiers::TrainConfig;
use nflb_core::experiments::{ImageSweepConfig, SimulateConfig};
use nflb_core::scalar::LqExponent;
use std::collections::BTreeMap;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Raw key/value pairs from a config file.
#[derive(Debug, Default, Clone)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key = value", i + 1)))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(ConfigMap { values })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        ConfigMap::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse_with<T, F>(&self, key: &str, f: F) -> Result<Option<T>, ConfigError>
    where
        F: FnOnce(&str) -> Result<T, String>,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => f(raw)
                .map(Some)
                .map_err(|e| ConfigError(format!("key {key}: {e}"))),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.parse_with(key, |s| s.parse().map_err(|e| format!("{e}")))
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.parse_with(key, |s| s.parse().map_err(|e| format!("{e}")))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.parse_with(key, |s| s.parse().map_err(|e| format!("{e}")))
    }

    pub fn get_q(&self, key: &str) -> Result<Option<LqExponent>, ConfigError> {
        self.parse_with(key, |s| parse_q(s))
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Option<Vec<usize>>, ConfigError> {
        self.parse_with(key, |s| {
            s.split(',')
                .map(|v| v.trim().parse().map_err(|e| format!("{e}")))
                .collect()
        })
    }
}

pub fn parse_q(s: &str) -> Result<LqExponent, String> {
    match s.trim() {
        "inf" | "Inf" | "INF" | "infinity" => Ok(LqExponent::Infinity),
        other => {
            let v: f64 = other.parse().map_err(|e| format!("{e}"))?;
            LqExponent::new(v).map_err(|e| format!("{e}"))
        }
    }
}

/// Build a simulate configuration from defaults + file + flag overrides
/// (already merged into the map).
pub fn simulate_config(map: &ConfigMap) -> Result<SimulateConfig, ConfigError> {
    let mut cfg = SimulateConfig::default();
    if let Some(v) = map.get_u64("seed")? {
        cfg.seed = v;
    }
    if let Some(v) = map.get_usize("p")? {
        cfg.p = v;
        // Keep the delta = 0.01 design point unless eta is given explicitly.
        cfg.eta = (2.0 * (1.0f64 / 0.01).ln() / (v as f64 - 1.0)).sqrt();
    }
    if let Some(v) = map.get_f64("eta")? {
        cfg.eta = v;
    }
    if let Some(v) = map.get_f64("sigma")? {
        cfg.sigma = v;
    }
    if let Some(v) = map.get_usize("n_train")? {
        cfg.n_train = v;
    }
    if let Some(v) = map.get_usize("n_test")? {
        cfg.n_test = v;
    }
    if let Some(v) = map.get_f64("eps_min")? {
        cfg.eps_min = v;
    }
    if let Some(v) = map.get_f64("eps_max")? {
        cfg.eps_max = Some(v);
    }
    if let Some(v) = map.get_usize("eps_steps")? {
        cfg.eps_steps = v;
    }
    if let Some(v) = map.get_q("q")? {
        cfg.q = v;
    }
    if let Some(v) = map.get("class") {
        cfg.class_sign = match v {
            "-1" | "0" => -1,
            "1" | "+1" => 1,
            other => return Err(ConfigError(format!("key class: bad value {other}"))),
        };
    }
    apply_train_keys(map, &mut cfg.train)?;
    apply_pgd_keys(map, &mut cfg.pgd)?;
    Ok(cfg)
}

pub fn image_sweep_config(map: &ConfigMap) -> Result<ImageSweepConfig, ConfigError> {
    let mut cfg = ImageSweepConfig::default();
    if let Some(v) = map.get_u64("seed")? {
        cfg.seed = v;
    }
    if let Some(v) = map.get_f64("sigma")? {
        cfg.sigma = v;
    }
    if let Some(v) = map.get_f64("eps_min")? {
        cfg.eps_min = v;
    }
    if let Some(v) = map.get_f64("eps_max")? {
        cfg.eps_max = v;
    }
    if let Some(v) = map.get_usize("eps_steps")? {
        cfg.eps_steps = v;
    }
    if let Some(v) = map.get_usize("train_limit")? {
        cfg.train_limit = v;
    }
    if let Some(v) = map.get_usize("test_limit")? {
        cfg.test_limit = v;
    }
    apply_train_keys(map, &mut cfg.train)?;
    apply_pgd_keys(map, &mut cfg.pgd)?;
    Ok(cfg)
}

fn apply_train_keys(map: &ConfigMap, train: &mut TrainConfig) -> Result<(), ConfigError> {
    if let Some(v) = map.get_usize_list("hidden")? {
        train.hidden = v;
    }
    if let Some(v) = map.get_f64("learning_rate")? {
        train.learning_rate = v;
    }
    if let Some(v) = map.get_usize("epochs")? {
        train.epochs = v;
    }
    if let Some(v) = map.get_usize("batch_size")? {
        train.batch_size = v;
    }
    Ok(())
}

fn apply_pgd_keys(map: &ConfigMap, pgd: &mut PgdConfig) -> Result<(), ConfigError> {
    if let Some(v) = map.get_usize("attack_steps")? {
        pgd.steps = v;
    }
    if let Some(v) = map.get_f64("attack_step_fraction")? {
        pgd.step_fraction = v;
    }
    if let Some(v) = map.get_usize("attack_restarts")? {
        pgd.restarts = v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_key_values_with_comments() {
        let map = ConfigMap::parse("# comment\np = 200\neta = 0.5 # trailing\n\nq = inf\n").unwrap();
        assert_eq!(map.get_usize("p").unwrap(), Some(200));
        assert_eq!(map.get_f64("eta").unwrap(), Some(0.5));
        assert_eq!(map.get_q("q").unwrap(), Some(LqExponent::Infinity));
        assert!(ConfigMap::parse("novalue\n").is_err());
    }

    #[test]
    fn simulate_defaults_and_overrides() {
        let map = ConfigMap::parse("p = 101\nclass = 1\nhidden = 32, 16\nattack_steps = 7\n").unwrap();
        let cfg = simulate_config(&map).unwrap();
        assert_eq!(cfg.p, 101);
        assert_eq!(cfg.class_sign, 1);
        assert_eq!(cfg.train.hidden, vec![32, 16]);
        assert_eq!(cfg.pgd.steps, 7);
        // eta follows p unless given.
        assert!((cfg.eta - (2.0 * 100f64.ln() / 100.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bad_values_are_reported_with_key() {
        let map = ConfigMap::parse("p = many\n").unwrap();
        let err = simulate_config(&map).unwrap_err();
        assert!(err.0.contains("key p"));
    }
}
