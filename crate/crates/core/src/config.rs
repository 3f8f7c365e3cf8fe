//! Flat key=value training configuration files.
//!
//! Keys are exactly the [`TrainConfig`] field names; unknown keys are hard
//! errors (a silently ignored typo in a hyperparameter name is the classic
//! way to fail to reproduce a result). Missing keys take defaults. Lists are
//! comma-separated, booleans are `true`/`false`.

use crate::error::{McnError, Result};
use crate::motifs::MotifKind;
use crate::psi::PsiKind;
use crate::training::{ModelMode, TrainConfig};

fn parse_list<T, F: Fn(&str) -> Result<T>>(value: &str, f: F) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| McnError::InvalidConfig(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(McnError::InvalidConfig(format!(
            "bad value {other:?} for {key} (expected true or false)"
        ))),
    }
}

/// Parse config text into a [`TrainConfig`] starting from defaults.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            McnError::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "mode" => cfg.mode = ModelMode::parse(value)?,
            "motifs" => cfg.motifs = parse_list(value, MotifKind::parse)?,
            "k_max" => cfg.k_max = parse_num(key, value)?,
            "psi" => cfg.psi = PsiKind::parse(value)?,
            "lr" => cfg.lr = parse_num(key, value)?,
            "dropout" => cfg.dropout = parse_num(key, value)?,
            "l2" => cfg.l2 = parse_num(key, value)?,
            "epsilon" => cfg.epsilon = parse_num(key, value)?,
            "patience" => cfg.patience = parse_num(key, value)?,
            "heads" => cfg.heads = parse_list(value, |s| parse_num("heads", s))?,
            "hidden" => cfg.hidden = parse_list(value, |s| parse_num("hidden", s))?,
            "max_epochs" => cfg.max_epochs = parse_num(key, value)?,
            "seed" => cfg.seed = parse_num(key, value)?,
            "advantage_baseline" => cfg.advantage_baseline = parse_bool(key, value)?,
            "c_log_transform" => cfg.c_log_transform = parse_bool(key, value)?,
            "density_budget" => cfg.density_budget = parse_num(key, value)?,
            other => {
                return Err(McnError::InvalidConfig(format!(
                    "unknown config key {other:?} on line {}",
                    lineno + 1
                )))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical config text for manifests and checkpoints; parsing it back
/// reproduces the config.
pub fn config_echo(cfg: &TrainConfig) -> String {
    let motifs: Vec<&str> = cfg.motifs.iter().map(|m| m.name()).collect();
    let heads: Vec<String> = cfg.heads.iter().map(|h| h.to_string()).collect();
    let hidden: Vec<String> = cfg.hidden.iter().map(|h| h.to_string()).collect();
    format!(
        "mode = {}\nmotifs = {}\nk_max = {}\npsi = {}\nlr = {}\ndropout = {}\nl2 = {}\nepsilon = {}\npatience = {}\nheads = {}\nhidden = {}\nmax_epochs = {}\nseed = {}\nadvantage_baseline = {}\nc_log_transform = {}\ndensity_budget = {}\n",
        cfg.mode.name(),
        motifs.join(","),
        cfg.k_max,
        cfg.psi.name(),
        cfg.lr,
        cfg.dropout,
        cfg.l2,
        cfg.epsilon,
        cfg.patience,
        heads.join(","),
        hidden.join(","),
        cfg.max_epochs,
        cfg.seed,
        cfg.advantage_baseline,
        cfg.c_log_transform,
        cfg.density_budget,
    )
}
