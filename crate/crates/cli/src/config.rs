//! Flat `key=value` run configuration. Command-line flags override file
//! values; unknown keys are rejected.

use inkworks_core::{Error, Result};

/// Optional values a config file may provide.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub mode: Option<String>,
    pub m: Option<usize>,
    pub patch_size: Option<usize>,
    pub depth: Option<usize>,
    pub widths: Option<Vec<usize>>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub scales: Option<Vec<f64>>,
    pub sauvola_window: Option<usize>,
    pub sauvola_k: Option<f64>,
    pub sauvola_r: Option<f64>,
    pub ink_fraction: Option<f64>,
}

pub fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Argument(format!("bad width {p:?} in {s:?}")))
        })
        .collect()
}

pub fn parse_scales(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            let v: f64 = p
                .trim()
                .parse()
                .map_err(|_| Error::Argument(format!("bad scale {p:?} in {s:?}")))?;
            if v <= 0.0 {
                return Err(Error::Argument(format!("scale {v} must be positive")));
            }
            Ok(v)
        })
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Argument(format!("config line {}: missing '=': {line}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || Error::Argument(format!("config: bad value for {key}: {value}"));
            match key {
                "mode" => cfg.mode = Some(value.to_string()),
                "m" => cfg.m = Some(value.parse().map_err(|_| bad())?),
                "patch_size" => cfg.patch_size = Some(value.parse().map_err(|_| bad())?),
                "depth" => cfg.depth = Some(value.parse().map_err(|_| bad())?),
                "widths" => cfg.widths = Some(parse_widths(value)?),
                "lr" => cfg.lr = Some(value.parse().map_err(|_| bad())?),
                "batch" => cfg.batch = Some(value.parse().map_err(|_| bad())?),
                "steps" => cfg.steps = Some(value.parse().map_err(|_| bad())?),
                "seed" => cfg.seed = Some(value.parse().map_err(|_| bad())?),
                "scales" => cfg.scales = Some(parse_scales(value)?),
                "sauvola_window" => cfg.sauvola_window = Some(value.parse().map_err(|_| bad())?),
                "sauvola_k" => cfg.sauvola_k = Some(value.parse().map_err(|_| bad())?),
                "sauvola_r" => cfg.sauvola_r = Some(value.parse().map_err(|_| bad())?),
                "ink_fraction" => cfg.ink_fraction = Some(value.parse().map_err(|_| bad())?),
                other => return Err(Error::Argument(format!("config: unknown key {other:?}"))),
            }
        }
        if let (Some(d), Some(w)) = (cfg.depth, &cfg.widths) {
            if w.len() != d {
                return Err(Error::Argument(format!(
                    "config: depth {d} conflicts with widths of length {}",
                    w.len()
                )));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&std::path::Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(&std::fs::read_to_string(p)?),
            None => Ok(Self::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys() {
        let cfg = RunConfig::parse(
            "mode=sr\nm=3\npatch_size=64\nwidths=8,16,32\nlr=0.0001\nbatch=5\nsteps=100\nseed=7\nscales=1.0,0.75\nsauvola_window=31\nsauvola_k=0.5\nsauvola_r=128\nink_fraction=0.005\n",
        )
        .unwrap();
        assert_eq!(cfg.mode.as_deref(), Some("sr"));
        assert_eq!(cfg.widths, Some(vec![8, 16, 32]));
        assert_eq!(cfg.scales, Some(vec![1.0, 0.75]));
        assert_eq!(cfg.seed, Some(7));
    }

    #[test]
    fn rejects_unknown_keys_and_conflicts() {
        assert!(RunConfig::parse("bogus=1\n").is_err());
        assert!(RunConfig::parse("depth=2\nwidths=8,16,32\n").is_err());
        assert!(RunConfig::parse("m three\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::parse("# comment\n\nm=2\n").unwrap();
        assert_eq!(cfg.m, Some(2));
    }
}
