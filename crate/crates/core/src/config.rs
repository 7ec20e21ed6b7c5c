//! Run configuration files.
//!
//! One `key = value` (or `key: value`) per line; `#` starts a comment. Keys
//! may use `-` or `_`. Lists are comma or space separated and ranges are
//! written `a..b` (inclusive).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::BoundaryCondition;

/// Longest accepted configuration text, in bytes.
pub const MAX_CONFIG_LEN: usize = 1 << 16;

/// Longest accepted list value.
pub const MAX_LIST_LEN: usize = 4096;

/// Every setting a configuration file may carry. Absent keys stay `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConfigFile {
    pub dim: Option<usize>,
    pub beta: Option<f64>,
    pub h: Option<f64>,
    pub j: Option<i32>,
    pub boundary: Option<BoundaryCondition>,
    pub box_sites: Option<usize>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub cap: Option<usize>,
    pub replicas: Option<usize>,
    pub inner_replicas: Option<usize>,
    pub time_grid: Option<Vec<f64>>,
    pub n_range: Option<(usize, usize)>,
    pub threads: Option<usize>,
    pub mode: Option<String>,
    pub pivot: Option<usize>,
    pub burn_in: Option<usize>,
    pub functional: Option<String>,
    pub functions: Option<usize>,
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn set<T>(slot: &mut Option<T>, value: T, line: usize, key: &str) -> Result<()> {
    if slot.is_some() {
        return Err(perr(line, format!("duplicate key {key:?}")));
    }
    *slot = Some(value);
    Ok(())
}

fn num<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T> {
    value.parse().map_err(|_| perr(line, format!("invalid value {value:?} for {key}")))
}

fn real(value: &str, line: usize, key: &str) -> Result<f64> {
    let v: f64 = num(value, line, key)?;
    if !v.is_finite() {
        return Err(perr(line, format!("{key} must be finite")));
    }
    Ok(v)
}

fn items(value: &str) -> impl Iterator<Item = &str> {
    value.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty())
}

/// Parse a comma or space separated list of finite reals.
pub fn parse_real_list(value: &str, line: usize, key: &str) -> Result<Vec<f64>> {
    let out: Vec<f64> = items(value).take(MAX_LIST_LEN + 1).map(|s| real(s, line, key)).collect::<Result<_>>()?;
    if out.is_empty() || out.len() > MAX_LIST_LEN {
        return Err(perr(line, format!("{key} needs between 1 and {MAX_LIST_LEN} values")));
    }
    Ok(out)
}

/// Parse `a..b`, `a..=b` or `a,b` into an inclusive range with `a ≤ b`.
pub fn parse_range(value: &str, line: usize, key: &str) -> Result<(usize, usize)> {
    let (a, b) = if let Some((a, b)) = value.split_once("..") {
        (a, b.strip_prefix('=').unwrap_or(b))
    } else if let Some((a, b)) = value.split_once(',') {
        (a, b)
    } else {
        return Err(perr(line, format!("{key} must look like a..b")));
    };
    let lo: usize = num(a.trim(), line, key)?;
    let hi: usize = num(b.trim(), line, key)?;
    if lo > hi {
        return Err(perr(line, format!("{key} is empty: {lo} > {hi}")));
    }
    Ok((lo, hi))
}

/// Parse configuration text.
pub fn parse_config(text: &str) -> Result<ConfigFile> {
    if text.len() > MAX_CONFIG_LEN {
        return Err(perr(0, format!("configuration exceeds {MAX_CONFIG_LEN} bytes")));
    }
    let mut cfg = ConfigFile::default();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let split = content.find(['=', ':']).ok_or_else(|| perr(line, "expected `key = value`"))?;
        let key = content[..split].trim().to_ascii_lowercase().replace('-', "_");
        let value = content[split + 1..].trim();
        if value.is_empty() {
            return Err(perr(line, format!("missing value for {key:?}")));
        }
        match key.as_str() {
            "dim" => set(&mut cfg.dim, num(value, line, &key)?, line, &key)?,
            "beta" => set(&mut cfg.beta, real(value, line, &key)?, line, &key)?,
            "h" => set(&mut cfg.h, real(value, line, &key)?, line, &key)?,
            "j" => {
                let j: i32 = num(value.trim_start_matches('+'), line, &key)?;
                if j != 1 && j != -1 {
                    return Err(perr(line, "J must be 1 or -1"));
                }
                set(&mut cfg.j, j, line, &key)?
            }
            "boundary" => set(&mut cfg.boundary, value.parse().map_err(|e: Error| perr(line, e.to_string()))?, line, &key)?,
            "box_sites" => set(&mut cfg.box_sites, num(value, line, &key)?, line, &key)?,
            "seed" => set(&mut cfg.seed, num(value, line, &key)?, line, &key)?,
            "samples" => set(&mut cfg.samples, num(value, line, &key)?, line, &key)?,
            "cap" => set(&mut cfg.cap, num(value, line, &key)?, line, &key)?,
            "replicas" => set(&mut cfg.replicas, num(value, line, &key)?, line, &key)?,
            "inner_replicas" => set(&mut cfg.inner_replicas, num(value, line, &key)?, line, &key)?,
            "time_grid" => set(&mut cfg.time_grid, parse_real_list(value, line, &key)?, line, &key)?,
            "n_range" => set(&mut cfg.n_range, parse_range(value, line, &key)?, line, &key)?,
            "threads" => set(&mut cfg.threads, num(value, line, &key)?, line, &key)?,
            "mode" => set(&mut cfg.mode, value.to_string(), line, &key)?,
            "pivot" => set(&mut cfg.pivot, num(value, line, &key)?, line, &key)?,
            "burn_in" => set(&mut cfg.burn_in, num(value, line, &key)?, line, &key)?,
            "functional" => set(&mut cfg.functional, value.to_string(), line, &key)?,
            "functions" => set(&mut cfg.functions, num(value, line, &key)?, line, &key)?,
            _ => return Err(perr(line, format!("unknown key {key:?}"))),
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_file() {
        let text = "# audit\n\
                    dim = 2\n\
                    beta: 0.05   # inline comment\n\
                    h = 0\n\
                    J = -1\n\
                    boundary = plus\n\
                    box-sites = 9\n\
                    seed = 42\n\
                    time_grid = 0.5, 1 2,4\n\
                    n_range = 2..20\n\
                    mode = two-stage\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.dim, Some(2));
        assert_eq!(cfg.beta, Some(0.05));
        assert_eq!(cfg.j, Some(-1));
        assert_eq!(cfg.boundary, Some(BoundaryCondition::Plus));
        assert_eq!(cfg.box_sites, Some(9));
        assert_eq!(cfg.time_grid, Some(vec![0.5, 1.0, 2.0, 4.0]));
        assert_eq!(cfg.n_range, Some((2, 20)));
        assert_eq!(cfg.mode.as_deref(), Some("two-stage"));
        assert_eq!(cfg.samples, None);
    }

    #[test]
    fn reports_the_offending_line() {
        for (text, line) in [
            ("dim = 2\nbogus = 1", 2),
            ("dim = 2\ndim = 3", 2),
            ("beta = nan", 1),
            ("\n\nbeta", 3),
            ("J = 2", 1),
            ("n_range = 5..2", 1),
            ("time_grid = ,", 1),
            ("seed = -1", 1),
            ("boundary = sideways", 1),
            ("h =", 1),
        ] {
            match parse_config(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn empty_text_is_an_empty_config() {
        assert_eq!(parse_config("  \n# nothing\n").unwrap(), ConfigFile::default());
    }
}
