//! Global flags with an optional `key = value` config file underneath them.

use std::path::PathBuf;

use clap::Args;

#[derive(Args, Debug, Default)]
pub struct GlobalArgs {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Image resolution; grids are `res x res x 3res/4`.
    #[arg(long, global = true)]
    res: Option<usize>,
    /// Network channel scale.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Machine-readable report on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Config file of `key = value` lines; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Globals {
    pub seed: u64,
    pub res: usize,
    pub scale: f64,
    pub threads: Option<usize>,
    pub json: bool,
}

impl GlobalArgs {
    pub fn resolve(&self) -> Result<Globals, String> {
        let table = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                text.parse::<toml::Table>().map_err(|e| format!("{}: {e}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for k in table.keys() {
            if !["seed", "res", "scale", "threads", "json"].contains(&k.as_str()) {
                return Err(format!("unknown config key '{k}'"));
            }
        }
        let int = |k: &str| -> Result<Option<i64>, String> {
            match table.get(k) {
                None => Ok(None),
                Some(v) => v.as_integer().map(Some).ok_or_else(|| format!("config key '{k}' must be an integer")),
            }
        };
        let non_neg = |k: &str, v: Option<i64>| -> Result<Option<u64>, String> {
            v.map(|x| u64::try_from(x).map_err(|_| format!("config key '{k}' must be non-negative"))).transpose()
        };
        let scale_cfg = match table.get("scale") {
            None => None,
            Some(v) => Some(v.as_float().or(v.as_integer().map(|i| i as f64)).ok_or("config key 'scale' must be a number")?),
        };
        let json_cfg = match table.get("json") {
            None => false,
            Some(v) => v.as_bool().ok_or("config key 'json' must be a boolean")?,
        };
        let g = Globals {
            seed: self.seed.or(non_neg("seed", int("seed")?)?).unwrap_or(0),
            res: self.res.or(non_neg("res", int("res")?)?.map(|v| v as usize)).unwrap_or(32),
            scale: self.scale.or(scale_cfg).unwrap_or(0.25),
            threads: self.threads.or(non_neg("threads", int("threads")?)?.map(|v| v as usize)),
            json: self.json || json_cfg,
        };
        if g.res == 0 {
            return Err("--res must be positive".into());
        }
        if !(g.scale > 0.0 && g.scale.is_finite()) {
            return Err("--scale must be positive".into());
        }
        if g.threads == Some(0) {
            return Err("--threads must be positive".into());
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 7\nres = 16\nscale = 0.5\n").unwrap();
        let a = GlobalArgs { seed: Some(3), config: Some(p.clone()), ..Default::default() };
        let g = a.resolve().unwrap();
        assert_eq!((g.seed, g.res, g.scale), (3, 16, 0.5));
        std::fs::write(&p, "colour = 1\n").unwrap();
        assert!(GlobalArgs { config: Some(p), ..Default::default() }.resolve().is_err());
    }

    #[test]
    fn defaults() {
        let g = GlobalArgs::default().resolve().unwrap();
        assert_eq!(g, Globals { seed: 0, res: 32, scale: 0.25, threads: None, json: false });
    }
}
