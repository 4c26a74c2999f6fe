//! `key = value` config files. Keys are long option names; flags given on
//! the command line win over the file.

use dyncop::Error;
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

pub const SEED_ENV: &str = "DYNCOP_SEED";

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "method",
    "methods",
    "returns",
    "no-garch",
    "window",
    "step",
    "n-min",
    "growth",
    "max-window",
    "alpha-warning",
    "alpha-critical",
    "bu-min",
    "bu-floor",
    "bu-shrink",
    "no-refine",
    "merge-order",
    "bs-min-leaf",
    "families",
    "mc-draws",
    "fixed-nu",
    "aic-after-warning",
    "alpha",
    "n-sims",
    "every",
    "min-history",
    "refit-every",
    "weights",
    "plot-sign",
    "seeds",
    "grid",
    "block-len",
];

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, (usize, String)>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, Error> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                Config::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Config, Error> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse { line: i + 1, msg: format!("expected key = value, got '{line}'") });
            };
            let key = k.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Parse { line: i + 1, msg: format!("unknown key '{key}'") });
            }
            values.insert(key, (i + 1, v.trim().to_string()));
        }
        Ok(Config { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Error> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Parse { line: *line, msg: format!("bad value '{v}' for '{key}'") }),
        }
    }

    /// Flag value if given, otherwise the file's.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Error> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    pub fn pick_or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, Error> {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    /// Boolean switches: set by the flag or by `key = true` in the file.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, Error> {
        Ok(flag || self.get::<bool>(key)?.unwrap_or(false))
    }

    /// Seed precedence: flag, config file, the environment default, then 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64, Error> {
        match self.pick(flag, "seed")? {
            Some(s) => Ok(s),
            None => env_seed(),
        }
    }
}

pub fn env_seed() -> Result<u64, Error> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Parameter(format!("{SEED_ENV}='{v}' is not a seed"))),
        Err(_) => Ok(0),
    }
}

/// Comma-separated list.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| Error::Parameter(format!("bad list entry '{}'", v.trim()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let c = Config::parse("# detector\nwindow = 400\nalpha_critical = 0.9\nfixed-nu = true\n").unwrap();
        assert_eq!(c.pick::<usize>(None, "window").unwrap(), Some(400));
        assert_eq!(c.pick(Some(300usize), "window").unwrap(), Some(300));
        assert_eq!(c.get::<f64>("alpha-critical").unwrap(), Some(0.9));
        assert!(c.switch(false, "fixed-nu").unwrap());
        assert!(!c.switch(false, "plot-sign").unwrap());
        assert_eq!(c.seed(Some(5)).unwrap(), 5);
        assert_eq!(Config::parse("seed = 4\n").unwrap().seed(None).unwrap(), 4);
    }

    #[test]
    fn bad_lines_report_their_number() {
        assert!(matches!(Config::parse("window = 1\nnonsense\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(Config::parse("colour = red\n"), Err(Error::Parse { line: 1, .. })));
        let c = Config::parse("\nwindow = wide\n").unwrap();
        assert!(matches!(c.get::<usize>("window"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<f64>("0.5, 0.25").unwrap(), vec![0.5, 0.25]);
        assert!(parse_list::<f64>("0.5,x").is_err());
    }
}
