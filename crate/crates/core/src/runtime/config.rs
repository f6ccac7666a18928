//! Runtime configuration: a text file of `key = value` lines.
//!
//! ```text
//! # two localities on loopback
//! locality.0 = 127.0.0.1:7100
//! locality.1 = 127.0.0.1:7101
//! this_locality = 0
//! scheduler.policy = local_priority
//! scheduler.workers = 4
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use log::LevelFilter;

use crate::error::{Error, Result};
use crate::scheduler::SchedulerConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    /// `host:port` of every locality, indexed by id.
    pub localities: Vec<String>,
    pub this_locality: u32,
    pub scheduler: SchedulerConfig,
    pub log_level: LevelFilter,
    /// Stamped into every GID minted by this run.
    pub generation: u32,
    /// How long boot waits for peers, and sends wait for a connection.
    pub boot_timeout: Duration,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            localities: vec!["127.0.0.1:0".to_string()],
            this_locality: 0,
            scheduler: SchedulerConfig::default(),
            log_level: LevelFilter::Warn,
            generation: 1,
            boot_timeout: Duration::from_secs(10),
        }
    }
}

fn number<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: {v:?} is not a valid number")))
}

fn strip_comment(line: &str) -> &str {
    let mut prev_ws = true;
    for (i, c) in line.char_indices() {
        if c == '#' && prev_ws {
            return &line[..i];
        }
        prev_ws = c.is_whitespace();
    }
    line
}

impl RuntimeConfig {
    /// A single-locality configuration.
    pub fn local(scheduler: SchedulerConfig) -> Self {
        RuntimeConfig {
            scheduler,
            ..Default::default()
        }
    }

    pub fn parse(text: &str) -> Result<RuntimeConfig> {
        let mut cfg = RuntimeConfig::default();
        let mut localities: BTreeMap<u32, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let at = |e: Error| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            };
            if let Some(id) = k.strip_prefix("locality.") {
                let id: u32 = number(k, id).map_err(at)?;
                if localities.insert(id, v.to_string()).is_some() {
                    return Err(at(Error::Config(format!("duplicate locality id {id}"))));
                }
            } else {
                cfg.set(k, v).map_err(at)?;
            }
        }
        if !localities.is_empty() {
            if let Some((gap, _)) = localities.keys().enumerate().find(|(i, id)| *i as u32 != **id) {
                return Err(Error::Config(format!(
                    "locality ids must be dense from 0; locality.{gap} is missing"
                )));
            }
            cfg.localities = localities.into_values().collect();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<RuntimeConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RuntimeConfig::parse(&text)
    }

    /// Sets one scalar key. `locality.N` entries are only accepted by
    /// [`RuntimeConfig::parse`].
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "this_locality" => self.this_locality = number(key, v)?,
            "scheduler.policy" => self.scheduler.policy = v.parse()?,
            "scheduler.workers" => self.scheduler.workers = number(key, v)?,
            "scheduler.tree_arity" => self.scheduler.tree_arity = number(key, v)?,
            "generation" => self.generation = number(key, v)?,
            "boot_timeout_ms" => self.boot_timeout = Duration::from_millis(number(key, v)?),
            "log_level" => {
                self.log_level = v
                    .parse()
                    .map_err(|_| Error::Config(format!("log_level: unknown level {v:?}")))?
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scheduler.validate()?;
        if self.localities.is_empty() {
            return Err(Error::Config("no localities configured".into()));
        }
        if self.this_locality as usize >= self.localities.len() {
            return Err(Error::Config(format!(
                "this_locality {} but only {} localities configured",
                self.this_locality,
                self.localities.len()
            )));
        }
        if self.generation == u32::MAX {
            return Err(Error::Config("generation 4294967295 is reserved".into()));
        }
        for (i, a) in self.localities.iter().enumerate() {
            if a.rsplit_once(':').is_none_or(|(h, p)| h.is_empty() || p.parse::<u16>().is_err()) {
                return Err(Error::Config(format!("locality.{i}: {a:?} is not host:port")));
            }
        }
        Ok(())
    }

    pub fn num_localities(&self) -> u32 {
        self.localities.len() as u32
    }

    /// Renders back to the text form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, a) in self.localities.iter().enumerate() {
            s.push_str(&format!("locality.{i} = {a}\n"));
        }
        s.push_str(&format!("this_locality = {}\n", self.this_locality));
        s.push_str(&format!("scheduler.policy = {}\n", self.scheduler.policy));
        s.push_str(&format!("scheduler.workers = {}\n", self.scheduler.workers));
        s.push_str(&format!("scheduler.tree_arity = {}\n", self.scheduler.tree_arity));
        s.push_str(&format!("log_level = {}\n", self.log_level.as_str().to_lowercase()));
        s.push_str(&format!("generation = {}\n", self.generation));
        s.push_str(&format!("boot_timeout_ms = {}\n", self.boot_timeout.as_millis()));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::Policy;

    #[test]
    fn parses_full_file() {
        let cfg = RuntimeConfig::parse(
            "# cluster\n\
             locality.1 = 127.0.0.1:7101   # second\n\
             locality.0 = 127.0.0.1:7100\n\
             this_locality = 1\n\
             scheduler.policy = hierarchical\n\
             scheduler.workers = 6\n\
             scheduler.tree_arity = 3\n\
             log_level = debug\n",
        )
        .unwrap();
        assert_eq!(cfg.localities, vec!["127.0.0.1:7100", "127.0.0.1:7101"]);
        assert_eq!(cfg.this_locality, 1);
        assert_eq!(cfg.scheduler.policy, Policy::Hierarchical);
        assert_eq!((cfg.scheduler.workers, cfg.scheduler.tree_arity), (6, 3));
        assert_eq!(cfg.log_level, LevelFilter::Debug);
        assert_eq!(RuntimeConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        for (text, needle) in [
            ("locality.0 = a:1\nlocality.0 = b:2\n", "duplicate locality id 0"),
            ("locality.0 = a:1\nlocality.2 = b:2\n", "locality.1 is missing"),
            ("bogus = 1\n", "unknown key"),
            ("scheduler.workers = 0\n", "workers"),
            ("scheduler.workers = x\n", "not a valid number"),
            ("scheduler.policy = fifo\n", "unknown scheduling policy"),
            ("this_locality = 3\n", "this_locality"),
            ("locality.0 = nohost\n", "not host:port"),
            ("just words\n", "line 1"),
        ] {
            let e = RuntimeConfig::parse(text).unwrap_err().to_string();
            assert!(e.contains(needle), "{text:?} gave {e}");
        }
    }
}
