//! TOML configuration: `[model]`, `[data]`, `[train]`, `[sweep]`, `[theory]`
//! and `[scaling]` sections, with command-line overrides applied on top.

use std::path::Path;

use anyhow::{Context, Result};
use icl_core::experiments::TrainConfig;
use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::exit::ConfigError;

const SECTIONS: [&str; 6] = ["model", "data", "train", "sweep", "theory", "scaling"];

#[derive(Debug, Clone, Default)]
pub struct Layered {
    table: Table,
}

impl Layered {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError(format!("{}: {e}", path.display())))?;
        for (key, value) in &table {
            if !SECTIONS.contains(&key.as_str()) {
                return Err(ConfigError(format!(
                    "{}: unknown section or key `{key}` (expected one of {SECTIONS:?})",
                    path.display()
                ))
                .into());
            }
            if !value.is_table() {
                return Err(
                    ConfigError(format!("{}: `{key}` must be a section", path.display())).into(),
                );
            }
        }
        Ok(Self { table })
    }

    fn section_mut(&mut self, name: &str) -> &mut Table {
        self.table
            .entry(name)
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("sections are tables")
    }

    pub fn section(&self, name: &str) -> Table {
        self.table
            .get(name)
            .and_then(Value::as_table)
            .cloned()
            .unwrap_or_default()
    }

    /// Sets `section.key` when `value` is present.
    pub fn set(&mut self, section: &str, key: &str, value: Option<impl Into<Value>>) {
        if let Some(v) = value {
            self.section_mut(section).insert(key.to_string(), v.into());
        }
    }

    /// Sets `section.key` only when it is absent.
    pub fn fill(&mut self, section: &str, key: &str, value: impl Into<Value>) {
        self.section_mut(section)
            .entry(key.to_string())
            .or_insert_with(|| value.into());
    }

    pub fn get(&self, section: &str, key: &str) -> Option<Value> {
        self.table.get(section)?.get(key).cloned()
    }

    /// `[train]` plus nested `[model]` and `[data]`. A dimension given in only
    /// one of `model.d` and `data.d` is copied to the other.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = self.section("train");
        let mut model = self.section("model");
        let mut data = self.section("data");
        match (model.get("d").cloned(), data.get("d").cloned()) {
            (Some(d), None) => {
                data.insert("d".into(), d);
            }
            (None, Some(d)) => {
                model.insert("d".into(), d);
            }
            _ => {}
        }
        t.insert("model".into(), Value::Table(model));
        t.insert("data".into(), Value::Table(data));
        let cfg: TrainConfig = decode(t, "[train]/[model]/[data]")?;
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }
}

pub fn decode<T: DeserializeOwned>(table: Table, what: &str) -> Result<T> {
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError(format!("in {what}: {}", e.message())).into())
}

/// Canonical snapshot of a training config, in the same section layout.
pub fn train_snapshot(cfg: &TrainConfig, extra: &[(&str, Table)]) -> Result<String> {
    let Value::Table(mut root) = Value::try_from(cfg)? else {
        unreachable!("a struct serializes to a table")
    };
    let model = root.remove("model").context("model section")?;
    let data = root.remove("data").context("data section")?;
    let mut out = Table::new();
    out.insert("train".into(), Value::Table(root));
    out.insert("model".into(), model);
    out.insert("data".into(), data);
    for (name, t) in extra {
        out.insert((*name).into(), Value::Table(t.clone()));
    }
    Ok(toml::to_string(&out)?)
}

/// `"1,2,3"`, or `"a..b"` for the half-open integer range.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (i64, i64) = (
                a.trim()
                    .parse()
                    .map_err(|_| ConfigError(format!("bad range start in {part:?}")))?,
                b.trim()
                    .parse()
                    .map_err(|_| ConfigError(format!("bad range end in {part:?}")))?,
            );
            for v in a..b {
                out.push(
                    v.to_string()
                        .parse()
                        .map_err(|e| ConfigError(format!("{part:?}: {e}")))?,
                );
            }
        } else {
            out.push(
                part.parse()
                    .map_err(|e| ConfigError(format!("{part:?}: {e}")))?,
            );
        }
    }
    if out.is_empty() {
        return Err(ConfigError(format!("empty list {s:?}")).into());
    }
    Ok(out)
}

/// `"start:stop:step"` inclusive of `stop` (within rounding), or a list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let p: Vec<f64> = parts
            .iter()
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| ConfigError(format!("bad grid {s:?}")))
            })
            .collect::<std::result::Result<_, _>>()?;
        let (a, b, h) = (p[0], p[1], p[2]);
        if !(h > 0.0) || b < a {
            return Err(ConfigError(format!(
                "grid {s:?} needs start <= stop and a positive step"
            ))
            .into());
        }
        let n = ((b - a) / h + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| a + i as f64 * h).collect());
    }
    parse_list(s)
}
