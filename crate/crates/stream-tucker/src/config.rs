//! Run configuration: flat key=value files with flag overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::parse_side_spec;
use crate::error::{Error, Result};
use crate::model::{Hyperparams, SideInfoSet};
use crate::streaming::GrowthPlan;
use crate::tensor::Shape;

/// Flat key-value config, file plus overrides; later writes win.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut map = ConfigMap::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, lineno + 1, "expected 'key = value'"))?;
            map.set(key.trim(), value.trim());
        }
        Ok(map)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn set_if(&mut self, key: &str, value: &Option<String>) {
        if let Some(v) = value {
            self.set(key, v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("bad value for '{key}': {e}"))),
        }
    }

    fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("bad value in '{key}': {e}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Deterministic key=value rendering for provenance echo.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub tensor_path: PathBuf,
    pub shape: Shape,
    pub side_specs: Vec<String>,
    pub plan: GrowthPlan,
    pub ranks: Vec<usize>,
    pub hp: Hyperparams,
    pub missing_pct: f64,
    pub n_splits: usize,
    pub out_dir: PathBuf,
    pub deterministic: bool,
    pub record_timing: bool,
    pub labels_path: Option<PathBuf>,
    pub cluster_mode: usize,
    pub w: usize,
}

impl RunConfig {
    pub fn resolve(map: &ConfigMap) -> Result<RunConfig> {
        let tensor_path = PathBuf::from(map.require("tensor")?);
        let dims: Vec<usize> = map
            .parse_list("shape")?
            .ok_or_else(|| Error::Config("missing required key 'shape'".into()))?;
        let shape = Shape::new(dims)?;
        let order = shape.order();

        let mut side_specs = Vec::with_capacity(order);
        for i in 0..order {
            let default = format!("identity:{}", shape.dims()[i]);
            side_specs.push(
                map.get(&format!("side.{i}"))
                    .unwrap_or(&default)
                    .to_string(),
            );
        }

        let regime = map.get("regime").unwrap_or("multi-aspect");
        let plan = if regime == "multi-aspect" {
            let start: Vec<usize> = map
                .parse_list("start_dims")?
                .ok_or_else(|| Error::Config("multi-aspect regime needs 'start_dims'".into()))?;
            let incr: Vec<usize> = map.parse_list("step_increments")?.ok_or_else(|| {
                Error::Config("multi-aspect regime needs 'step_increments'".into())
            })?;
            GrowthPlan::multi_aspect(Shape::new(start)?, incr, shape.clone())?
        } else if let Some(mode) = regime.strip_prefix("streaming:") {
            let mode: usize = mode
                .parse()
                .map_err(|e| Error::Config(format!("bad streaming mode: {e}")))?;
            GrowthPlan::streaming(shape.clone(), mode)?
        } else if let Some(passes) = regime.strip_prefix("batch:") {
            let passes: usize = passes
                .parse()
                .map_err(|e| Error::Config(format!("bad batch passes: {e}")))?;
            GrowthPlan::batch(shape.clone(), passes)?
        } else {
            return Err(Error::Config(format!(
                "unknown regime '{regime}' (expected multi-aspect, streaming:<mode> or batch:<passes>)"
            )));
        };

        let ranks: Vec<usize> = map
            .parse_list("ranks")?
            .ok_or_else(|| Error::Config("missing required key 'ranks'".into()))?;
        if ranks.len() != order {
            return Err(Error::Config(format!(
                "ranks: expected {order} values, got {}",
                ranks.len()
            )));
        }
        if ranks.contains(&0) {
            return Err(Error::Config("ranks: every rank must be >= 1".into()));
        }

        let lambda_i = map
            .parse_list("lambda_i")?
            .unwrap_or_else(|| vec![1e-3; order]);
        let hp = Hyperparams {
            lambda_g: map.parse("lambda_g", 1e-3)?,
            lambda_i,
            gamma: map.parse("gamma", 1e-3)?,
            inner_steps: map.parse("k", 1)?,
            nonnegative: map.parse("nonnegative", false)?,
            seed: map.parse("seed", 42u64)?,
            stale_core_residual: map.parse("stale_core_residual", false)?,
            threads: map.parse("threads", 1usize)?,
        };
        hp.validate(order)?;

        let missing_pct: f64 = map.parse("missing_pct", 0.2)?;
        if !(missing_pct > 0.0 && missing_pct < 1.0) {
            return Err(Error::Config(format!(
                "missing_pct must be in (0,1), got {missing_pct}"
            )));
        }
        let n_splits: usize = map.parse("n_splits", 1)?;
        if n_splits == 0 {
            return Err(Error::Config("n_splits must be >= 1".into()));
        }

        Ok(RunConfig {
            tensor_path,
            shape,
            side_specs,
            plan,
            ranks,
            hp,
            missing_pct,
            n_splits,
            out_dir: PathBuf::from(map.get("out_dir").unwrap_or("out")),
            deterministic: map.parse("deterministic", true)?,
            record_timing: map.parse("record_timing", true)?,
            labels_path: map.get("labels").map(PathBuf::from),
            cluster_mode: map.parse("cluster_mode", 1)?,
            w: map.parse("w", 5)?,
        })
    }

    pub fn load_side(&self) -> Result<SideInfoSet> {
        let infos = self
            .side_specs
            .iter()
            .map(|s| parse_side_spec(s))
            .collect::<Result<Vec<_>>>()?;
        SideInfoSet::new(infos)
    }
}
