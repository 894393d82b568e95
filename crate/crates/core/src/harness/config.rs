//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! n = 2000
//! signal_cov = [1.7320508075688772, 2.23606797749979]
//! lambda = inf
//! dataset = "data/train-images-idx3-ubyte"
//! ```
//!
//! Every key can be overridden from the command line with `--key value`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::gan::Regularization;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Ode,
    Gan,
    Oja,
    Grouse,
    Compare,
    Offdiag,
    RealData,
    Uplift,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Ode,
        ExperimentKind::Gan,
        ExperimentKind::Oja,
        ExperimentKind::Grouse,
        ExperimentKind::Compare,
        ExperimentKind::Offdiag,
        ExperimentKind::RealData,
        ExperimentKind::Uplift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Ode => "ode",
            ExperimentKind::Gan => "gan",
            ExperimentKind::Oja => "oja",
            ExperimentKind::Grouse => "grouse",
            ExperimentKind::Compare => "compare",
            ExperimentKind::Offdiag => "offdiag",
            ExperimentKind::RealData => "real-data",
            ExperimentKind::Uplift => "uplift",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || (s == "uplift-demo" && *k == ExperimentKind::Uplift))
            .ok_or_else(|| config_err("kind", format!("unknown experiment `{s}`")))
    }
}

/// How the initial `P_0`, `Q_0` are filled from `init`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitPattern {
    /// `init` on the diagonal, zero elsewhere.
    Diagonal,
    /// `init` in every entry.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Idx,
    Csv,
    /// Exact low-rank samples generated from the model parameters.
    Synthetic,
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Raw key/value pairs, before typing and validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(&format!("line {}", idx + 1), "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(config_err(&format!("line {}", idx + 1), format!("invalid key `{key}`")));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(config_err(key, "duplicate key"));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.replace('-', "_"), value.trim().to_string());
    }

    /// Applies `--key value` pairs.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        let mut it = args.iter().map(AsRef::as_ref);
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| config_err(flag, "overrides must look like `--key value`"))?;
            if let Some((k, v)) = key.split_once('=') {
                self.set(k, v);
                continue;
            }
            let value = it.next().ok_or_else(|| config_err(key, "missing value"))?;
            self.set(key, value);
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    s.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(s)
}

fn parse_number<V: FromStr>(key: &str, s: &str) -> Result<V> {
    unquote(s)
        .parse()
        .map_err(|_| config_err(key, format!("`{s}` is not a valid number")))
}

fn parse_list<V: FromStr>(key: &str, s: &str) -> Result<Vec<V>> {
    let s = s.trim();
    let inner = s
        .strip_prefix('[')
        .and_then(|x| x.strip_suffix(']'))
        .unwrap_or(s);
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner.split(',').map(|item| parse_number(key, item.trim())).collect()
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match unquote(s) {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(config_err(key, format!("`{other}` is not a boolean"))),
    }
}

/// Typed reader that tracks which keys were consumed.
struct Reader<'a> {
    raw: &'a RawConfig,
    used: Vec<&'static str>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, key: &'static str) -> Option<&'a str> {
        self.used.push(key);
        self.raw.get(key)
    }

    fn number<V: FromStr>(&mut self, key: &'static str, default: V) -> Result<V> {
        self.raw(key).map_or(Ok(default), |s| parse_number(key, s))
    }

    fn list<V: FromStr>(&mut self, key: &'static str) -> Result<Option<Vec<V>>> {
        self.raw(key).map(|s| parse_list(key, s)).transpose()
    }

    fn boolean(&mut self, key: &'static str, default: bool) -> Result<bool> {
        self.raw(key).map_or(Ok(default), |s| parse_bool(key, s))
    }

    fn text(&mut self, key: &'static str) -> Option<String> {
        self.raw(key).map(|s| unquote(s).to_string())
    }
}

/// Every hyperparameter of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub q: usize,
    pub tau: f64,
    pub tau_tilde: f64,
    pub lambda: Regularization<f64>,
    pub eta_t: f64,
    pub eta_g: f64,
    /// Diagonal of `Lambda` (length `d`).
    pub signal_cov: Vec<f64>,
    /// Diagonal of `Lambda~` (length `p`).
    pub gen_cov: Vec<f64>,
    pub init: f64,
    pub init_pattern: InitPattern,
    /// Optional full initial blocks, row-major.
    pub init_p: Option<Vec<f64>>,
    pub init_q: Option<Vec<f64>>,
    pub init_s: Option<Vec<f64>>,
    pub t_end: f64,
    pub dt: f64,
    /// Recording interval on the `t` axis.
    pub record_every: f64,
    pub seeds: Vec<u64>,
    pub sizes: Vec<usize>,
    pub inits: Vec<f64>,
    pub offdiag_empirical: bool,
    pub similarity_threshold: f64,
    pub dataset: Option<PathBuf>,
    pub dataset_format: DatasetFormat,
    pub synthetic_samples: usize,
    pub k: usize,
    pub epochs_multi: usize,
    pub epochs_single: usize,
    pub epochs_baseline: usize,
    pub oja_tau: f64,
    pub grouse_tau: f64,
    pub center_stream: bool,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub eval_every: usize,
    pub mc_samples: usize,
}

impl ExperimentConfig {
    /// Defaults for `kind`, as if from an empty config file.
    pub fn defaults(kind: ExperimentKind) -> Self {
        Self::from_raw(kind, &RawConfig::default()).expect("defaults are valid")
    }

    pub fn from_raw(kind: ExperimentKind, raw: &RawConfig) -> Result<Self> {
        let mut r = Reader { raw, used: Vec::new() };
        let real = kind == ExperimentKind::RealData;

        let (d, k) = if real {
            let k = r.number("k", 16usize)?;
            (r.number("d", k)?, k)
        } else {
            let d = r.number("d", 2usize)?;
            (d, r.number("k", d)?)
        };
        let p = r.number("p", if real { k } else { d })?;
        let q = r.number("q", if real { k } else { d })?;
        let n = r.number("n", 2000usize)?;
        let lambda = match r.raw("lambda").map(unquote) {
            None | Some("inf") | Some("infinite") | Some("infinity") => Regularization::Infinite,
            Some(s) => Regularization::Finite(parse_number("lambda", s)?),
        };
        let default_signal = if real {
            vec![5.0]
        } else if d == 2 {
            vec![3f64.sqrt(), 5f64.sqrt()]
        } else {
            vec![1.0; d]
        };
        let signal_cov = broadcast("signal_cov", r.list("signal_cov")?.unwrap_or(default_signal), d)?;
        let gen_default = if real {
            vec![5.0]
        } else if p == d {
            signal_cov.clone()
        } else {
            let last = signal_cov.last().copied().unwrap_or(1.0);
            signal_cov.iter().copied().chain(std::iter::repeat(last)).take(p).collect()
        };
        let gen_cov = broadcast("gen_cov", r.list("gen_cov")?.unwrap_or(gen_default), p)?;
        let init_pattern = match r.text("init_pattern").as_deref() {
            None if kind == ExperimentKind::Offdiag => InitPattern::Uniform,
            None | Some("diagonal") => InitPattern::Diagonal,
            Some("uniform") => InitPattern::Uniform,
            Some(other) => return Err(config_err("init_pattern", format!("unknown pattern `{other}`"))),
        };
        let dataset_format = match r.text("dataset_format").as_deref() {
            None | Some("synthetic") => DatasetFormat::Synthetic,
            Some("idx") => DatasetFormat::Idx,
            Some("csv") => DatasetFormat::Csv,
            Some(other) => return Err(config_err("dataset_format", format!("unknown format `{other}`"))),
        };

        let cfg = Self {
            kind,
            n,
            d,
            p,
            q,
            tau: r.number("tau", 0.2)?,
            tau_tilde: r.number("tau_tilde", 0.04)?,
            lambda,
            eta_t: r.number("eta_t", if real { 1.0 } else { 2.0 })?,
            eta_g: r.number("eta_g", if real { 1.0 } else { 2.0 })?,
            signal_cov,
            gen_cov,
            init: r.number("init", 0.1)?,
            init_pattern,
            init_p: r.list("init_p")?,
            init_q: r.list("init_q")?,
            init_s: r.list("init_s")?,
            t_end: r.number("t_end", 50.0)?,
            dt: r.number("dt", 0.01)?,
            record_every: r.number("record_every", 0.1)?,
            seeds: r.list("seeds")?.unwrap_or_else(|| vec![1]),
            sizes: r.list("sizes")?.unwrap_or_else(|| vec![500, 2000, 8000]),
            inits: r.list("inits")?.unwrap_or_else(|| vec![0.1, 0.01, 0.001, 0.0001]),
            offdiag_empirical: r.boolean("offdiag_empirical", false)?,
            similarity_threshold: r.number("similarity_threshold", 0.5)?,
            dataset: r.text("dataset").map(PathBuf::from),
            dataset_format,
            synthetic_samples: r.number("synthetic_samples", 20_000usize)?,
            k,
            epochs_multi: r.number("epochs_multi", 1usize)?,
            epochs_single: r.number("epochs_single", 5usize)?,
            epochs_baseline: r.number("epochs_baseline", 1usize)?,
            oja_tau: r.number("oja_tau", 0.1)?,
            grouse_tau: r.number("grouse_tau", 0.1)?,
            center_stream: r.boolean("center_stream", true)?,
            plateau_window: r.number("plateau_window", 500usize)?,
            plateau_tol: r.number("plateau_tol", 1e-3)?,
            eval_every: r.number("eval_every", 1000usize)?,
            mc_samples: r.number("mc_samples", 100_000usize)?,
        };
        // keys accepted but not stored in the typed config
        for k in ["kind", "out"] {
            r.used.push(k);
        }
        if let Some(unknown) = raw.keys().find(|k| !r.used.contains(k)) {
            return Err(config_err(unknown, "unknown key"));
        }
        if let Some(declared) = raw.get("kind") {
            let declared: ExperimentKind = unquote(declared).parse()?;
            if declared != kind {
                return Err(config_err(
                    "kind",
                    format!("config is for `{declared}` but `{kind}` was requested"),
                ));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Field-level checks, run before any experiment starts.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(key, format!("must be positive and finite, got {v}")))
            }
        };
        let non_negative = |key: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(key, format!("must be non-negative and finite, got {v}")))
            }
        };
        if self.d == 0 || self.p == 0 || self.q == 0 {
            return Err(config_err("d", "ranks d, p, q must be at least 1"));
        }
        if self.d > self.p || self.q > self.p {
            return Err(config_err(
                "p",
                format!("need d <= p and q <= p, got d = {}, p = {}, q = {}", self.d, self.p, self.q),
            ));
        }
        if self.p > self.n {
            return Err(config_err("n", format!("must be at least p = {}", self.p)));
        }
        // zero rates are allowed: they freeze the dynamics
        non_negative("tau", self.tau)?;
        non_negative("tau_tilde", self.tau_tilde)?;
        if let Regularization::Finite(l) = self.lambda {
            positive("lambda", l)?;
        }
        non_negative("eta_t", self.eta_t)?;
        non_negative("eta_g", self.eta_g)?;
        for &v in &self.signal_cov {
            non_negative("signal_cov", v)?;
        }
        for &v in &self.gen_cov {
            non_negative("gen_cov", v)?;
        }
        if !self.init.is_finite() {
            return Err(config_err("init", "must be finite"));
        }
        check_block("init_p", &self.init_p, self.d * self.p)?;
        check_block("init_q", &self.init_q, self.d * self.q)?;
        check_block("init_s", &self.init_s, self.p * self.p)?;
        non_negative("t_end", self.t_end)?;
        positive("dt", self.dt)?;
        positive("record_every", self.record_every)?;
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "need at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(config_err("seeds", "seeds must be distinct"));
        }
        if self.kind == ExperimentKind::Compare {
            if self.sizes.len() < 2 {
                return Err(config_err("sizes", "need at least two dimensions to fit a slope"));
            }
            if self.sizes.iter().any(|&s| s < self.d + self.p + self.q) {
                return Err(config_err("sizes", "every size must be at least d + p + q"));
            }
        }
        if self.kind == ExperimentKind::Offdiag && self.inits.is_empty() {
            return Err(config_err("inits", "need at least one initialization"));
        }
        positive("similarity_threshold", self.similarity_threshold)?;
        if self.kind == ExperimentKind::RealData {
            if self.dataset_format != DatasetFormat::Synthetic && self.dataset.is_none() {
                return Err(config_err("dataset", "required for idx and csv formats"));
            }
            if self.k == 0 {
                return Err(config_err("k", "must be at least 1"));
            }
            positive("oja_tau", self.oja_tau)?;
            positive("grouse_tau", self.grouse_tau)?;
            if self.eval_every == 0 {
                return Err(config_err("eval_every", "must be at least 1"));
            }
            if self.plateau_window == 0 {
                return Err(config_err("plateau_window", "must be at least 1"));
            }
        }
        if matches!(self.kind, ExperimentKind::Oja | ExperimentKind::Grouse) {
            positive(if self.kind == ExperimentKind::Oja { "oja_tau" } else { "grouse_tau" }, self.baseline_tau())?;
        }
        if self.kind == ExperimentKind::Gan && self.mc_samples < 2 {
            return Err(config_err("mc_samples", "must be at least 2"));
        }
        Ok(())
    }

    pub fn baseline_tau(&self) -> f64 {
        match self.kind {
            ExperimentKind::Grouse => self.grouse_tau,
            _ => self.oja_tau,
        }
    }

    /// Normalized `key = value` lines, for manifests.
    pub fn echo(&self) -> Vec<(String, String)> {
        let list = |v: &[f64]| format!("[{}]", v.iter().map(f64::to_string).collect::<Vec<_>>().join(", "));
        let ulist = |v: Vec<String>| format!("[{}]", v.join(", "));
        let mut out = vec![
            ("kind".to_string(), self.kind.to_string()),
            ("n".into(), self.n.to_string()),
            ("d".into(), self.d.to_string()),
            ("p".into(), self.p.to_string()),
            ("q".into(), self.q.to_string()),
            ("tau".into(), self.tau.to_string()),
            ("tau_tilde".into(), self.tau_tilde.to_string()),
            (
                "lambda".into(),
                match self.lambda {
                    Regularization::Infinite => "inf".to_string(),
                    Regularization::Finite(l) => l.to_string(),
                },
            ),
            ("eta_t".into(), self.eta_t.to_string()),
            ("eta_g".into(), self.eta_g.to_string()),
            ("signal_cov".into(), list(&self.signal_cov)),
            ("gen_cov".into(), list(&self.gen_cov)),
            ("init".into(), self.init.to_string()),
            (
                "init_pattern".into(),
                match self.init_pattern {
                    InitPattern::Diagonal => "diagonal",
                    InitPattern::Uniform => "uniform",
                }
                .to_string(),
            ),
        ];
        for (key, block) in [("init_p", &self.init_p), ("init_q", &self.init_q), ("init_s", &self.init_s)] {
            if let Some(b) = block {
                out.push((key.to_string(), list(b)));
            }
        }
        out.extend([
            ("t_end".to_string(), self.t_end.to_string()),
            ("dt".into(), self.dt.to_string()),
            ("record_every".into(), self.record_every.to_string()),
            ("seeds".into(), ulist(self.seeds.iter().map(u64::to_string).collect())),
            ("sizes".into(), ulist(self.sizes.iter().map(usize::to_string).collect())),
            ("inits".into(), list(&self.inits)),
            ("offdiag_empirical".into(), self.offdiag_empirical.to_string()),
            ("similarity_threshold".into(), self.similarity_threshold.to_string()),
        ]);
        if let Some(path) = &self.dataset {
            out.push(("dataset".into(), format!("\"{}\"", path.display())));
        }
        out.extend([
            (
                "dataset_format".to_string(),
                match self.dataset_format {
                    DatasetFormat::Idx => "idx",
                    DatasetFormat::Csv => "csv",
                    DatasetFormat::Synthetic => "synthetic",
                }
                .to_string(),
            ),
            ("synthetic_samples".into(), self.synthetic_samples.to_string()),
            ("k".into(), self.k.to_string()),
            ("epochs_multi".into(), self.epochs_multi.to_string()),
            ("epochs_single".into(), self.epochs_single.to_string()),
            ("epochs_baseline".into(), self.epochs_baseline.to_string()),
            ("oja_tau".into(), self.oja_tau.to_string()),
            ("grouse_tau".into(), self.grouse_tau.to_string()),
            ("center_stream".into(), self.center_stream.to_string()),
            ("plateau_window".into(), self.plateau_window.to_string()),
            ("plateau_tol".into(), self.plateau_tol.to_string()),
            ("eval_every".into(), self.eval_every.to_string()),
            ("mc_samples".into(), self.mc_samples.to_string()),
        ]);
        out
    }

    /// Steps between recordings for `n`-dimensional SGD (`t = k / n`).
    pub fn record_steps(&self, n: usize) -> u64 {
        ((self.record_every * n as f64).round() as u64).max(1)
    }

    /// Integration steps between ODE recordings.
    pub fn record_ode_steps(&self) -> usize {
        ((self.record_every / self.dt).round() as usize).max(1)
    }
}

fn broadcast(key: &str, values: Vec<f64>, len: usize) -> Result<Vec<f64>> {
    match values.len() {
        l if l == len => Ok(values),
        1 => Ok(vec![values[0]; len]),
        l => Err(config_err(key, format!("expected {len} entries (or 1 to broadcast), got {l}"))),
    }
}

fn check_block(key: &str, block: &Option<Vec<f64>>, len: usize) -> Result<()> {
    match block {
        Some(b) if b.len() != len => Err(config_err(key, format!("expected {len} row-major entries, got {}", b.len()))),
        Some(b) if b.iter().any(|v| !v.is_finite()) => Err(config_err(key, "entries must be finite")),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalars_lists_and_comments() {
        let raw = RawConfig::parse("n = 100 # dim\nseeds = [1, 2, 3]\n\ndataset = \"a#b.idx\"\n").unwrap();
        assert_eq!(raw.get("n"), Some("100"));
        assert_eq!(raw.get("dataset"), Some("\"a#b.idx\""));
        let cfg = ExperimentConfig::from_raw(ExperimentKind::Gan, &raw).unwrap();
        assert_eq!(cfg.n, 100);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.dataset.unwrap(), PathBuf::from("a#b.idx"));
    }

    #[test]
    fn defaults_follow_the_reference_setup() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::Ode);
        assert_eq!((cfg.d, cfg.p, cfg.q), (2, 2, 2));
        assert_eq!(cfg.signal_cov, vec![3f64.sqrt(), 5f64.sqrt()]);
        assert_eq!(cfg.gen_cov, cfg.signal_cov);
        assert_eq!((cfg.tau, cfg.tau_tilde, cfg.eta_t, cfg.eta_g), (0.2, 0.04, 2.0, 2.0));
        assert_eq!(cfg.lambda, Regularization::Infinite);
        assert_eq!((cfg.t_end, cfg.dt), (50.0, 0.01));
        assert_eq!(ExperimentConfig::defaults(ExperimentKind::RealData).oja_tau, 0.1);
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut raw = RawConfig::parse("tau = 0.2").unwrap();
        raw.apply_overrides(&["--tau", "0.5", "--eta-t=1"]).unwrap();
        let cfg = ExperimentConfig::from_raw(ExperimentKind::Ode, &raw).unwrap();
        assert_eq!(cfg.tau, 0.5);
        assert_eq!(cfg.eta_t, 1.0);
        assert!(raw.clone().apply_overrides(&["tau", "1"]).is_err());
        assert!(raw.clone().apply_overrides(&["--tau"]).is_err());
    }

    #[test]
    fn field_level_errors() {
        let bad = |text: &str| match ExperimentConfig::from_raw(ExperimentKind::Ode, &RawConfig::parse(text).unwrap()) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(bad("tau = -1"), "tau");
        assert_eq!(bad("tau_tilde = nan"), "tau_tilde");
        assert_eq!(bad("dt = 0"), "dt");
        assert_eq!(bad("signal_cov = [1, 2, 3]"), "signal_cov");
        assert_eq!(bad("n = abc"), "n");
        assert_eq!(bad("bogus = 1"), "bogus");
        assert_eq!(bad("q = 3"), "p");
        assert_eq!(bad("seeds = [1, 1]"), "seeds");
        assert_eq!(bad("kind = gan"), "kind");
        assert!(RawConfig::parse("n = 1\nn = 2").is_err());
        assert!(RawConfig::parse("just words").is_err());
    }

    #[test]
    fn lambda_modes() {
        let cfg = ExperimentConfig::from_raw(ExperimentKind::Gan, &RawConfig::parse("lambda = 2.5").unwrap()).unwrap();
        assert_eq!(cfg.lambda, Regularization::Finite(2.5));
    }

    #[test]
    fn broadcast_single_value() {
        let cfg = ExperimentConfig::from_raw(ExperimentKind::Ode, &RawConfig::parse("gen_cov = [4]").unwrap()).unwrap();
        assert_eq!(cfg.gen_cov, vec![4.0, 4.0]);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = ExperimentConfig::from_raw(
            ExperimentKind::Compare,
            &RawConfig::parse("seeds = [3, 4]\ninit_pattern = uniform\nlambda = 3").unwrap(),
        )
        .unwrap();
        let text: String = cfg.echo().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let again = ExperimentConfig::from_raw(ExperimentKind::Compare, &RawConfig::parse(&text).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn kind_names() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.as_str().parse::<ExperimentKind>().unwrap(), k);
        }
        assert_eq!("uplift-demo".parse::<ExperimentKind>().unwrap(), ExperimentKind::Uplift);
    }
}
