//! `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key may appear once;
//! unknown keys, and keys that do not apply to the chosen domain or regime,
//! are rejected with the offending line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::domain::{Domain, DomainKind};
use crate::elliptic::SolverConfig;
use crate::error::{Error, Result};
use crate::flow::EigenRunOptions;
use crate::operators::{BoundaryRegime, EnergyParams};

const KEYS: &[&str] = &[
    "domain.kind",
    "domain.n",
    "domain.ny",
    "domain.lx",
    "domain.ly",
    "domain.mask",
    "p",
    "regime.kind",
    "regime.beta",
    "regime.s",
    "tau",
    "steps",
    "max_steps",
    "rel_tol",
    "grad_tol",
    "epsilon",
    "seed",
    "init.kind",
    "init.path",
    "out.dir",
    "snapshots",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Interval { n: usize },
    Rectangle { nx: usize, ny: usize, lx: f64, ly: f64 },
    Masked { path: PathBuf },
}

impl DomainSpec {
    pub fn kind(&self) -> DomainKind {
        match self {
            DomainSpec::Interval { .. } => DomainKind::Interval,
            DomainSpec::Rectangle { .. } => DomainKind::Rectangle,
            DomainSpec::Masked { .. } => DomainKind::Masked,
        }
    }

    /// Relative mask paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Domain> {
        match self {
            DomainSpec::Interval { n } => Domain::interval(*n),
            DomainSpec::Rectangle { nx, ny, lx, ly } => Domain::rectangle(*nx, *ny, *lx, *ly),
            DomainSpec::Masked { path } => Domain::masked_from_file(&base.join(path)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSpec {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitKind {
    ConstantOne,
    Extremal,
    Random,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub p: f64,
    pub regime: BoundaryRegime,
    pub tau: TauSpec,
    pub steps: usize,
    pub max_steps: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub init: InitKind,
    pub out_dir: PathBuf,
    /// Step indices whose states are written as snapshots.
    pub snapshots: Vec<usize>,
}

impl RunConfig {
    pub fn params(&self) -> Result<EnergyParams> {
        EnergyParams::new(self.p, self.epsilon)
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig::default().with_grad_tol(self.grad_tol)
    }

    pub fn eigen_options(&self) -> EigenRunOptions {
        EigenRunOptions {
            tau: match self.tau {
                TauSpec::Auto => None,
                TauSpec::Fixed(t) => Some(t),
            },
            rel_tol: self.rel_tol,
            max_steps: self.max_steps,
            ..EigenRunOptions::default()
        }
    }
}

struct Entry {
    line: usize,
    value: String,
}

struct Entries(BTreeMap<String, Entry>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.0.remove(key)
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<(T, usize)>> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(|v| Some((v, e.line)))
                .map_err(|_| config_error(e.line, key, format!("malformed value `{}`", e.value))),
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str, context: &str) -> Result<(T, usize)> {
        self.number(key)?
            .ok_or_else(|| config_error(0, key, format!("required for {context}")))
    }
}

fn config_error(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn check(ok: bool, line: usize, key: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_error(line, key, message))
    }
}

fn collect(text: &str, overrides: &[(String, String)]) -> Result<Entries> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| config_error(line, body, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        check(KEYS.contains(&key), line, key, "unknown key")?;
        check(!value.is_empty(), line, key, "missing value")?;
        if map.contains_key(key) {
            return Err(config_error(line, key, "duplicate key"));
        }
        map.insert(
            key.to_string(),
            Entry {
                line,
                value: value.to_string(),
            },
        );
    }
    // line 0 marks a command-line override
    for (key, value) in overrides {
        check(KEYS.contains(&key.as_str()), 0, key, "unknown key")?;
        map.insert(
            key.clone(),
            Entry {
                line: 0,
                value: value.clone(),
            },
        );
    }
    Ok(Entries(map))
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &[])
}

/// As [`parse_config`], with `key = value` overrides applied on top.
pub fn parse_config_with(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut e = collect(text, overrides)?;

    let kind = e
        .take("domain.kind")
        .ok_or_else(|| config_error(0, "domain.kind", "required"))?;
    let domain = match kind.value.as_str() {
        "interval" => {
            let (n, line) = e.required::<usize>("domain.n", "an interval")?;
            check(n >= 1, line, "domain.n", "needs at least one node")?;
            DomainSpec::Interval { n }
        }
        "rectangle" => {
            let (nx, line) = e.required::<usize>("domain.n", "a rectangle")?;
            check(nx >= 1, line, "domain.n", "needs at least one node")?;
            let ny = match e.number::<usize>("domain.ny")? {
                Some((ny, line)) => {
                    check(ny >= 1, line, "domain.ny", "needs at least one node")?;
                    ny
                }
                None => nx,
            };
            let mut side = |key: &str| -> Result<f64> {
                match e.number::<f64>(key)? {
                    Some((v, line)) => {
                        check(v > 0.0 && v.is_finite(), line, key, "side length must be positive")?;
                        Ok(v)
                    }
                    None => Ok(1.0),
                }
            };
            let lx = side("domain.lx")?;
            let ly = side("domain.ly")?;
            DomainSpec::Rectangle { nx, ny, lx, ly }
        }
        "masked" => {
            let path = e
                .take("domain.mask")
                .ok_or_else(|| config_error(0, "domain.mask", "required for a masked domain"))?;
            DomainSpec::Masked {
                path: PathBuf::from(path.value),
            }
        }
        other => {
            return Err(config_error(
                kind.line,
                "domain.kind",
                format!("expected interval, rectangle or masked, got `{other}`"),
            ))
        }
    };
    for key in ["domain.n", "domain.ny", "domain.lx", "domain.ly", "domain.mask"] {
        if let Some(extra) = e.take(key) {
            return Err(config_error(
                extra.line,
                key,
                format!("does not apply to a {} domain", domain.kind()),
            ));
        }
    }

    let (p, p_line) = e.required::<f64>("p", "every run")?;
    check(p > 1.0 && p.is_finite(), p_line, "p", format!("must exceed 1, got {p}"))?;

    let regime_kind = e.take("regime.kind");
    let (name, regime_line) = match &regime_kind {
        Some(k) => (k.value.as_str(), k.line),
        None => ("dirichlet", 0),
    };
    let beta = e.number::<f64>("regime.beta")?;
    let s = e.number::<f64>("regime.s")?;
    let regime = match name {
        "dirichlet" => BoundaryRegime::Dirichlet,
        "neumann" => BoundaryRegime::Neumann,
        "robin" => {
            let (beta, line) = beta.unwrap_or((1.0, regime_line));
            check(beta > 0.0 && beta.is_finite(), line, "regime.beta", "must be positive")?;
            BoundaryRegime::Robin { beta }
        }
        "fractional" => {
            let (s, line) = s.unwrap_or((0.5, regime_line));
            check(s > 0.0 && s < 1.0, line, "regime.s", "must lie in (0,1)")?;
            BoundaryRegime::FractionalDirichlet { s }
        }
        other => {
            return Err(config_error(
                regime_line,
                "regime.kind",
                format!("expected dirichlet, robin, neumann or fractional, got `{other}`"),
            ))
        }
    };
    if let (Some((_, line)), false) = (beta, matches!(regime, BoundaryRegime::Robin { .. })) {
        return Err(config_error(line, "regime.beta", format!("does not apply to {name}")));
    }
    if let (Some((_, line)), false) = (s, matches!(regime, BoundaryRegime::FractionalDirichlet { .. })) {
        return Err(config_error(line, "regime.s", format!("does not apply to {name}")));
    }
    match (regime, domain.kind()) {
        (BoundaryRegime::Robin { .. }, DomainKind::Masked) => {
            return Err(config_error(
                regime_line,
                "regime.kind",
                "robin needs an interval or rectangle domain",
            ))
        }
        (BoundaryRegime::FractionalDirichlet { .. }, kind) if kind != DomainKind::Interval => {
            return Err(config_error(
                regime_line,
                "regime.kind",
                format!("fractional needs an interval domain, got {kind}"),
            ))
        }
        _ => {}
    }

    let tau = match e.take("tau") {
        None => TauSpec::Auto,
        Some(t) if t.value == "auto" => TauSpec::Auto,
        Some(t) => {
            let v: f64 = t
                .value
                .parse()
                .map_err(|_| config_error(t.line, "tau", format!("expected a number or `auto`, got `{}`", t.value)))?;
            check(v > 0.0 && v.is_finite(), t.line, "tau", "must be positive")?;
            TauSpec::Fixed(v)
        }
    };

    let mut count = |key: &str, default: usize| -> Result<usize> {
        match e.number::<usize>(key)? {
            Some((v, line)) => {
                check(v >= 1, line, key, "must be at least 1")?;
                Ok(v)
            }
            None => Ok(default),
        }
    };
    let steps = count("steps", 100)?;
    let max_steps = count("max_steps", 5000)?;

    let mut positive = |key: &str, default: f64, upper: f64| -> Result<f64> {
        match e.number::<f64>(key)? {
            Some((v, line)) => {
                check(v > 0.0 && v < upper, line, key, format!("must lie in (0, {upper})"))?;
                Ok(v)
            }
            None => Ok(default),
        }
    };
    let rel_tol = positive("rel_tol", 1e-8, 1.0)?;
    let grad_tol = positive("grad_tol", 1e-9, 1.0)?;
    let epsilon = match e.number::<f64>("epsilon")? {
        Some((v, line)) => {
            check((0.0..1.0).contains(&v), line, "epsilon", "must lie in [0, 1)")?;
            check(
                v > 0.0 || p >= 2.0,
                line,
                "epsilon",
                "p < 2 needs a positive regularization",
            )?;
            v
        }
        None => 1e-6,
    };
    let seed = e.number::<u64>("seed")?.map_or(1, |(v, _)| v);

    let init_kind = e.take("init.kind");
    let init_path = e.take("init.path");
    let init = match init_kind.as_ref().map(|k| (k.value.as_str(), k.line)) {
        None | Some(("constant_one", _)) => InitKind::ConstantOne,
        Some(("extremal", _)) => InitKind::Extremal,
        Some(("random", _)) => InitKind::Random,
        Some(("file", line)) => {
            let path = init_path
                .as_ref()
                .ok_or_else(|| config_error(line, "init.path", "required when init.kind = file"))?;
            InitKind::File(PathBuf::from(&path.value))
        }
        Some((other, line)) => {
            return Err(config_error(
                line,
                "init.kind",
                format!("expected constant_one, extremal, random or file, got `{other}`"),
            ))
        }
    };
    if let (Some(path), false) = (&init_path, matches!(init, InitKind::File(_))) {
        return Err(config_error(
            path.line,
            "init.path",
            "only applies when init.kind = file",
        ));
    }

    let out_dir = e
        .take("out.dir")
        .map_or_else(|| PathBuf::from("out"), |o| PathBuf::from(o.value));
    let snapshots = match e.take("snapshots") {
        None => Vec::new(),
        Some(s) => s
            .value
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| config_error(s.line, "snapshots", format!("expected step indices, got `{}`", s.value)))?,
    };

    debug_assert!(e.0.is_empty(), "unconsumed keys: {:?}", e.0.keys().collect::<Vec<_>>());
    Ok(RunConfig {
        domain,
        p,
        regime,
        tau,
        steps,
        max_steps,
        rel_tol,
        grad_tol,
        epsilon,
        seed,
        init,
        out_dir,
        snapshots,
    })
}
