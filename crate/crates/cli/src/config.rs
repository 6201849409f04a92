//! Experiment configuration: an INI-style text format with `[sections]` and
//! `key = value` lines. `#` starts a comment. Keys before the first section
//! header belong to the top-level section.
//!
//! ```text
//! seed = 7
//! rounds = 60
//! method = fedprox(0.01)
//!
//! [dataset]
//! source = synthetic
//! n_samples = 4000
//! dims = 16
//! classes = 4
//!
//! [partition]
//! n_clients = 20
//! dirichlet_alpha = 0.5
//!
//! [space]
//! depths = 1, 2
//! widths = 5, 6, 30
//!
//! [budgets]
//! kind = uniform
//! min = 800
//! max = 1200
//! kn_budget = 200
//! ```
//!
//! Parsing collects every problem before failing. [`ExperimentConfig::to_canonical`]
//! writes every field explicitly and re-parses to an equal value.

use std::collections::BTreeMap;
use std::fmt::{self, Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hetfl_core::server::Method;
use hetfl_core::sim::BaselineModel;
use hetfl_core::supernet::SearchSpace;

/// One problem found in a configuration file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line of the offending entry, if it exists in the file.
    pub line: Option<usize>,
    /// `section.key`, or `section` for section-level problems.
    pub key: String,
    pub message: String,
}

impl Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

/// All problems found in a configuration file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub dims: usize,
    pub classes: usize,
    pub cluster_spread: f64,
    pub center_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// Resolved against the config file's directory by [`parse_config`].
    Csv(PathBuf),
}

/// Fractions of the full dataset held out before partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSection {
    pub test: f64,
    pub val: f64,
    pub supernet: f64,
    pub public: f64,
    /// Synthetic data only: the public set is drawn from blob centers moved by this distance.
    pub public_shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSection {
    pub n_clients: usize,
    pub dirichlet_alpha: f64,
    pub min_samples: usize,
    /// Defaults to `n_clients + floor(churn_rate * n_clients)`.
    pub pool_shards: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceSection {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupernetSection {
    /// File name inside the output directory.
    pub checkpoint: String,
    pub steps: usize,
    pub archs_per_step: usize,
    pub lr: f32,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BudgetKind {
    List(Vec<u64>),
    Uniform { min: u64, max: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSection {
    pub kind: BudgetKind,
    pub kn_budget: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSection {
    pub participation_rate: f64,
    pub churn_rate: f64,
    /// Defaults to one pass over the public set.
    pub distill_steps: Option<usize>,
    pub distill_lr: f32,
    pub distill_batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub max_steps: Option<usize>,
    pub inherit_weights: bool,
    pub baseline_model: BaselineModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub metrics: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: u32,
    pub method: Method,
    pub target_accuracy: Option<f64>,
    pub dataset: DataSource,
    pub splits: SplitSection,
    pub partition: PartitionSection,
    pub space: SpaceSection,
    pub supernet: SupernetSection,
    pub budgets: BudgetSection,
    pub round: RoundSection,
    pub local: LocalSection,
    pub output: OutputSection,
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["seed", "rounds", "method", "target_accuracy"]),
    (
        "dataset",
        &["source", "path", "n_samples", "dims", "classes", "cluster_spread", "center_scale"],
    ),
    ("splits", &["test", "val", "supernet", "public", "public_shift"]),
    ("partition", &["n_clients", "dirichlet_alpha", "min_samples", "pool_shards"]),
    ("space", &["depths", "widths"]),
    ("supernet", &["checkpoint", "steps", "archs_per_step", "lr", "batch_size"]),
    ("budgets", &["kind", "values", "min", "max", "kn_budget"]),
    (
        "round",
        &["participation_rate", "churn_rate", "distill_steps", "distill_lr", "distill_batch_size"],
    ),
    (
        "local",
        &["epochs", "batch_size", "lr", "weight_decay", "max_steps", "inherit_weights", "baseline_model"],
    ),
    ("output", &["dir", "metrics"]),
];

pub fn method_name(m: Method) -> String {
    match m {
        Method::Rafl => "rafl".into(),
        Method::RaflDistill => "rafl_distill".into(),
        Method::FedAvg => "fedavg".into(),
        Method::FedProx { mu } => format!("fedprox({mu})"),
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "rafl" => Ok(Method::Rafl),
        "rafl_distill" => Ok(Method::RaflDistill),
        "fedavg" => Ok(Method::FedAvg),
        "fedprox" => Err("fedprox needs a proximal weight, e.g. fedprox(0.01)".into()),
        _ => {
            let mu = s
                .strip_prefix("fedprox(")
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| format!("unknown method {s:?}; expected rafl, rafl_distill, fedavg or fedprox(mu)"))?;
            let mu: f32 = mu.trim().parse().map_err(|_| format!("bad proximal weight {mu:?}"))?;
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(format!("proximal weight must be finite and >= 0, got {mu}"));
            }
            Ok(Method::FedProx { mu })
        }
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Reader {
    entries: BTreeMap<(String, String), Entry>,
    errors: Vec<ConfigError>,
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

impl Reader {
    fn lex(text: &str) -> Reader {
        let mut r = Reader {
            entries: BTreeMap::new(),
            errors: Vec::new(),
        };
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                match name.strip_suffix(']') {
                    Some(name) => {
                        let name = name.trim();
                        if SCHEMA.iter().any(|(s, _)| *s == name && !name.is_empty()) {
                            section = name.to_string();
                        } else {
                            r.errors.push(ConfigError {
                                line: Some(line),
                                key: name.to_string(),
                                message: "unknown section".into(),
                            });
                            section = format!("\u{0}{name}");
                        }
                    }
                    None => r.errors.push(ConfigError {
                        line: Some(line),
                        key: content.to_string(),
                        message: "malformed section header".into(),
                    }),
                }
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                r.errors.push(ConfigError {
                    line: Some(line),
                    key: qualified(&section, content),
                    message: "expected `key = value`".into(),
                });
                continue;
            };
            let key = key.trim();
            if section.starts_with('\u{0}') {
                continue;
            }
            let known = SCHEMA
                .iter()
                .find(|(s, _)| *s == section)
                .is_some_and(|(_, keys)| keys.contains(&key));
            if !known {
                r.errors.push(ConfigError {
                    line: Some(line),
                    key: qualified(&section, key),
                    message: "unknown key".into(),
                });
                continue;
            }
            let slot = (section.clone(), key.to_string());
            if let Some(prev) = r.entries.get(&slot) {
                r.errors.push(ConfigError {
                    line: Some(line),
                    key: qualified(&section, key),
                    message: format!("duplicate key (first set on line {})", prev.line),
                });
                continue;
            }
            r.entries.insert(
                slot,
                Entry {
                    value: value.trim().to_string(),
                    line,
                },
            );
        }
        r
    }

    fn line(&self, section: &str, key: &str) -> Option<usize> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(|e| e.line)
    }

    fn error(&mut self, section: &str, key: &str, message: impl Into<String>) {
        self.errors.push(ConfigError {
            line: self.line(section, key),
            key: qualified(section, key),
            message: message.into(),
        });
    }

    fn raw(&self, section: &str, key: &str) -> Option<String> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(|e| e.value.clone())
    }

    fn with<T>(&mut self, section: &str, key: &str, f: impl FnOnce(&str) -> Result<T, String>) -> Option<T> {
        let raw = self.raw(section, key)?;
        match f(&raw) {
            Ok(v) => Some(v),
            Err(msg) => {
                self.error(section, key, msg);
                None
            }
        }
    }

    fn optional<T: FromStr>(&mut self, section: &str, key: &str) -> Option<T> {
        self.with(section, key, |s| {
            s.parse::<T>()
                .map_err(|_| format!("cannot parse {s:?} as {}", short_type::<T>()))
        })
    }

    fn required<T: FromStr>(&mut self, section: &str, key: &str) -> Option<T> {
        if self.raw(section, key).is_none() {
            self.error(section, key, "missing required key");
            return None;
        }
        self.optional(section, key)
    }

    fn or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> T {
        self.optional(section, key).unwrap_or(default)
    }

    fn list<T: FromStr>(&mut self, section: &str, key: &str, required: bool) -> Option<Vec<T>> {
        if required && self.raw(section, key).is_none() {
            self.error(section, key, "missing required key");
            return None;
        }
        self.with(section, key, |s| {
            s.split(',')
                .map(|item| {
                    item.trim()
                        .parse::<T>()
                        .map_err(|_| format!("cannot parse list item {:?} as {}", item.trim(), short_type::<T>()))
                })
                .collect()
        })
    }

    /// Records a range error when `ok` is false.
    fn ensure(&mut self, ok: bool, section: &str, key: &str, message: impl Into<String>) {
        if !ok {
            self.error(section, key, message);
        }
    }
}

fn short_type<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    match full {
        "bool" => "true/false",
        "f32" | "f64" => "a number",
        "alloc::string::String" => "text",
        _ if full.starts_with('u') || full == "usize" => "a non-negative integer",
        _ => full,
    }
}

fn unit_open(x: f64) -> bool {
    (0.0..1.0).contains(&x)
}

fn parse_baseline(s: &str) -> Result<BaselineModel, String> {
    match s {
        "uniform" => Ok(BaselineModel::Uniform),
        "knowledge" => Ok(BaselineModel::Knowledge),
        _ => Err(format!("expected uniform or knowledge, got {s:?}")),
    }
}

fn baseline_name(b: BaselineModel) -> &'static str {
    match b {
        BaselineModel::Uniform => "uniform",
        BaselineModel::Knowledge => "knowledge",
    }
}

/// Parses configuration text. Relative paths are left as written.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let mut r = Reader::lex(text);

    let seed = r.or("", "seed", 0u64);
    let rounds = r.required::<u32>("", "rounds");
    if let Some(n) = rounds {
        r.ensure(n >= 1, "", "rounds", "must be at least 1");
    }
    let method = if r.raw("", "method").is_none() {
        r.error("", "method", "missing required key");
        None
    } else {
        r.with("", "method", parse_method)
    };
    let target_accuracy = r.optional::<f64>("", "target_accuracy");
    if let Some(t) = target_accuracy {
        r.ensure((0.0..=1.0).contains(&t), "", "target_accuracy", format!("must lie in [0, 1], got {t}"));
    }

    let source = r.required::<String>("dataset", "source");
    let dataset = match source.as_deref() {
        Some("synthetic") => {
            let n_samples = r.required::<usize>("dataset", "n_samples");
            let dims = r.required::<usize>("dataset", "dims");
            let classes = r.required::<usize>("dataset", "classes");
            let cluster_spread = r.or("dataset", "cluster_spread", 1.0f64);
            let center_scale = r.or("dataset", "center_scale", 1.0f64);
            if let Some(n) = n_samples {
                r.ensure(n >= 1, "dataset", "n_samples", "must be at least 1");
            }
            if let Some(d) = dims {
                r.ensure(d >= 1, "dataset", "dims", "must be at least 1");
            }
            if let Some(c) = classes {
                r.ensure(c >= 2, "dataset", "classes", format!("must be at least 2, got {c}"));
            }
            r.ensure(
                cluster_spread >= 0.0 && cluster_spread.is_finite(),
                "dataset",
                "cluster_spread",
                format!("must be finite and >= 0, got {cluster_spread}"),
            );
            r.ensure(
                center_scale > 0.0 && center_scale.is_finite(),
                "dataset",
                "center_scale",
                format!("must be finite and > 0, got {center_scale}"),
            );
            match (n_samples, dims, classes) {
                (Some(n_samples), Some(dims), Some(classes)) => Some(DataSource::Synthetic(SyntheticSpec {
                    n_samples,
                    dims,
                    classes,
                    cluster_spread,
                    center_scale,
                })),
                _ => None,
            }
        }
        Some("csv") => r.required::<String>("dataset", "path").map(|p| DataSource::Csv(PathBuf::from(p))),
        Some(other) => {
            r.error("dataset", "source", format!("expected synthetic or csv, got {other:?}"));
            None
        }
        None => None,
    };

    let splits = SplitSection {
        test: r.or("splits", "test", 0.2),
        val: r.or("splits", "val", 0.1),
        supernet: r.or("splits", "supernet", 0.2),
        public: r.or("splits", "public", 0.0),
        public_shift: r.or("splits", "public_shift", 0.0),
    };
    for (key, v, zero_ok) in [
        ("test", splits.test, false),
        ("val", splits.val, false),
        ("supernet", splits.supernet, false),
        ("public", splits.public, true),
    ] {
        let ok = unit_open(v) && (zero_ok || v > 0.0);
        let lo = if zero_ok { "[0" } else { "(0" };
        r.ensure(ok, "splits", key, format!("must lie in {lo}, 1), got {v}"));
    }
    let held = splits.test + splits.val + splits.supernet + splits.public;
    r.ensure(held < 1.0, "splits", "test", format!("held-out fractions sum to {held}, leaving no private data"));
    r.ensure(
        splits.public_shift >= 0.0 && splits.public_shift.is_finite(),
        "splits",
        "public_shift",
        format!("must be finite and >= 0, got {}", splits.public_shift),
    );
    if splits.public_shift > 0.0 && matches!(dataset, Some(DataSource::Csv(_))) {
        r.error("splits", "public_shift", "only available for synthetic data");
    }

    let n_clients = r.required::<usize>("partition", "n_clients");
    let dirichlet_alpha = r.required::<f64>("partition", "dirichlet_alpha");
    let min_samples = r.or("partition", "min_samples", 1usize);
    let pool_shards = r.optional::<usize>("partition", "pool_shards");
    if let Some(n) = n_clients {
        r.ensure(n >= 1, "partition", "n_clients", "must be at least 1");
        if let Some(p) = pool_shards {
            r.ensure(p >= n, "partition", "pool_shards", format!("must be at least n_clients ({n}), got {p}"));
        }
    }
    if let Some(a) = dirichlet_alpha {
        r.ensure(a > 0.0 && a.is_finite(), "partition", "dirichlet_alpha", format!("must be finite and > 0, got {a}"));
    }

    let depths = r.list::<usize>("space", "depths", true);
    let widths = r.list::<usize>("space", "widths", true);
    if let (Some(d), Some(w)) = (&depths, &widths) {
        if let Err(e) = SearchSpace::new(1, 1, d.clone(), w.clone()) {
            r.error("space", "depths", e.to_string());
        }
    }

    let supernet = SupernetSection {
        checkpoint: r.or("supernet", "checkpoint", "supernet.bin".to_string()),
        steps: r.or("supernet", "steps", 2000),
        archs_per_step: r.or("supernet", "archs_per_step", 4),
        lr: r.or("supernet", "lr", 0.05),
        batch_size: r.or("supernet", "batch_size", 64),
    };
    r.ensure(supernet.steps >= 1, "supernet", "steps", "must be at least 1");
    r.ensure(supernet.archs_per_step >= 1, "supernet", "archs_per_step", "must be at least 1");
    r.ensure(supernet.lr > 0.0 && supernet.lr.is_finite(), "supernet", "lr", format!("must be finite and > 0, got {}", supernet.lr));
    r.ensure(supernet.batch_size >= 1, "supernet", "batch_size", "must be at least 1");
    r.ensure(!supernet.checkpoint.is_empty(), "supernet", "checkpoint", "must not be empty");

    let kind = match r.required::<String>("budgets", "kind").as_deref() {
        Some("list") => r.list::<u64>("budgets", "values", true).map(BudgetKind::List),
        Some("uniform") => {
            let min = r.required::<u64>("budgets", "min");
            let max = r.required::<u64>("budgets", "max");
            match (min, max) {
                (Some(min), Some(max)) => {
                    r.ensure(min <= max, "budgets", "min", format!("min ({min}) exceeds max ({max})"));
                    Some(BudgetKind::Uniform { min, max })
                }
                _ => None,
            }
        }
        Some(other) => {
            r.error("budgets", "kind", format!("expected list or uniform, got {other:?}"));
            None
        }
        None => None,
    };
    if let (Some(BudgetKind::List(values)), Some(n)) = (&kind, n_clients) {
        r.ensure(
            values.len() == n,
            "budgets",
            "values",
            format!("{} budgets listed for {n} clients", values.len()),
        );
    }
    let kn_budget = r.required::<u64>("budgets", "kn_budget");

    let round = RoundSection {
        participation_rate: r.or("round", "participation_rate", 0.1),
        churn_rate: r.or("round", "churn_rate", 0.0),
        distill_steps: r.optional("round", "distill_steps"),
        distill_lr: r.or("round", "distill_lr", 0.05),
        distill_batch_size: r.or("round", "distill_batch_size", 64),
    };
    let pr = round.participation_rate;
    r.ensure(pr > 0.0 && pr <= 1.0, "round", "participation_rate", format!("must lie in (0, 1], got {pr}"));
    r.ensure(unit_open(round.churn_rate), "round", "churn_rate", format!("must lie in [0, 1), got {}", round.churn_rate));
    r.ensure(round.distill_steps != Some(0), "round", "distill_steps", "must be at least 1");
    r.ensure(
        round.distill_lr > 0.0 && round.distill_lr.is_finite(),
        "round",
        "distill_lr",
        format!("must be finite and > 0, got {}", round.distill_lr),
    );
    r.ensure(round.distill_batch_size >= 1, "round", "distill_batch_size", "must be at least 1");
    if method == Some(Method::RaflDistill) && splits.public == 0.0 {
        r.error("splits", "public", "method rafl_distill needs a public set (public > 0)");
    }

    let baseline_model = if r.raw("local", "baseline_model").is_some() {
        r.with("local", "baseline_model", parse_baseline)
    } else {
        Some(BaselineModel::Uniform)
    };
    let local = LocalSection {
        epochs: r.or("local", "epochs", 1),
        batch_size: r.or("local", "batch_size", 32),
        lr: r.or("local", "lr", 0.05),
        weight_decay: r.or("local", "weight_decay", 0.0),
        max_steps: r.optional("local", "max_steps"),
        inherit_weights: r.or("local", "inherit_weights", true),
        baseline_model: baseline_model.unwrap_or(BaselineModel::Uniform),
    };
    r.ensure(local.epochs >= 1, "local", "epochs", "must be at least 1");
    r.ensure(local.batch_size >= 1, "local", "batch_size", "must be at least 1");
    r.ensure(local.lr > 0.0 && local.lr.is_finite(), "local", "lr", format!("must be finite and > 0, got {}", local.lr));
    r.ensure(
        local.weight_decay >= 0.0 && local.weight_decay.is_finite(),
        "local",
        "weight_decay",
        format!("must be finite and >= 0, got {}", local.weight_decay),
    );
    r.ensure(local.max_steps != Some(0), "local", "max_steps", "must be at least 1");

    let output = OutputSection {
        dir: PathBuf::from(r.or("output", "dir", ".".to_string())),
        metrics: r.or("output", "metrics", "metrics.csv".to_string()),
    };
    r.ensure(!output.metrics.is_empty(), "output", "metrics", "must not be empty");

    if !r.errors.is_empty() {
        return Err(ConfigErrors(r.errors));
    }
    let (Some(rounds), Some(method), Some(dataset), Some(n_clients), Some(dirichlet_alpha)) =
        (rounds, method, dataset, n_clients, dirichlet_alpha)
    else {
        unreachable!("missing values are reported as errors");
    };
    let (Some(depths), Some(widths), Some(kind), Some(kn_budget)) = (depths, widths, kind, kn_budget) else {
        unreachable!("missing values are reported as errors");
    };
    Ok(ExperimentConfig {
        seed,
        rounds,
        method,
        target_accuracy,
        dataset,
        splits,
        partition: PartitionSection {
            n_clients,
            dirichlet_alpha,
            min_samples,
            pool_shards,
        },
        space: SpaceSection { depths, widths },
        supernet,
        budgets: BudgetSection { kind, kn_budget },
        round,
        local,
        output,
    })
}

/// Reads and parses a configuration file. A relative CSV dataset path is
/// resolved against the file's directory.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError {
            line: None,
            key: path.display().to_string(),
            message: format!("cannot read: {e}"),
        }])
    })?;
    let mut cfg = parse_config_str(&text)?;
    if let DataSource::Csv(p) = &mut cfg.dataset {
        if p.is_relative() {
            if let Some(dir) = path.parent() {
                *p = dir.join(&*p);
            }
        }
    }
    Ok(cfg)
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Every field spelled out, in schema order.
    pub fn to_canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "rounds = {}", self.rounds);
        let _ = writeln!(s, "method = {}", method_name(self.method));
        if let Some(t) = self.target_accuracy {
            let _ = writeln!(s, "target_accuracy = {t}");
        }

        s.push_str("\n[dataset]\n");
        match &self.dataset {
            DataSource::Synthetic(d) => {
                let _ = writeln!(s, "source = synthetic");
                let _ = writeln!(s, "n_samples = {}", d.n_samples);
                let _ = writeln!(s, "dims = {}", d.dims);
                let _ = writeln!(s, "classes = {}", d.classes);
                let _ = writeln!(s, "cluster_spread = {}", d.cluster_spread);
                let _ = writeln!(s, "center_scale = {}", d.center_scale);
            }
            DataSource::Csv(p) => {
                let _ = writeln!(s, "source = csv");
                let _ = writeln!(s, "path = {}", p.display());
            }
        }

        let sp = &self.splits;
        let _ = write!(
            s,
            "\n[splits]\ntest = {}\nval = {}\nsupernet = {}\npublic = {}\npublic_shift = {}\n",
            sp.test, sp.val, sp.supernet, sp.public, sp.public_shift
        );

        let p = &self.partition;
        let _ = write!(
            s,
            "\n[partition]\nn_clients = {}\ndirichlet_alpha = {}\nmin_samples = {}\n",
            p.n_clients, p.dirichlet_alpha, p.min_samples
        );
        if let Some(pool) = p.pool_shards {
            let _ = writeln!(s, "pool_shards = {pool}");
        }

        let _ = write!(
            s,
            "\n[space]\ndepths = {}\nwidths = {}\n",
            join(&self.space.depths),
            join(&self.space.widths)
        );

        let n = &self.supernet;
        let _ = write!(
            s,
            "\n[supernet]\ncheckpoint = {}\nsteps = {}\narchs_per_step = {}\nlr = {}\nbatch_size = {}\n",
            n.checkpoint, n.steps, n.archs_per_step, n.lr, n.batch_size
        );

        s.push_str("\n[budgets]\n");
        match &self.budgets.kind {
            BudgetKind::List(v) => {
                let _ = writeln!(s, "kind = list\nvalues = {}", join(v));
            }
            BudgetKind::Uniform { min, max } => {
                let _ = writeln!(s, "kind = uniform\nmin = {min}\nmax = {max}");
            }
        }
        let _ = writeln!(s, "kn_budget = {}", self.budgets.kn_budget);

        let rd = &self.round;
        let _ = write!(
            s,
            "\n[round]\nparticipation_rate = {}\nchurn_rate = {}\n",
            rd.participation_rate, rd.churn_rate
        );
        if let Some(steps) = rd.distill_steps {
            let _ = writeln!(s, "distill_steps = {steps}");
        }
        let _ = write!(s, "distill_lr = {}\ndistill_batch_size = {}\n", rd.distill_lr, rd.distill_batch_size);

        let l = &self.local;
        let _ = write!(
            s,
            "\n[local]\nepochs = {}\nbatch_size = {}\nlr = {}\nweight_decay = {}\n",
            l.epochs, l.batch_size, l.lr, l.weight_decay
        );
        if let Some(m) = l.max_steps {
            let _ = writeln!(s, "max_steps = {m}");
        }
        let _ = write!(
            s,
            "inherit_weights = {}\nbaseline_model = {}\n",
            l.inherit_weights,
            baseline_name(l.baseline_model)
        );

        let _ = write!(
            s,
            "\n[output]\ndir = {}\nmetrics = {}\n",
            self.output.dir.display(),
            self.output.metrics
        );
        s
    }

    /// Shards cut from the private pool (active clients plus churn reserve).
    pub fn pool_shards(&self) -> usize {
        self.partition.pool_shards.unwrap_or_else(|| {
            let n = self.partition.n_clients;
            n + (self.round.churn_rate * n as f64 + 1e-9).floor() as usize
        })
    }
}
