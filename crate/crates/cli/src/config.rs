//! Run configuration: TOML with `[model]`, `[grid]`, exactly one
//! `[product.<kind>]` table and `[run]`.
//!
//! Parsing collects every problem instead of stopping at the first one.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use tdbsde::asian::{SmoothingSpec, SmoothingVariant};
use tdbsde::continuous_ratchet::DrawdownSpec;
use tdbsde::discrete_ratchet::RatchetSpec;
use tdbsde::market::{Measure, ShortRateModel, TimeGrid};
use tdbsde::obpi::BenchmarkSpec;
use tdbsde::withdrawal::{WithdrawalSpec, DEFAULT_DEPTH_CAP};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

/// Every validation problem found in one config.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vasicek,
    Cir,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub speed: f64,
    pub mean: f64,
    pub vol: f64,
    pub r0: f64,
    /// Market price of rate risk.
    pub theta: f64,
}

impl ModelConfig {
    pub fn build(&self) -> tdbsde::Result<ShortRateModel> {
        let m = match self.variant {
            Variant::Vasicek => ShortRateModel::vasicek(self.speed, self.mean, self.vol, self.r0)?,
            Variant::Cir => ShortRateModel::cir(self.speed, self.mean, self.vol, self.r0)?,
            Variant::Constant => ShortRateModel::constant(self.r0)?,
        };
        m.with_risk_premium(self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub maturity: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Bond,
    Payout,
    Fund,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteProduct {
    pub gamma: f64,
    pub g: f64,
    pub anniversaries: Vec<f64>,
    pub policy: Policy,
    pub fund_weight: f64,
    pub initial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousProduct {
    pub gamma: f64,
    pub g: f64,
    pub u: f64,
    pub fund_start: f64,
    pub initial: f64,
    pub vol_cap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsianVariant {
    Average,
    Bonus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsianProduct {
    pub beta: f64,
    pub gamma: f64,
    pub weight: f64,
    pub variant: AsianVariant,
    pub initial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithdrawalProduct {
    pub gamma: f64,
    pub consumption: f64,
    pub horizon: f64,
    pub depth: usize,
    pub max_iter: usize,
    /// Paths for the Monte Carlo cross-check; 0 skips it.
    pub oracle_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObpiProduct {
    pub weight: f64,
    pub capital: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Product {
    RatchetDiscrete(DiscreteProduct),
    RatchetContinuous(ContinuousProduct),
    Asian(AsianProduct),
    Withdrawal(WithdrawalProduct),
    Obpi(ObpiProduct),
}

impl Product {
    pub fn kind(&self) -> &'static str {
        match self {
            Product::RatchetDiscrete(_) => "ratchet-discrete",
            Product::RatchetContinuous(_) => "ratchet-continuous",
            Product::Asian(_) => "asian",
            Product::Withdrawal(_) => "withdrawal",
            Product::Obpi(_) => "obpi",
        }
    }

    /// Documented tolerance on the product's headline check.
    pub fn default_tolerance(&self) -> f64 {
        match self {
            Product::RatchetDiscrete(_) => 1e-10,
            Product::RatchetContinuous(_) => 0.02,
            Product::Asian(_) => 1e-3,
            Product::Withdrawal(_) => 1e-10,
            // put-call parity, in standard errors
            Product::Obpi(_) => 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureChoice {
    P,
    Q,
}

impl MeasureChoice {
    pub fn measure(self) -> Measure {
        match self {
            MeasureChoice::P => Measure::P,
            MeasureChoice::Q => Measure::Q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub paths: usize,
    pub offset: usize,
    pub seed: u64,
    pub out: String,
    pub antithetic: bool,
    /// Measure the hedging ensembles are simulated under.
    pub measure: MeasureChoice,
    /// Grid doublings in a convergence study.
    pub levels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub product: Product,
    pub run: RunSection,
}

impl RunConfig {
    /// Canonical TOML form; parsing it gives back the same config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid(&self) -> tdbsde::Result<TimeGrid> {
        TimeGrid::new(self.grid.maturity, self.grid.steps)
    }

    /// Tolerance in force and whether it is looser than the default.
    pub fn tolerance(&self) -> (f64, bool) {
        let default = self.product.default_tolerance();
        match self.run.tolerance {
            Some(t) => (t, t > default),
            None => (default, false),
        }
    }

    /// Re-checks everything that depends on more than one section, e.g.
    /// after command-line overrides.
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut errors = Vec::new();
        semantic_checks(self, &mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errors))
        }
    }
}

/// Tracks which keys of one table were read.
struct Section<'a> {
    path: String,
    table: Option<&'a Table>,
    used: BTreeSet<&'static str>,
}

impl<'a> Section<'a> {
    fn new(path: &str, table: Option<&'a Table>) -> Self {
        Self {
            path: path.to_string(),
            table,
            used: BTreeSet::new(),
        }
    }

    fn key(&self, key: &str) -> String {
        format!("{}.{key}", self.path)
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.used.insert(key);
        self.table.and_then(|t| t.get(key))
    }

    fn float(
        &mut self,
        key: &'static str,
        default: Option<f64>,
        errors: &mut Vec<ConfigError>,
    ) -> f64 {
        match self.raw(key) {
            Some(Value::Float(x)) => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(other) => {
                errors.push(type_error(self.key(key), "a number", other));
                f64::NAN
            }
            None => default.unwrap_or_else(|| {
                errors.push(missing(self.key(key)));
                f64::NAN
            }),
        }
    }

    fn integer(&mut self, key: &'static str, default: u64, errors: &mut Vec<ConfigError>) -> u64 {
        match self.raw(key) {
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(Value::Integer(i)) => {
                errors.push(ConfigError {
                    path: self.key(key),
                    message: format!("must be >= 0, got {i}"),
                });
                default
            }
            Some(other) => {
                errors.push(type_error(self.key(key), "a non-negative integer", other));
                default
            }
            None => default,
        }
    }

    fn boolean(&mut self, key: &'static str, default: bool, errors: &mut Vec<ConfigError>) -> bool {
        match self.raw(key) {
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                errors.push(type_error(self.key(key), "a boolean", other));
                default
            }
            None => default,
        }
    }

    fn string(
        &mut self,
        key: &'static str,
        default: &str,
        errors: &mut Vec<ConfigError>,
    ) -> String {
        match self.raw(key) {
            Some(Value::String(s)) => s.clone(),
            Some(other) => {
                errors.push(type_error(self.key(key), "a string", other));
                default.to_string()
            }
            None => default.to_string(),
        }
    }

    fn choice<T: Copy>(
        &mut self,
        key: &'static str,
        options: &[(&str, T)],
        default: T,
        errors: &mut Vec<ConfigError>,
    ) -> T {
        let Some(v) = self.raw(key) else {
            return default;
        };
        let Value::String(s) = v else {
            errors.push(type_error(self.key(key), "a string", v));
            return default;
        };
        if let Some((_, t)) = options.iter().find(|(name, _)| name == s) {
            return *t;
        }
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        errors.push(ConfigError {
            path: self.key(key),
            message: format!("unknown value `{s}`{}", suggestion(s, &names)),
        });
        default
    }

    fn float_list(&mut self, key: &'static str, errors: &mut Vec<ConfigError>) -> Option<Vec<f64>> {
        let v = self.raw(key)?;
        let Value::Array(items) = v else {
            errors.push(type_error(self.key(key), "an array of numbers", v));
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match item {
                Value::Float(x) => out.push(*x),
                Value::Integer(i) => out.push(*i as f64),
                other => {
                    errors.push(type_error(self.key(key), "an array of numbers", other));
                    return None;
                }
            }
        }
        Some(out)
    }

    /// Reports keys that were never read.
    fn finish(self, errors: &mut Vec<ConfigError>) {
        let Some(table) = self.table else {
            return;
        };
        let known: Vec<&str> = self.used.iter().copied().collect();
        for key in table.keys() {
            if !self.used.contains(key.as_str()) {
                errors.push(ConfigError {
                    path: self.key(key),
                    message: format!("unknown key{}", suggestion(key, &known)),
                });
            }
        }
    }
}

fn suggestion(word: &str, options: &[&str]) -> String {
    options
        .iter()
        .map(|o| (strsim::damerau_levenshtein(word, o), *o))
        .filter(|(d, o)| *d <= 2 || strsim::jaro_winkler(word, o) > 0.85)
        .min()
        .map(|(_, o)| format!(" (did you mean `{o}`?)"))
        .unwrap_or_default()
}

fn type_error(path: String, expected: &str, found: &Value) -> ConfigError {
    ConfigError {
        path,
        message: format!("expected {expected}, found {}", found.type_str()),
    }
}

fn missing(path: String) -> ConfigError {
    ConfigError {
        path,
        message: "missing required key".into(),
    }
}

fn table<'a>(root: &'a Table, key: &str, errors: &mut Vec<ConfigError>) -> Option<&'a Table> {
    match root.get(key) {
        Some(Value::Table(t)) => Some(t),
        Some(other) => {
            errors.push(type_error(key.to_string(), "a table", other));
            None
        }
        None => None,
    }
}

const PRODUCTS: [&str; 5] = [
    "ratchet-discrete",
    "ratchet-continuous",
    "asian",
    "withdrawal",
    "obpi",
];

/// Parses and validates a config, returning all problems at once.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| {
        ConfigErrors(vec![ConfigError {
            path: String::new(),
            message: format!("not valid TOML: {}", e.message()),
        }])
    })?;
    let mut errors = Vec::new();

    for key in root.keys() {
        if !["model", "grid", "product", "run"].contains(&key.as_str()) {
            errors.push(ConfigError {
                path: key.clone(),
                message: format!(
                    "unknown section{}",
                    suggestion(key, &["model", "grid", "product", "run"])
                ),
            });
        }
    }

    let mut s = Section::new("model", table(&root, "model", &mut errors));
    let variant = s.choice(
        "variant",
        &[
            ("vasicek", Variant::Vasicek),
            ("cir", Variant::Cir),
            ("constant", Variant::Constant),
        ],
        Variant::Cir,
        &mut errors,
    );
    let model = ModelConfig {
        variant,
        speed: s.float("speed", Some(0.5), &mut errors),
        mean: s.float("mean", Some(0.04), &mut errors),
        vol: s.float("vol", Some(0.1), &mut errors),
        r0: s.float("r0", Some(0.04), &mut errors),
        theta: s.float("theta", Some(0.0), &mut errors),
    };
    s.finish(&mut errors);

    let mut s = Section::new("grid", table(&root, "grid", &mut errors));
    let grid = GridConfig {
        maturity: s.float("maturity", Some(1.0), &mut errors),
        steps: s.integer("steps", 256, &mut errors) as usize,
    };
    s.finish(&mut errors);

    let product = parse_product(&root, &mut errors);

    let mut s = Section::new("run", table(&root, "run", &mut errors));
    let tolerance = s
        .raw("tolerance")
        .map(|_| s.float("tolerance", None, &mut errors));
    let run = RunSection {
        paths: s.integer("paths", 1000, &mut errors) as usize,
        offset: s.integer("offset", 0, &mut errors) as usize,
        seed: s.integer("seed", 0, &mut errors),
        out: s.string("out", "out", &mut errors),
        antithetic: s.boolean("antithetic", false, &mut errors),
        measure: s.choice(
            "measure",
            &[("q", MeasureChoice::Q), ("p", MeasureChoice::P)],
            MeasureChoice::Q,
            &mut errors,
        ),
        levels: s.integer("levels", 3, &mut errors) as usize,
        tolerance,
    };
    s.finish(&mut errors);

    let Some(product) = product else {
        return Err(ConfigErrors(errors));
    };
    let config = RunConfig {
        model,
        grid,
        product,
        run,
    };
    if errors.is_empty() {
        semantic_checks(&config, &mut errors);
    }
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(ConfigErrors(errors))
    }
}

fn parse_product(root: &Table, errors: &mut Vec<ConfigError>) -> Option<Product> {
    let Some(products) = table(root, "product", errors) else {
        errors.push(ConfigError {
            path: "product".into(),
            message: format!("missing; give exactly one of {}", PRODUCTS.join(", ")),
        });
        return None;
    };
    for key in products.keys() {
        if !PRODUCTS.contains(&key.as_str()) {
            errors.push(ConfigError {
                path: format!("product.{key}"),
                message: format!("unknown product{}", suggestion(key, &PRODUCTS)),
            });
        }
    }
    let present: Vec<&str> = PRODUCTS
        .iter()
        .copied()
        .filter(|p| products.contains_key(*p))
        .collect();
    if present.len() != 1 {
        if present.len() > 1 {
            errors.push(ConfigError {
                path: "product".into(),
                message: format!(
                    "exactly one product section allowed, found {}",
                    present.join(", ")
                ),
            });
        } else if products.keys().all(|k| PRODUCTS.contains(&k.as_str())) {
            errors.push(ConfigError {
                path: "product".into(),
                message: format!("give exactly one of {}", PRODUCTS.join(", ")),
            });
        }
        return None;
    }
    let kind = present[0];
    let path = format!("product.{kind}");
    let mut s = Section::new(&path, table(products, kind, errors));
    let product = match kind {
        "ratchet-discrete" => {
            let gamma = s.float("gamma", None, errors);
            let g = s.float("g", Some(0.0), errors);
            let list = s.float_list("anniversaries", errors);
            let periods = s.raw("periods").is_some();
            let count = s.integer("periods", 4, errors) as usize;
            let maturity = match root.get("grid").and_then(|g| g.get("maturity")) {
                Some(Value::Float(x)) => *x,
                Some(Value::Integer(i)) => *i as f64,
                _ => 1.0,
            };
            let anniversaries = match list {
                Some(a) => {
                    if periods {
                        errors.push(ConfigError {
                            path: s.key("periods"),
                            message: "give either `anniversaries` or `periods`, not both".into(),
                        });
                    }
                    a
                }
                None if count == 0 => {
                    errors.push(ConfigError {
                        path: s.key("periods"),
                        message: "must be >= 1".into(),
                    });
                    Vec::new()
                }
                None => (0..=count)
                    .map(|k| {
                        if k == count {
                            maturity
                        } else {
                            maturity * k as f64 / count as f64
                        }
                    })
                    .collect(),
            };
            Product::RatchetDiscrete(DiscreteProduct {
                gamma,
                g,
                anniversaries,
                policy: s.choice(
                    "policy",
                    &[
                        ("bond", Policy::Bond),
                        ("payout", Policy::Payout),
                        ("fund", Policy::Fund),
                    ],
                    Policy::Bond,
                    errors,
                ),
                fund_weight: s.float("fund_weight", Some(0.5), errors),
                initial: s.float("initial", Some(1.0), errors),
            })
        }
        "ratchet-continuous" => Product::RatchetContinuous(ContinuousProduct {
            gamma: s.float("gamma", None, errors),
            g: s.float("g", Some(0.0), errors),
            u: s.float("u", Some(0.5), errors),
            fund_start: s.float("fund_start", Some(1.0), errors),
            initial: s.float("initial", Some(1.0), errors),
            vol_cap: s.float(
                "vol_cap",
                Some(tdbsde::continuous_ratchet::DEFAULT_VOL_CAP),
                errors,
            ),
        }),
        "asian" => Product::Asian(AsianProduct {
            beta: s.float("beta", None, errors),
            gamma: s.float("gamma", None, errors),
            weight: s.float("weight", Some(0.5), errors),
            variant: s.choice(
                "variant",
                &[
                    ("average", AsianVariant::Average),
                    ("bonus", AsianVariant::Bonus),
                ],
                AsianVariant::Average,
                errors,
            ),
            initial: s.float("initial", Some(1.0), errors),
        }),
        "withdrawal" => Product::Withdrawal(WithdrawalProduct {
            gamma: s.float("gamma", None, errors),
            consumption: s.float("consumption", Some(1.0), errors),
            horizon: s.float(
                "horizon",
                Some(tdbsde::market::DEFAULT_ANNUITY_HORIZON),
                errors,
            ),
            depth: s.integer("depth", 10, errors) as usize,
            max_iter: s.integer("max_iter", 50, errors) as usize,
            oracle_paths: s.integer("oracle_paths", 0, errors) as usize,
        }),
        _ => Product::Obpi(ObpiProduct {
            weight: s.float("weight", None, errors),
            capital: s.float("capital", Some(1.0), errors),
        }),
    };
    s.finish(errors);
    Some(product)
}

fn check<T>(errors: &mut Vec<ConfigError>, path: &str, r: tdbsde::Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(ConfigError {
                path: path.to_string(),
                message: e.to_string(),
            });
            None
        }
    }
}

fn semantic_checks(c: &RunConfig, errors: &mut Vec<ConfigError>) {
    check(errors, "model", c.model.build());
    let grid = check(errors, "grid", c.grid());
    if c.run.paths == 0 {
        errors.push(ConfigError {
            path: "run.paths".into(),
            message: "must be >= 1".into(),
        });
    }
    if c.run.seed > i64::MAX as u64 {
        errors.push(ConfigError {
            path: "run.seed".into(),
            message: format!("must be <= {}", i64::MAX),
        });
    }
    if c.run.antithetic && !c.run.offset.is_multiple_of(2) {
        errors.push(ConfigError {
            path: "run.offset".into(),
            message: "antithetic ensembles start on an even path".into(),
        });
    }
    if c.run.levels < 2 {
        errors.push(ConfigError {
            path: "run.levels".into(),
            message: "a convergence study needs at least 2 grids".into(),
        });
    }
    if let Some(t) = c.run.tolerance {
        if !(t > 0.0 && t.is_finite()) {
            errors.push(ConfigError {
                path: "run.tolerance".into(),
                message: "must be > 0".into(),
            });
        }
    }
    let path = format!("product.{}", c.product.kind());
    match &c.product {
        Product::RatchetDiscrete(p) => {
            if let Some(spec) = check(
                errors,
                &path,
                RatchetSpec::new(p.gamma, p.g, p.anniversaries.clone()),
            ) {
                if let Some(grid) = grid {
                    check(errors, &path, spec.indices(&grid));
                }
            }
            if p.policy == Policy::Fund {
                check(errors, &path, BenchmarkSpec::new(p.fund_weight));
            }
            positive(errors, &path, "initial", p.initial);
        }
        Product::RatchetContinuous(p) => {
            if let Some(spec) = check(
                errors,
                &path,
                DrawdownSpec::new(p.gamma, p.g, p.fund_start, p.u),
            ) {
                check(errors, &path, spec.with_vol_cap(p.vol_cap));
            }
            positive(errors, &path, "initial", p.initial);
        }
        Product::Asian(p) => {
            let variant = match p.variant {
                AsianVariant::Average => SmoothingVariant::Average,
                AsianVariant::Bonus => SmoothingVariant::Bonus,
            };
            if let Some(spec) = check(
                errors,
                &path,
                SmoothingSpec::new(p.beta, p.gamma, p.weight, variant),
            ) {
                let gap = spec.condition_gap();
                if variant == SmoothingVariant::Average && gap.abs() > tdbsde::asian::CONDITION_TOL
                {
                    errors.push(ConfigError {
                        path: path.clone(),
                        message: format!(
                            "condition βE[S̃]+γ=1 violated: beta + gamma - 1 = {gap:e}; only the zero solution exists"
                        ),
                    });
                }
                if variant == SmoothingVariant::Bonus && p.gamma >= 1.0 {
                    errors.push(ConfigError {
                        path: format!("{path}.gamma"),
                        message:
                            "bonus variant needs gamma < 1, otherwise there exists no solution"
                                .into(),
                    });
                }
            }
            positive(errors, &path, "initial", p.initial);
        }
        Product::Withdrawal(p) => {
            check(
                errors,
                &path,
                WithdrawalSpec::new(p.gamma, p.consumption, p.horizon, c.grid.maturity),
            );
            if p.depth == 0 || p.depth > DEFAULT_DEPTH_CAP {
                errors.push(ConfigError {
                    path: format!("{path}.depth"),
                    message: format!("must lie in [1, {DEFAULT_DEPTH_CAP}]"),
                });
            }
            if p.max_iter == 0 {
                errors.push(ConfigError {
                    path: format!("{path}.max_iter"),
                    message: "must be >= 1".into(),
                });
            }
        }
        Product::Obpi(p) => {
            check(errors, &path, BenchmarkSpec::new(p.weight));
            positive(errors, &path, "capital", p.capital);
        }
    }
}

fn positive(errors: &mut Vec<ConfigError>, path: &str, key: &str, x: f64) {
    if !(x > 0.0 && x.is_finite()) {
        errors.push(ConfigError {
            path: format!("{path}.{key}"),
            message: format!("must be > 0, got {x}"),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[product.asian]\nbeta = 0.6\ngamma = 0.4\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.model.variant, Variant::Cir);
        assert_eq!(
            (c.model.speed, c.model.mean, c.model.vol, c.model.r0),
            (0.5, 0.04, 0.1, 0.04)
        );
        assert_eq!(c.grid.steps, 256);
        assert_eq!(c.run.paths, 1000);
        assert!(matches!(c.product, Product::Asian(ref a) if a.weight == 0.5));
    }

    #[test]
    fn broken_average_condition_is_named() {
        let err = parse_config("[product.asian]\nbeta = 0.6\ngamma = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("βE[S̃]+γ=1"), "{err}");
    }

    #[test]
    fn typo_gets_a_suggestion() {
        let err = parse_config("[product.asian]\nbeta = 0.6\ngama = 0.4\n").unwrap_err();
        let text = err.to_string();
        assert!(
            text.contains("product.asian.gama: unknown key (did you mean `gamma`?)"),
            "{text}"
        );
        assert!(
            text.contains("product.asian.gamma: missing required key"),
            "{text}"
        );
    }

    #[test]
    fn all_errors_are_reported() {
        let text = "[model]\nvariant = \"cri\"\nvol = \"high\"\n[grid]\nstep = 10\n[product.obpi]\nweight = 0.5\n[run]\npaths = -1\n";
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.0.len(), 4, "{err}");
        assert!(err.to_string().contains("did you mean `cir`"));
        assert!(err.to_string().contains("did you mean `steps`"));
    }

    #[test]
    fn exactly_one_product() {
        let two = "[product.obpi]\nweight = 0.5\n[product.asian]\nbeta = 0.6\ngamma = 0.4\n";
        assert!(parse_config(two)
            .unwrap_err()
            .to_string()
            .contains("exactly one"));
        assert!(parse_config("[run]\npaths = 3\n").is_err());
    }

    #[test]
    fn canonical_form_round_trips() {
        for text in [
            MINIMAL,
            "[product.ratchet-discrete]\ngamma = 1.0\nperiods = 4\n[run]\ntolerance = 1e-12\n",
            "[model]\nvariant = \"vasicek\"\n[product.withdrawal]\ngamma = 0.05\n",
            "[product.ratchet-continuous]\ngamma = 1.0\n",
            "[product.obpi]\nweight = 0.6\n",
        ] {
            let c = parse_config(text).unwrap();
            let canon = c.to_toml();
            let again = parse_config(&canon).unwrap();
            assert_eq!(again, c);
            assert_eq!(again.to_toml(), canon);
        }
    }

    #[test]
    fn loosened_tolerance_is_flagged() {
        let c = parse_config("[product.asian]\nbeta = 0.6\ngamma = 0.4\n[run]\ntolerance = 0.1\n")
            .unwrap();
        assert_eq!(c.tolerance(), (0.1, true));
        let c = parse_config("[product.asian]\nbeta = 0.6\ngamma = 0.4\n[run]\ntolerance = 1e-4\n")
            .unwrap();
        assert_eq!(c.tolerance(), (1e-4, false));
    }
}
