//! Experiment configuration: one TOML file per experiment.
//!
//! Per-node quantities are given as a number, an expression over `x`, or a CSV
//! column keyed by node index (`node,<column>`). Relative paths resolve against
//! the directory holding the config file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use evalexpr::{ContextWithMutableFunctions, ContextWithMutableVariables, Function, HashMapContext, Node, Value};
use nalgebra::DVector;
use nonlocal_core::evolve::{IntegratorConfig, Scheme};
use nonlocal_core::reaction::{LogisticReaction, Reaction};
use nonlocal_core::spectral::Method;
use nonlocal_core::{Kernel, KernelLaw, MeasureSpace, NonlocalOperator, QuadratureRule};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub space: SpaceSpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub reaction: ReactionSpec,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub spectrum: SpectrumSpec,
    #[serde(default)]
    pub equilibria: EquilibriaSpec,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    #[default]
    Midpoint,
    Trapezoid,
}

impl From<Rule> for QuadratureRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Midpoint => QuadratureRule::Midpoint,
            Rule::Trapezoid => QuadratureRule::Trapezoid,
        }
    }
}

fn zero() -> f64 {
    0.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSpec {
    #[serde(default = "zero")]
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    pub n: usize,
    #[serde(default)]
    pub rule: Rule,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceSpec {
    Interval {
        #[serde(default = "zero")]
        a: f64,
        #[serde(default = "one")]
        b: f64,
        n: usize,
        #[serde(default)]
        rule: Rule,
    },
    Graph {
        vertices: usize,
        #[serde(default)]
        edges: Vec<(usize, usize, f64)>,
        measures: Vec<f64>,
    },
    Union {
        parts: Vec<IntervalSpec>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Constant {
        #[serde(default = "one")]
        c: f64,
    },
    Tophat {
        radius: f64,
        #[serde(default = "one")]
        height: f64,
    },
    Gaussian {
        sigma: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Table {
        values: Vec<Vec<f64>>,
    },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Constant { c: 1.0 }
    }
}

/// A per-node quantity.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeField {
    Value(f64),
    Expression(String),
    Csv { csv: PathBuf, column: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `h = h0 + offset`
    H0 {
        #[serde(default)]
        offset: f64,
    },
    Constant {
        value: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "value_column")]
        column: String,
    },
    Expression {
        expr: String,
    },
}

fn value_column() -> String {
    "value".into()
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec::H0 { offset: 0.0 }
    }
}

fn zero_field() -> NodeField {
    NodeField::Value(0.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum ReactionSpec {
    #[default]
    Zero,
    Affine {
        #[serde(default = "zero_field")]
        offset: NodeField,
        slope: NodeField,
    },
    /// `g + n s - m |s|^{rho-1} s`
    Logistic {
        #[serde(default = "zero_field")]
        g: NodeField,
        n: NodeField,
        m: NodeField,
        rho: f64,
    },
    Polynomial {
        coeffs: Vec<f64>,
        #[serde(default)]
        source: Option<NodeField>,
    },
    /// `lambda s (1 - s²)`
    Cubic {
        lambda: f64,
        #[serde(default)]
        source: Option<NodeField>,
    },
    /// `a tanh(s)`
    Sigmoid {
        a: f64,
        #[serde(default)]
        source: Option<NodeField>,
    },
}


fn default_dt() -> f64 {
    0.01
}

fn default_threshold() -> f64 {
    1e9
}

fn default_record() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "one")]
    pub t_end: f64,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_record")]
    pub record_every: usize,
    #[serde(default = "default_threshold")]
    pub blowup_threshold: f64,
}

fn default_scheme() -> String {
    "euler_op".into()
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            scheme: default_scheme(),
            dt: default_dt(),
            t_end: 1.0,
            beta: None,
            record_every: 1,
            blowup_threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant {
        value: f64,
    },
    Expression {
        expr: String,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "value_column")]
        column: String,
    },
    /// Uniform on `[-amplitude, amplitude]` (or `[0, amplitude]`), drawn from the seed.
    Random {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        nonnegative: bool,
    },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Constant { value: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSpec {
    #[serde(default = "default_method")]
    pub method: String,
}

fn default_method() -> String {
    "auto".into()
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        Self { method: default_method() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriaSpec {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for EquilibriaSpec {
    fn default() -> Self {
        Self { tol: default_tol(), epsilon: None }
    }
}

/// Everything a subcommand needs, built and validated from a config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub space: Arc<MeasureSpace>,
    pub op: NonlocalOperator,
    pub reaction: Reaction,
    pub integrator: IntegratorConfig,
    pub initial: DVector<f64>,
    pub method: Method,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn build(self, base: &Path) -> Result<Experiment, CliError> {
        let space = Arc::new(build_space(&self.space)?);
        let kernel = build_kernel(space.clone(), &self.kernel)?;
        let n = space.len();
        let fields = FieldContext { space: &space, base };
        let h = match &self.potential {
            PotentialSpec::H0 { offset } => kernel.h0().add_scalar(*offset),
            PotentialSpec::Constant { value } => DVector::from_element(n, *value),
            PotentialSpec::Csv { path, column } => fields.csv(path, column, "potential")?,
            PotentialSpec::Expression { expr } => fields.expression(expr, "potential.expr")?,
        };
        let op = NonlocalOperator::new(kernel, h).map_err(|e| located("potential", e))?;
        let reaction = build_reaction(&self.reaction, &fields)?;
        let integ = &self.integrator;
        let scheme: Scheme = integ.scheme.parse().map_err(|e| located("integrator.scheme", e))?;
        let mut integrator = IntegratorConfig::new(scheme, integ.dt, integ.t_end)
            .map_err(|e| located("integrator", e))?
            .with_record_every(integ.record_every);
        integrator.blowup_threshold = integ.blowup_threshold;
        if let Some(b) = integ.beta {
            integrator = integrator.with_beta(b);
        }
        integrator.validate().map_err(|e| located("integrator", e))?;
        let initial = match &self.initial {
            InitialSpec::Constant { value } => DVector::from_element(n, *value),
            InitialSpec::Expression { expr } => fields.expression(expr, "initial.expr")?,
            InitialSpec::Csv { path, column } => fields.csv(path, column, "initial")?,
            InitialSpec::Random { amplitude, nonnegative } => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
                let lo = if *nonnegative { 0.0 } else { -amplitude };
                DVector::from_fn(n, |_, _| rng.gen_range(lo..=*amplitude))
            }
        };
        let method: Method = self.spectrum.method.parse().map_err(|e| located("spectrum.method", e))?;
        if self.equilibria.tol.is_nan() || self.equilibria.tol <= 0.0 {
            return Err(CliError::Config("equilibria.tol: must be positive".into()));
        }
        Ok(Experiment { config: self, space, op, reaction, integrator, initial, method })
    }
}

fn located(field: &str, e: nonlocal_core::Error) -> CliError {
    CliError::Config(format!("{field}: {e}"))
}

pub fn build_space(spec: &SpaceSpec) -> Result<MeasureSpace, CliError> {
    match spec {
        SpaceSpec::Interval { a, b, n, rule } => {
            MeasureSpace::interval(*a, *b, *n, (*rule).into()).map_err(|e| located("space", e))
        }
        SpaceSpec::Graph { vertices, edges, measures } => {
            MeasureSpace::graph(*vertices, edges, measures.clone()).map_err(|e| located("space", e))
        }
        SpaceSpec::Union { parts } => {
            let mut iter = parts.iter().enumerate();
            let (_, first) = iter.next().ok_or_else(|| CliError::Config("space.parts: empty union".into()))?;
            let build = |i: usize, p: &IntervalSpec| {
                MeasureSpace::interval(p.a, p.b, p.n, p.rule.into()).map_err(|e| located(&format!("space.parts[{i}]"), e))
            };
            let mut acc = build(0, first)?;
            for (i, p) in iter {
                acc = acc.union(&build(i, p)?).map_err(|e| located("space.parts", e))?;
            }
            Ok(acc)
        }
    }
}

pub fn build_kernel(space: Arc<MeasureSpace>, spec: &KernelSpec) -> Result<Kernel, CliError> {
    let law = match spec {
        KernelSpec::Constant { c } => KernelLaw::Constant { c: *c },
        KernelSpec::Tophat { radius, height } => KernelLaw::Tophat { radius: *radius, height: *height },
        KernelSpec::Gaussian { sigma, scale } => KernelLaw::Gaussian { sigma: *sigma, scale: *scale },
        KernelSpec::Table { values } => {
            let n = space.len();
            if values.len() != n || values.iter().any(|r| r.len() != n) {
                return Err(CliError::Config(format!("kernel.values: table must be {n}x{n}")));
            }
            KernelLaw::Table { values: values.concat() }
        }
    };
    Kernel::assemble(space, &law).map_err(|e| located("kernel", e))
}

fn build_reaction(spec: &ReactionSpec, fields: &FieldContext) -> Result<Reaction, CliError> {
    let with_source = |f: Reaction, source: &Option<NodeField>, at: &str| -> Result<Reaction, CliError> {
        match source {
            Some(s) => f.with_source(fields.field(s, at)?).map_err(|e| located(at, e)),
            None => Ok(f),
        }
    };
    match spec {
        ReactionSpec::Zero => Ok(Reaction::zero()),
        ReactionSpec::Affine { offset, slope } => Reaction::affine(
            fields.field(offset, "reaction.offset")?,
            fields.field(slope, "reaction.slope")?,
        )
        .map_err(|e| located("reaction", e)),
        ReactionSpec::Logistic { g, n, m, rho } => {
            let l = LogisticReaction::new(
                fields.field(g, "reaction.g")?,
                fields.field(n, "reaction.n")?,
                fields.field(m, "reaction.m")?,
                *rho,
            )
            .map_err(|e| located("reaction", e))?;
            Ok(Reaction::logistic(l))
        }
        ReactionSpec::Polynomial { coeffs, source } => {
            with_source(Reaction::polynomial(coeffs.clone()), source, "reaction.source")
        }
        ReactionSpec::Cubic { lambda, source } => with_source(
            nonlocal_core::equilibria::bistable_cubic(*lambda),
            source,
            "reaction.source",
        ),
        ReactionSpec::Sigmoid { a, source } => {
            let a = *a;
            let f = Reaction::custom(
                "sigmoid",
                Arc::new(move |_, s: f64| a * s.tanh()),
                Some(Arc::new(move |_, s: f64| a / s.cosh().powi(2))),
                Some(a.abs()),
            );
            with_source(f, source, "reaction.source")
        }
    }
}

struct FieldContext<'a> {
    space: &'a MeasureSpace,
    base: &'a Path,
}

impl FieldContext<'_> {
    fn field(&self, f: &NodeField, at: &str) -> Result<DVector<f64>, CliError> {
        match f {
            NodeField::Value(v) => Ok(DVector::from_element(self.space.len(), *v)),
            NodeField::Expression(e) => self.expression(e, at),
            NodeField::Csv { csv, column } => self.csv(csv, column, at),
        }
    }

    fn expression(&self, expr: &str, at: &str) -> Result<DVector<f64>, CliError> {
        let values = eval_over_nodes(expr, self.space).map_err(|e| CliError::Config(format!("{at}: {e}")))?;
        Ok(DVector::from_vec(values))
    }

    fn csv(&self, path: &Path, column: &str, at: &str) -> Result<DVector<f64>, CliError> {
        let full = if path.is_absolute() { path.to_path_buf() } else { self.base.join(path) };
        let values = read_node_column(&full, column, self.space.len())
            .map_err(|e| CliError::Config(format!("{at}: {}: {e}", full.display())))?;
        Ok(DVector::from_vec(values))
    }
}

/// Evaluate `expr` at every node position `x`. Integer literals are read as
/// floats so `1/2` means one half.
pub fn eval_over_nodes(expr: &str, space: &MeasureSpace) -> Result<Vec<f64>, String> {
    let tree: Node = evalexpr::build_operator_tree(&float_literals(expr)).map_err(|e| e.to_string())?;
    let mut ctx = math_context();
    (0..space.len())
        .map(|i| {
            ctx.set_value("x".into(), Value::Float(space.position(i))).map_err(|e| e.to_string())?;
            let v = tree.eval_number_with_context(&ctx).map_err(|e| format!("at node {i}: {e}"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("non-finite value {v} at node {i}"))
            }
        })
        .collect()
}

type UnaryFn = fn(f64) -> f64;

fn math_context() -> HashMapContext {
    let mut ctx = HashMapContext::new();
    let unary: [(&str, UnaryFn); 11] = [
        ("sin", f64::sin),
        ("cos", f64::cos),
        ("tan", f64::tan),
        ("exp", f64::exp),
        ("ln", f64::ln),
        ("sqrt", f64::sqrt),
        ("abs", f64::abs),
        ("tanh", f64::tanh),
        ("sinh", f64::sinh),
        ("cosh", f64::cosh),
        ("sign", f64::signum),
    ];
    for (name, f) in unary {
        let fun = Function::new(move |arg: &Value| Ok(Value::Float(f(arg.as_number()?))));
        ctx.set_function(name.into(), fun).expect("fresh context accepts functions");
    }
    ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI)).expect("fresh context accepts values");
    ctx
}

fn float_literals(expr: &str) -> String {
    let chars: Vec<char> = expr.chars().collect();
    let mut out = String::with_capacity(expr.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let prev = if i == 0 { ' ' } else { chars[i - 1] };
        if c.is_ascii_digit() && !(prev.is_alphanumeric() || prev == '_' || prev == '.') {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            out.extend(&chars[start..i]);
            let next = chars.get(i).copied().unwrap_or(' ');
            if !(next == '.' || next == 'e' || next == 'E' || next.is_alphanumeric() || next == '_') {
                out.push_str(".0");
            }
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

/// Read `column` of a CSV keyed by a `node` column; every node must appear once.
pub fn read_node_column(path: &Path, column: &str, n: usize) -> Result<Vec<f64>, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let node_idx = headers.iter().position(|h| h.trim() == "node").ok_or("missing `node` column")?;
    let col_idx = headers.iter().position(|h| h.trim() == column).ok_or(format!("missing `{column}` column"))?;
    let mut seen: HashMap<usize, f64> = HashMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let row = line + 2;
        let node: usize = rec[node_idx].trim().parse().map_err(|_| format!("line {row}: bad node index"))?;
        let value: f64 = rec[col_idx].trim().parse().map_err(|_| format!("line {row}: bad value `{}`", &rec[col_idx]))?;
        if node >= n {
            return Err(format!("line {row}: node {node} out of range (n = {n})"));
        }
        if seen.insert(node, value).is_some() {
            return Err(format!("line {row}: node {node} given twice"));
        }
    }
    (0..n).map(|i| seen.get(&i).copied().ok_or(format!("node {i} missing"))).collect()
}
