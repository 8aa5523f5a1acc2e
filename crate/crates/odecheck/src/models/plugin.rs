//! User-defined ODE posteriors loaded from a declarative model file.
//!
//! A plugin file is the same flat `key = value` format used for run configs.
//! It declares the state dimension, parameter names, the RHS and initial
//! state as arithmetic expressions, per-parameter priors, and the
//! observation model. Parameters are positive and log-transformed, like the
//! bundled models. Example:
//!
//! ```text
//! name = predator-prey
//! ode_dim = 2
//! params = a, b, c, d, y0_hare, y0_lynx
//! rhs_1 = a*y1 - b*y1*y2
//! rhs_2 = c*y1*y2 - d*y2
//! init_1 = y0_hare
//! init_2 = y0_lynx
//! likelihood = lognormal
//! observe_hare = 1
//! observe_lynx = 2
//! prior_a = normal(1, 0.5)
//! prior_b = normal(0.05, 0.05)
//! prior_c = normal(0.05, 0.05)
//! prior_d = normal(1, 0.5)
//! prior_y0_hare = lognormal(2.3, 1)
//! prior_y0_lynx = lognormal(2.3, 1)
//! prior_sigma = lognormal(-1, 1)
//! ```
//!
//! Expressions support `+ - * / ^` (integer powers), unary minus,
//! parentheses, `exp(..)` and `log(..)`, the state variables `y1..yD`, the
//! time variable `t`, declared parameter names, and numeric literals.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Dataset, ModelError, PosteriorModel};
use crate::ode::{solve, Ivp, OdeError, OdeRhs, Solution, SolverSpec};
use crate::scalar::{lognormal_lpdf, normal_lpdf, Scalar};

// --- expressions -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Param(usize),
    State(usize),
    Time,
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, i32),
    Exp(Box<Expr>),
    Log(Box<Expr>),
}

impl Expr {
    pub fn eval<S: Scalar>(&self, t: f64, y: &[S], params: &[S]) -> S {
        match self {
            Expr::Const(c) => S::constant(*c),
            Expr::Param(i) => params[*i],
            Expr::State(i) => y[*i],
            Expr::Time => S::constant(t),
            Expr::Add(a, b) => a.eval(t, y, params) + b.eval(t, y, params),
            Expr::Sub(a, b) => a.eval(t, y, params) - b.eval(t, y, params),
            Expr::Mul(a, b) => a.eval(t, y, params) * b.eval(t, y, params),
            Expr::Div(a, b) => a.eval(t, y, params) / b.eval(t, y, params),
            Expr::Neg(a) => -a.eval(t, y, params),
            Expr::Pow(a, n) => {
                let base = a.eval(t, y, params);
                let mut acc = S::constant(1.0);
                for _ in 0..n.unsigned_abs() {
                    acc = acc * base;
                }
                if *n < 0 {
                    S::constant(1.0) / acc
                } else {
                    acc
                }
            }
            Expr::Exp(a) => a.eval(t, y, params).exp(),
            Expr::Log(a) => a.eval(t, y, params).ln(),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src, pos: 0 }
    }

    fn next_tok(&mut self) -> Result<Tok, ModelError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= bytes.len() {
            return Ok(Tok::End);
        }
        let c = bytes[self.pos];
        let simple = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(t) = simple {
            self.pos += 1;
            return Ok(t);
        }
        if c.is_ascii_digit() || c == b'.' {
            let start = self.pos;
            while self.pos < bytes.len()
                && (bytes[self.pos].is_ascii_digit()
                    || bytes[self.pos] == b'.'
                    || bytes[self.pos] == b'e'
                    || bytes[self.pos] == b'E'
                    || ((bytes[self.pos] == b'+' || bytes[self.pos] == b'-')
                        && matches!(bytes[self.pos - 1], b'e' | b'E')))
            {
                self.pos += 1;
            }
            let text = &self.src[start..self.pos];
            let v: f64 = text
                .parse()
                .map_err(|_| ModelError::Domain(format!("bad number `{text}`")))?;
            return Ok(Tok::Num(v));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while self.pos < bytes.len()
                && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_')
            {
                self.pos += 1;
            }
            return Ok(Tok::Ident(self.src[start..self.pos].to_string()));
        }
        Err(ModelError::Domain(format!(
            "unexpected character `{}` in expression",
            c as char
        )))
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    look: Tok,
    params: &'a [String],
    ode_dim: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, params: &'a [String], ode_dim: usize) -> Result<Self, ModelError> {
        let mut lexer = Lexer::new(src);
        let look = lexer.next_tok()?;
        Ok(Parser {
            lexer,
            look,
            params,
            ode_dim,
        })
    }

    fn bump(&mut self) -> Result<Tok, ModelError> {
        let t = std::mem::replace(&mut self.look, self.lexer.next_tok()?);
        Ok(t)
    }

    fn expr(&mut self) -> Result<Expr, ModelError> {
        let mut lhs = self.term()?;
        loop {
            match self.look {
                Tok::Plus => {
                    self.bump()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ModelError> {
        let mut lhs = self.factor()?;
        loop {
            match self.look {
                Tok::Star => {
                    self.bump()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Tok::Slash => {
                    self.bump()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ModelError> {
        if self.look == Tok::Minus {
            self.bump()?;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        let base = self.atom()?;
        if self.look == Tok::Caret {
            self.bump()?;
            let neg = if self.look == Tok::Minus {
                self.bump()?;
                true
            } else {
                false
            };
            match self.bump()? {
                Tok::Num(n) if n.fract() == 0.0 => {
                    let mut n = n as i32;
                    if neg {
                        n = -n;
                    }
                    return Ok(Expr::Pow(Box::new(base), n));
                }
                other => {
                    return Err(ModelError::Domain(format!(
                        "exponent must be an integer literal, got {other:?}"
                    )))
                }
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ModelError> {
        match self.bump()? {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                if self.bump()? != Tok::RParen {
                    return Err(ModelError::Domain("expected `)`".into()));
                }
                Ok(e)
            }
            Tok::Ident(name) => {
                if self.look == Tok::LParen {
                    self.bump()?;
                    let arg = self.expr()?;
                    if self.bump()? != Tok::RParen {
                        return Err(ModelError::Domain("expected `)`".into()));
                    }
                    return match name.as_str() {
                        "exp" => Ok(Expr::Exp(Box::new(arg))),
                        "log" => Ok(Expr::Log(Box::new(arg))),
                        other => Err(ModelError::Domain(format!("unknown function `{other}`"))),
                    };
                }
                if name == "t" {
                    return Ok(Expr::Time);
                }
                if let Some(rest) = name.strip_prefix('y') {
                    if let Ok(idx) = rest.parse::<usize>() {
                        if idx >= 1 && idx <= self.ode_dim && !self.params.contains(&name) {
                            return Ok(Expr::State(idx - 1));
                        }
                    }
                }
                if let Some(i) = self.params.iter().position(|p| p == &name) {
                    return Ok(Expr::Param(i));
                }
                Err(ModelError::Domain(format!("unknown identifier `{name}`")))
            }
            other => Err(ModelError::Domain(format!("unexpected token {other:?}"))),
        }
    }
}

/// Parse an expression over the given parameter names and `y1..yD`, `t`.
pub fn parse_expr(src: &str, params: &[String], ode_dim: usize) -> Result<Expr, ModelError> {
    let mut p = Parser::new(src, params, ode_dim)?;
    let e = p.expr()?;
    if p.look != Tok::End {
        return Err(ModelError::Domain(format!("trailing input in `{src}`")));
    }
    Ok(e)
}

// --- priors ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    /// Positive-truncated normal, truncation normalizer dropped.
    Normal { mu: f64, sd: f64 },
    LogNormal { mu: f64, sd: f64 },
}

impl Prior {
    fn parse(src: &str) -> Result<Prior, ModelError> {
        let src = src.trim();
        let (family, rest) = src
            .split_once('(')
            .ok_or_else(|| ModelError::Domain(format!("bad prior `{src}`")))?;
        let args = rest
            .strip_suffix(')')
            .ok_or_else(|| ModelError::Domain(format!("bad prior `{src}`")))?;
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(ModelError::Domain(format!("prior `{src}` needs two arguments")));
        }
        let mu: f64 = parts[0]
            .parse()
            .map_err(|_| ModelError::Domain(format!("bad prior argument `{}`", parts[0])))?;
        let sd: f64 = parts[1]
            .parse()
            .map_err(|_| ModelError::Domain(format!("bad prior argument `{}`", parts[1])))?;
        if !(sd > 0.0) {
            return Err(ModelError::Domain("prior sd must be positive".into()));
        }
        match family.trim() {
            "normal" => Ok(Prior::Normal { mu, sd }),
            "lognormal" => Ok(Prior::LogNormal { mu, sd }),
            other => Err(ModelError::Domain(format!("unknown prior family `{other}`"))),
        }
    }

    fn lpdf<S: Scalar>(&self, x: S) -> S {
        match *self {
            Prior::Normal { mu, sd } => normal_lpdf(x, S::constant(mu), S::constant(sd)),
            Prior::LogNormal { mu, sd } => lognormal_lpdf(x, S::constant(mu), S::constant(sd)),
        }
    }

    fn default_init(&self) -> f64 {
        match *self {
            Prior::Normal { mu, .. } => {
                if mu > 0.0 {
                    mu
                } else {
                    1.0
                }
            }
            Prior::LogNormal { mu, .. } => mu.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LikelihoodFamily {
    /// Normal(x | y, sigma^2)
    Normal,
    /// LogNormal(x | log y, sigma^2); requires positive solution values
    LogNormal,
}

// --- the model -------------------------------------------------------------

struct PluginRhs {
    dim: usize,
    exprs: Vec<Expr>,
}

impl OdeRhs for PluginRhs {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval<S: Scalar>(&self, t: f64, y: &[S], psi: &[S], dy: &mut [S]) {
        for (d, e) in self.exprs.iter().enumerate() {
            dy[d] = e.eval(t, y, psi);
        }
    }
}

pub struct PluginModel {
    name: String,
    rhs: PluginRhs,
    init_exprs: Vec<Expr>,
    /// Names of the non-sigma parameters; sigma is appended last.
    param_names: Vec<String>,
    priors: Vec<Prior>,
    init_theta: Vec<f64>,
    likelihood: LikelihoodFamily,
    /// (dataset column, state index) pairs.
    observed: Vec<(usize, usize)>,
    dataset: Dataset,
    ivp: Ivp,
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ModelError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Domain(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = k.trim().to_string();
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ModelError::Domain(format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}

impl PluginModel {
    pub fn from_file(path: &Path, dataset: Dataset) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Domain(format!("{}: {e}", path.display())))?;
        PluginModel::from_str_and_data(&text, dataset)
    }

    pub fn from_str_and_data(text: &str, dataset: Dataset) -> Result<Self, ModelError> {
        let mut kv = parse_kv(text)?;
        fn take(kv: &mut BTreeMap<String, String>, key: &str) -> Result<String, ModelError> {
            kv.remove(key)
                .ok_or_else(|| ModelError::Domain(format!("missing key `{key}`")))
        }

        let name = take(&mut kv, "name")?;
        let ode_dim: usize = take(&mut kv, "ode_dim")?
            .parse()
            .map_err(|_| ModelError::Domain("bad ode_dim".into()))?;
        if ode_dim == 0 {
            return Err(ModelError::Domain("ode_dim must be >= 1".into()));
        }
        let mut param_names: Vec<String> = take(&mut kv, "params")?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if param_names.is_empty() {
            return Err(ModelError::Domain("params must be non-empty".into()));
        }
        if param_names.iter().any(|p| p == "sigma") {
            return Err(ModelError::Domain("`sigma` is implicit, do not declare it".into()));
        }

        let mut rhs_exprs = Vec::with_capacity(ode_dim);
        let mut init_exprs = Vec::with_capacity(ode_dim);
        for d in 1..=ode_dim {
            rhs_exprs.push(parse_expr(&take(&mut kv, &format!("rhs_{d}"))?, &param_names, ode_dim)?);
            // initial states may reference parameters but not y or t
            let e = parse_expr(&take(&mut kv, &format!("init_{d}"))?, &param_names, 0)?;
            init_exprs.push(e);
        }

        let likelihood = match take(&mut kv, "likelihood")?.as_str() {
            "normal" => LikelihoodFamily::Normal,
            "lognormal" => LikelihoodFamily::LogNormal,
            other => {
                return Err(ModelError::Domain(format!(
                    "unknown likelihood family `{other}`"
                )))
            }
        };

        let mut priors = Vec::with_capacity(param_names.len() + 1);
        let mut init_theta = Vec::with_capacity(param_names.len() + 1);
        for p in &param_names {
            let prior = Prior::parse(&take(&mut kv, &format!("prior_{p}"))?)?;
            let init = match kv.remove(&format!("init_{p}")) {
                Some(v) => v
                    .parse()
                    .map_err(|_| ModelError::Domain(format!("bad init for `{p}`")))?,
                None => prior.default_init(),
            };
            if !(init > 0.0) {
                return Err(ModelError::Domain(format!("init for `{p}` must be positive")));
            }
            priors.push(prior);
            init_theta.push(init);
        }
        let sigma_prior = Prior::parse(&take(&mut kv, "prior_sigma")?)?;
        let sigma_init = match kv.remove("init_sigma") {
            Some(v) => v
                .parse()
                .map_err(|_| ModelError::Domain("bad init_sigma".into()))?,
            None => sigma_prior.default_init(),
        };
        priors.push(sigma_prior);
        init_theta.push(sigma_init);
        param_names.push("sigma".into());

        let mut observed = Vec::new();
        let observe_keys: Vec<String> = kv
            .keys()
            .filter(|k| k.starts_with("observe_"))
            .cloned()
            .collect();
        for key in observe_keys {
            let col_name = key.strip_prefix("observe_").unwrap().to_string();
            let state: usize = kv
                .remove(&key)
                .unwrap()
                .parse()
                .map_err(|_| ModelError::Domain(format!("bad state index in `{key}`")))?;
            if state < 1 || state > ode_dim {
                return Err(ModelError::Domain(format!("state index out of range in `{key}`")));
            }
            let col = dataset
                .column_index(&col_name)
                .ok_or_else(|| ModelError::Dataset(format!("dataset has no column `{col_name}`")))?;
            observed.push((col, state - 1));
        }
        if observed.is_empty() {
            return Err(ModelError::Domain("at least one observe_<column> key required".into()));
        }
        observed.sort_unstable();

        if let Some(key) = kv.keys().next() {
            return Err(ModelError::Domain(format!("unknown key `{key}`")));
        }

        let t0 = dataset.times[0];
        let ivp =
            Ivp::new(t0, dataset.times.clone()).map_err(|e| ModelError::Dataset(e.to_string()))?;

        Ok(PluginModel {
            name,
            rhs: PluginRhs {
                dim: ode_dim,
                exprs: rhs_exprs,
            },
            init_exprs,
            param_names,
            priors,
            init_theta,
            likelihood,
            observed,
            dataset,
            ivp,
        })
    }
}

impl PosteriorModel for PluginModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.param_names.len()
    }

    fn ode_dim(&self) -> usize {
        self.rhs.dim
    }

    fn param_names(&self) -> Vec<String> {
        self.param_names.clone()
    }

    fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    fn ivp(&self) -> &Ivp {
        &self.ivp
    }

    fn init_eta(&self) -> Vec<f64> {
        self.unconstrain(&self.init_theta)
    }

    fn log_prior<S: Scalar>(&self, theta: &[S]) -> Result<S, ModelError> {
        if theta.iter().any(|t| !(t.value() > 0.0)) {
            return Err(ModelError::Domain("plugin parameters must be positive".into()));
        }
        let mut lp = S::zero();
        for (prior, &x) in self.priors.iter().zip(theta.iter()) {
            lp += prior.lpdf(x);
        }
        Ok(lp)
    }

    fn log_likelihood<S: Scalar>(&self, theta: &[S], sol: &Solution<S>) -> Option<S> {
        let sigma = theta[self.param_names.len() - 1];
        let mut lp = S::zero();
        for n in 0..self.dataset.n_rows() {
            let row = sol.row(n);
            for &(col, state) in &self.observed {
                let x = self.dataset.get(n, col);
                let y = row[state];
                match self.likelihood {
                    LikelihoodFamily::Normal => {
                        lp += normal_lpdf(S::constant(x), y, sigma);
                    }
                    LikelihoodFamily::LogNormal => {
                        if !(y.value() > 0.0) || !(x > 0.0) {
                            return None;
                        }
                        lp += lognormal_lpdf(S::constant(x), y.ln(), sigma);
                    }
                }
            }
        }
        Some(lp)
    }

    fn solve_ode<S: Scalar>(&self, theta: &[S], spec: &SolverSpec) -> Result<Solution<S>, OdeError> {
        let psi = &theta[..self.param_names.len() - 1];
        let y0: Vec<S> = self
            .init_exprs
            .iter()
            .map(|e| e.eval(self.ivp.t0, &[], psi))
            .collect();
        solve(&self.rhs, &self.ivp, &y0, psi, spec)
    }
}
