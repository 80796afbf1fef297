//! Model-specification language and its validated representation.
//!
//! A model is a set of latent variables, each measured by one or more items,
//! whose mean (identity link) and standard deviation (log link) may depend on
//! other latents through additive predictors.
//!
//! ```text
//! latent zeta1;
//! latent zeta2;
//! zeta1 =~ y11 + y12 + y13;
//! zeta2 =~ y21 + y22 + y23;
//! mu(zeta2) ~ zeta1;
//! logsd(zeta2) ~ 1 + zeta1;
//! prior loading = normal(1, 0.3);
//! ```

mod parser;
mod print;
mod validate;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dist::PriorDef;
use crate::error::{Error, Result};

pub use parser::parse_model;
pub use validate::{validate, IdentificationSource, LatentReport, ValidationReport};

/// Distributional parameter a predictor acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistParam {
    Mu,
    LogSd,
}

impl DistParam {
    pub fn keyword(self) -> &'static str {
        match self {
            DistParam::Mu => "mu",
            DistParam::LogSd => "logsd",
        }
    }
}

/// Transformation `f` of latent values multiplied by one coefficient.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Intercept,
    Identity(String),
    Product(String, String),
    Square(String),
}

impl Transform {
    /// Latents the transformation reads.
    pub fn arguments(&self) -> Vec<&str> {
        match self {
            Transform::Intercept => vec![],
            Transform::Identity(a) | Transform::Square(a) => vec![a],
            Transform::Product(a, b) => vec![a, b],
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Intercept => write!(f, "1"),
            Transform::Identity(a) => write!(f, "{a}"),
            Transform::Product(a, b) => write!(f, "{a}*{b}"),
            Transform::Square(a) => write!(f, "square({a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorTerm {
    /// Coefficient name, e.g. `logsd(zeta2).zeta1`.
    pub coefficient: String,
    pub transform: Transform,
    pub target: DistParam,
}

impl PredictorTerm {
    pub fn new(latent: &str, target: DistParam, transform: Transform) -> Self {
        Self { coefficient: format!("{}({latent}).{transform}", target.keyword()), transform, target }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDef {
    pub name: String,
    /// Grouping column when the latent takes one value per group instead of one per row.
    pub level: Option<String>,
    pub mu_predictor: Vec<PredictorTerm>,
    pub sigma_predictor: Vec<PredictorTerm>,
    pub mean_fixed: Option<f64>,
    pub sd_fixed: Option<f64>,
}

impl LatentDef {
    pub fn predictor(&self, target: DistParam) -> &[PredictorTerm] {
        match target {
            DistParam::Mu => &self.mu_predictor,
            DistParam::LogSd => &self.sigma_predictor,
        }
    }

    /// Latents appearing in either predictor.
    pub fn parents(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in self.mu_predictor.iter().chain(&self.sigma_predictor) {
            for a in t.transform.arguments() {
                if !out.contains(&a) {
                    out.push(a);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loading {
    Fixed(f64),
    Free,
    /// Free with positive support; fixes the sign of a latent scaled by `fix sd`.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemIntercept {
    Fixed(f64),
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDef {
    /// Observed column name.
    pub name: String,
    pub latent: String,
    pub loading: Loading,
    pub intercept: ItemIntercept,
    pub censor: Option<(f64, f64)>,
}

/// Parameter class a prior selector addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    Loading,
    Intercept,
    ResidSd,
    Sd,
    Mu,
    LogSd,
    GroupSd,
}

impl ParamClass {
    pub fn keyword(self) -> &'static str {
        match self {
            ParamClass::Loading => "loading",
            ParamClass::Intercept => "intercept",
            ParamClass::ResidSd => "resid_sd",
            ParamClass::Sd => "sd",
            ParamClass::Mu => "mu",
            ParamClass::LogSd => "logsd",
            ParamClass::GroupSd => "group_sd",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Some(match s {
            "loading" => ParamClass::Loading,
            "intercept" => ParamClass::Intercept,
            "resid_sd" => ParamClass::ResidSd,
            "sd" => ParamClass::Sd,
            "mu" => ParamClass::Mu,
            "logsd" => ParamClass::LogSd,
            "group_sd" => ParamClass::GroupSd,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// An item or latent name. Item classes accept a latent to mean all its items.
    Name(String),
    /// `mu(latent)` or `logsd(latent)`, used by `group_sd`.
    Dist(DistParam, String),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Name(n) => write!(f, "{n}"),
            Target::Dist(p, l) => write!(f, "{}({l})", p.keyword()),
        }
    }
}

/// `class[(target)][.term]`; omitted parts match anything.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Selector {
    pub class: ParamClass,
    pub target: Option<Target>,
    pub term: Option<Transform>,
}

impl Selector {
    pub fn class(class: ParamClass) -> Self {
        Self { class, target: None, term: None }
    }

    pub fn specificity(&self) -> u8 {
        2 * u8::from(self.target.is_some()) + u8::from(self.term.is_some())
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.class.keyword())?;
        if let Some(t) = &self.target {
            write!(f, "({t})")?;
        }
        if let Some(t) = &self.term {
            write!(f, ".{t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorStatement {
    pub selector: Selector,
    pub prior: PriorDef,
}

/// Random intercepts per level of a grouping column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDecl {
    pub column: String,
    pub targets: Vec<(DistParam, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub latents: Vec<LatentDef>,
    pub items: Vec<ItemDef>,
    /// Prior statements in declaration order; the most specific selector wins,
    /// later statements break ties.
    pub priors: Vec<PriorStatement>,
    pub groups: Option<GroupDecl>,
}

/// What a free parameter is, for prior lookup.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamKey<'a> {
    Loading { item: &'a str, latent: &'a str },
    Intercept { item: &'a str, latent: &'a str },
    ResidSd { item: &'a str, latent: &'a str },
    Sd { latent: &'a str },
    Coefficient { latent: &'a str, target: DistParam, transform: &'a Transform },
    GroupSd { latent: &'a str, target: DistParam },
}

impl ParamKey<'_> {
    fn matches(&self, sel: &Selector) -> bool {
        let name_ok = |t: &Option<Target>, names: &[&str]| match t {
            None => true,
            Some(Target::Name(n)) => names.contains(&n.as_str()),
            Some(Target::Dist(..)) => false,
        };
        match *self {
            ParamKey::Loading { item, latent } => {
                sel.class == ParamClass::Loading && name_ok(&sel.target, &[item, latent]) && sel.term.is_none()
            }
            ParamKey::Intercept { item, latent } => {
                sel.class == ParamClass::Intercept && name_ok(&sel.target, &[item, latent]) && sel.term.is_none()
            }
            ParamKey::ResidSd { item, latent } => {
                sel.class == ParamClass::ResidSd && name_ok(&sel.target, &[item, latent]) && sel.term.is_none()
            }
            ParamKey::Sd { latent } => {
                sel.class == ParamClass::Sd && name_ok(&sel.target, &[latent]) && sel.term.is_none()
            }
            ParamKey::Coefficient { latent, target, transform } => {
                let class = match target {
                    DistParam::Mu => ParamClass::Mu,
                    DistParam::LogSd => ParamClass::LogSd,
                };
                sel.class == class
                    && name_ok(&sel.target, &[latent])
                    && sel.term.as_ref().is_none_or(|t| t == transform)
            }
            ParamKey::GroupSd { latent, target } => {
                sel.class == ParamClass::GroupSd
                    && sel.term.is_none()
                    && match &sel.target {
                        None => true,
                        Some(Target::Dist(p, l)) => *p == target && l == latent,
                        Some(Target::Name(_)) => false,
                    }
            }
        }
    }
}

impl ModelSpec {
    pub fn latent(&self, name: &str) -> Option<&LatentDef> {
        self.latents.iter().find(|l| l.name == name)
    }

    pub fn latent_index(&self, name: &str) -> Option<usize> {
        self.latents.iter().position(|l| l.name == name)
    }

    pub fn items_of<'a>(&'a self, latent: &'a str) -> impl Iterator<Item = &'a ItemDef> + 'a {
        self.items.iter().filter(move |i| i.latent == latent)
    }

    /// The grouping column, from either a `group` statement or a group-level latent.
    pub fn group_column(&self) -> Option<&str> {
        self.groups
            .as_ref()
            .map(|g| g.column.as_str())
            .or_else(|| self.latents.iter().find_map(|l| l.level.as_deref()))
    }

    /// Number of structural coefficients across all predictors.
    pub fn coefficient_count(&self) -> usize {
        self.latents.iter().map(|l| l.mu_predictor.len() + l.sigma_predictor.len()).sum()
    }

    /// Resolves the prior for a parameter; `None` means flat.
    pub fn prior_for(&self, key: &ParamKey<'_>) -> Option<PriorDef> {
        let mut best: Option<(u8, &PriorStatement)> = None;
        for st in &self.priors {
            if key.matches(&st.selector) {
                let s = st.selector.specificity();
                if best.is_none_or(|(b, _)| s >= b) {
                    best = Some((s, st));
                }
            }
        }
        best.map(|(_, st)| st.prior)
    }

    /// Latent indices ordered so every latent follows its parents.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.latents.len();
        let index: HashMap<&str, usize> =
            self.latents.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; n];
        let mut order = Vec::with_capacity(n);
        fn visit(
            spec: &ModelSpec,
            index: &HashMap<&str, usize>,
            state: &mut [u8],
            order: &mut Vec<usize>,
            i: usize,
        ) -> Result<()> {
            match state[i] {
                2 => return Ok(()),
                1 => return Err(Error::Cycle(spec.latents[i].name.clone())),
                _ => {}
            }
            state[i] = 1;
            for p in spec.latents[i].parents() {
                let j = *index
                    .get(p)
                    .ok_or_else(|| Error::Model(format!("unknown latent `{p}` in predictor")))?;
                visit(spec, index, state, order, j)?;
            }
            state[i] = 2;
            order.push(i);
            Ok(())
        }
        for i in 0..n {
            visit(self, &index, &mut state, &mut order, i)?;
        }
        Ok(order)
    }

    /// Replaces all prior statements.
    pub fn with_priors(mut self, priors: Vec<PriorStatement>) -> Self {
        self.priors = priors;
        self
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_spec(self, f)
    }
}
