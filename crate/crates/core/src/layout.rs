//! Flat unconstrained parameter vector and the transforms to named parameters.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupColumn};
use crate::dist::PriorDef;
use crate::error::{Error, Result};
use crate::spec::{DistParam, ItemIntercept, Loading, ModelSpec, ParamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Loading,
    ItemIntercept,
    ResidualSd,
    StructuralCoefficient,
    LatentSd,
    HyperSd,
    RandomIntercept,
    LatentValue,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Loading => "loading",
            Role::ItemIntercept => "item-intercept",
            Role::ResidualSd => "residual-sd",
            Role::StructuralCoefficient => "structural-coefficient",
            Role::LatentSd => "latent-sd",
            Role::HyperSd => "hyper-sd",
            Role::RandomIntercept => "random-intercept",
            Role::LatentValue => "latent-value",
        }
    }
}

/// Constrained support and its bijection with the real line.
///
/// Bounded-below slots use `x = a + exp(u)`, bounded-above `x = b - exp(u)`,
/// and intervals a scaled logistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Support {
    Real,
    Lower { lower: f64 },
    Upper { upper: f64 },
    Interval { lower: f64, upper: f64 },
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Support {
    pub fn from_bounds(lower: f64, upper: f64) -> Self {
        match (lower.is_finite(), upper.is_finite()) {
            (false, false) => Support::Real,
            (true, false) => Support::Lower { lower },
            (false, true) => Support::Upper { upper },
            (true, true) => Support::Interval { lower, upper },
        }
    }

    /// Constrained value.
    #[inline]
    pub fn constrain(&self, u: f64) -> f64 {
        match *self {
            Support::Real => u,
            Support::Lower { lower } => lower + u.exp(),
            Support::Upper { upper } => upper - u.exp(),
            Support::Interval { lower, upper } => lower + (upper - lower) * logistic(u),
        }
    }

    /// Constrained value, `dx/du`, log-Jacobian, and its derivative in `u`.
    #[inline]
    pub fn constrain_with_jacobian(&self, u: f64) -> (f64, f64, f64, f64) {
        match *self {
            Support::Real => (u, 1.0, 0.0, 0.0),
            Support::Lower { lower } => {
                let e = u.exp();
                (lower + e, e, u, 1.0)
            }
            Support::Upper { upper } => {
                let e = u.exp();
                (upper - e, -e, u, 1.0)
            }
            Support::Interval { lower, upper } => {
                let s = logistic(u);
                let w = upper - lower;
                let log_s = if u >= 0.0 { -(-u).exp().ln_1p() } else { u - u.exp().ln_1p() };
                let log_1ms = if u >= 0.0 { -u - (-u).exp().ln_1p() } else { -u.exp().ln_1p() };
                (lower + w * s, w * s * (1.0 - s), w.ln() + log_s + log_1ms, 1.0 - 2.0 * s)
            }
        }
    }

    pub fn unconstrain(&self, x: f64) -> Option<f64> {
        let u = match *self {
            Support::Real => x,
            Support::Lower { lower } => (x - lower).ln(),
            Support::Upper { upper } => (upper - x).ln(),
            Support::Interval { lower, upper } => {
                let p = (x - lower) / (upper - lower);
                (p / (1.0 - p)).ln()
            }
        };
        u.is_finite().then_some(u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub role: Role,
    pub support: Support,
    pub index: usize,
    /// `None` is a flat prior, or a slot whose density comes from the model itself.
    pub prior: Option<PriorDef>,
}

/// Typed indices into the flat vector, used by the density.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Blocks {
    pub loading: Vec<Option<usize>>,
    pub intercept: Vec<Option<usize>>,
    pub resid_sd: Vec<usize>,
    /// Per latent, per target (mu, logsd): index of each term's coefficient.
    pub coefficients: Vec<[Vec<usize>; 2]>,
    pub latent_sd: Vec<Option<usize>>,
    /// Per latent, per target: (hyper-sd index, first random-intercept index).
    pub random: Vec<[Option<(usize, usize)>; 2]>,
    /// First latent-value index and number of units (rows or groups) per latent.
    pub latent_values: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    entries: Vec<LayoutEntry>,
    pub(crate) blocks: Blocks,
    rows: usize,
    groups: usize,
}

struct Builder {
    entries: Vec<LayoutEntry>,
}

impl Builder {
    fn push(&mut self, name: String, role: Role, natural: (f64, f64), prior: Option<PriorDef>) -> usize {
        let (plo, phi) = prior.map_or((f64::NEG_INFINITY, f64::INFINITY), |p| p.support());
        let support = Support::from_bounds(natural.0.max(plo), natural.1.min(phi));
        let index = self.entries.len();
        self.entries.push(LayoutEntry { name, role, support, index, prior });
        index
    }
}

const REAL: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);
const POSITIVE: (f64, f64) = (0.0, f64::INFINITY);

/// Assigns every free parameter and latent value a slot in the unconstrained vector.
pub fn build_layout(spec: &ModelSpec, data: &Dataset) -> Result<ParameterLayout> {
    if data.rows() == 0 {
        return Err(Error::EmptyData);
    }
    for item in &spec.items {
        let col = data.column(&item.name).ok_or_else(|| Error::MissingColumn(item.name.clone()))?;
        if let Some((lo, hi)) = item.censor {
            if let Some(v) = col.iter().find(|v| **v < lo || **v > hi) {
                return Err(Error::Data(format!("`{}` value {v} outside censoring bounds [{lo}, {hi}]", item.name)));
            }
        }
    }
    let needs_groups = spec.group_column();
    let group = match needs_groups {
        Some(col) => {
            let g = data.group().ok_or_else(|| Error::MissingColumn(col.to_string()))?;
            if g.name != col {
                return Err(Error::MissingColumn(col.to_string()));
            }
            Some(g)
        }
        None => None,
    };
    let n_groups = group.map_or(0, |g| g.labels.len());

    // Items of group-level latents must be constant within each group.
    for item in &spec.items {
        let latent = spec.latent(&item.latent).expect("validated spec");
        if latent.level.is_some() {
            let g = group.expect("group column checked above");
            let col = data.column(&item.name).expect("checked above");
            let mut first: Vec<Option<f64>> = vec![None; n_groups];
            for (r, &v) in col.iter().enumerate() {
                match first[g.ids[r]] {
                    None => first[g.ids[r]] = Some(v),
                    Some(w) if w != v => {
                        return Err(Error::Data(format!(
                            "`{}` varies within group `{}` but measures group-level latent `{}`",
                            item.name, g.labels[g.ids[r]], latent.name
                        )))
                    }
                    _ => {}
                }
            }
        }
    }

    layout_for_shape(spec, data.rows(), group)
}

/// Layout for `rows` observations and the given grouping, without looking at
/// any observed values.
pub fn layout_for_shape(spec: &ModelSpec, rows: usize, group: Option<&GroupColumn>) -> Result<ParameterLayout> {
    if rows == 0 {
        return Err(Error::EmptyData);
    }
    if let Some(col) = spec.group_column() {
        if group.is_none_or(|g| g.name != col) {
            return Err(Error::MissingColumn(col.to_string()));
        }
    }
    let group = group.filter(|_| spec.group_column().is_some());
    let n_groups = group.map_or(0, |g| g.labels.len());
    let mut b = Builder { entries: Vec::new() };
    let n_items = spec.items.len();
    let mut loading = vec![None; n_items];
    let mut intercept = vec![None; n_items];
    let mut resid_sd = Vec::with_capacity(n_items);

    for (k, item) in spec.items.iter().enumerate() {
        let key = ParamKey::Loading { item: &item.name, latent: &item.latent };
        match item.loading {
            Loading::Fixed(_) => {}
            Loading::Free => {
                loading[k] = Some(b.push(format!("loading({})", item.name), Role::Loading, REAL, spec.prior_for(&key)))
            }
            Loading::Positive => {
                loading[k] =
                    Some(b.push(format!("loading({})", item.name), Role::Loading, POSITIVE, spec.prior_for(&key)))
            }
        }
    }
    for (k, item) in spec.items.iter().enumerate() {
        if item.intercept == ItemIntercept::Free {
            let key = ParamKey::Intercept { item: &item.name, latent: &item.latent };
            intercept[k] =
                Some(b.push(format!("intercept({})", item.name), Role::ItemIntercept, REAL, spec.prior_for(&key)));
        }
    }
    for item in &spec.items {
        let key = ParamKey::ResidSd { item: &item.name, latent: &item.latent };
        resid_sd.push(b.push(format!("resid_sd({})", item.name), Role::ResidualSd, POSITIVE, spec.prior_for(&key)));
    }

    let mut coefficients = Vec::with_capacity(spec.latents.len());
    for l in &spec.latents {
        let mut per = [Vec::new(), Vec::new()];
        for (slot, target) in [DistParam::Mu, DistParam::LogSd].into_iter().enumerate() {
            for t in l.predictor(target) {
                let key = ParamKey::Coefficient { latent: &l.name, target, transform: &t.transform };
                per[slot].push(b.push(t.coefficient.clone(), Role::StructuralCoefficient, REAL, spec.prior_for(&key)));
            }
        }
        coefficients.push(per);
    }

    let mut latent_sd = Vec::with_capacity(spec.latents.len());
    for l in &spec.latents {
        if l.sd_fixed.is_none() && l.sigma_predictor.is_empty() {
            let key = ParamKey::Sd { latent: &l.name };
            latent_sd.push(Some(b.push(format!("sd({})", l.name), Role::LatentSd, POSITIVE, spec.prior_for(&key))));
        } else {
            latent_sd.push(None);
        }
    }

    let mut random = vec![[None, None]; spec.latents.len()];
    let mut hyper = Vec::new();
    if let Some(g) = &spec.groups {
        for (target, latent) in &g.targets {
            let li = spec.latent_index(latent).expect("validated spec");
            let key = ParamKey::GroupSd { latent, target: *target };
            let idx = b.push(
                format!("group_sd({}({latent}))", target.keyword()),
                Role::HyperSd,
                POSITIVE,
                spec.prior_for(&key),
            );
            hyper.push((li, *target, idx));
        }
        let labels = &group.expect("group column checked above").labels;
        for (li, target, hidx) in hyper {
            let start = b.entries.len();
            for lab in labels {
                b.push(
                    format!("re({}({}))[{lab}]", target.keyword(), spec.latents[li].name),
                    Role::RandomIntercept,
                    REAL,
                    None,
                );
            }
            random[li][target as usize] = Some((hidx, start));
        }
    }

    let mut latent_values = Vec::with_capacity(spec.latents.len());
    for l in &spec.latents {
        let start = b.entries.len();
        let units = if l.level.is_some() {
            for lab in &group.expect("group column checked above").labels {
                b.push(format!("{}[{lab}]", l.name), Role::LatentValue, REAL, None);
            }
            n_groups
        } else {
            for r in 0..rows {
                b.push(format!("{}[{r}]", l.name), Role::LatentValue, REAL, None);
            }
            rows
        };
        latent_values.push((start, units));
    }

    Ok(ParameterLayout {
        entries: b.entries,
        blocks: Blocks { loading, intercept, resid_sd, coefficients, latent_sd, random, latent_values },
        rows,
        groups: n_groups,
    })
}

impl ParameterLayout {
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.entries.iter().filter(|e| e.role == role).count()
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            Err(Error::Dimension { expected: self.dim(), got: n })
        } else {
            Ok(())
        }
    }

    /// Constrained values in layout order.
    pub fn constrain(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(point.len())?;
        Ok(self.entries.iter().zip(point).map(|(e, &u)| e.support.constrain(u)).collect())
    }

    pub fn unconstrain(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(values.len())?;
        self.entries
            .iter()
            .zip(values)
            .map(|(e, &x)| {
                e.support.unconstrain(x).ok_or_else(|| Error::OutOfSupport { name: e.name.clone(), value: x })
            })
            .collect()
    }

    pub fn constrain_named(&self, point: &[f64]) -> Result<Vec<(String, f64)>> {
        Ok(self.entries.iter().map(|e| e.name.clone()).zip(self.constrain(point)?).collect())
    }

    /// Unconstrains a complete name → value map.
    pub fn unconstrain_named(&self, named: &HashMap<String, f64>) -> Result<Vec<f64>> {
        let values = self
            .entries
            .iter()
            .map(|e| named.get(&e.name).copied().ok_or_else(|| Error::Model(format!("no value for `{}`", e.name))))
            .collect::<Result<Vec<f64>>>()?;
        self.unconstrain(&values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_model;

    #[test]
    fn unit_value_maps_to_zero() {
        let s = Support::Lower { lower: 0.0 };
        assert_eq!(s.unconstrain(1.0), Some(0.0));
        assert_eq!(s.constrain(0.0), 1.0);
    }

    #[test]
    fn shifted_lower_bound_limit() {
        let s = Support::Lower { lower: 0.7 };
        assert!((s.constrain(-800.0) - 0.7).abs() < 1e-300);
        assert!(s.unconstrain(0.7).is_none());
        assert!(s.unconstrain(0.5).is_none());
    }

    #[test]
    fn minimal_layout() {
        let spec = parse_model("latent f; f =~ y;").unwrap();
        let data = Dataset::new(vec![("y".into(), vec![0.3])], None).unwrap();
        let layout = build_layout(&spec, &data).unwrap();
        assert_eq!(layout.dim(), 3);
        let roles: Vec<Role> = layout.entries().iter().map(|e| e.role).collect();
        assert_eq!(roles, vec![Role::ResidualSd, Role::LatentSd, Role::LatentValue]);
    }

    #[test]
    fn missing_column_and_empty_data() {
        let spec = parse_model("latent f; f =~ y + z;").unwrap();
        let data = Dataset::new(vec![("y".into(), vec![0.3])], None).unwrap();
        assert!(matches!(build_layout(&spec, &data), Err(Error::MissingColumn(c)) if c == "z"));
        let empty = Dataset::new(vec![("y".into(), vec![]), ("z".into(), vec![])], None).unwrap();
        assert!(matches!(build_layout(&spec, &empty), Err(Error::EmptyData)));
    }

    #[test]
    fn interval_jacobian_matches_derivative() {
        let s = Support::Interval { lower: -1.0, upper: 3.0 };
        for &u in &[-30.0, -2.0, 0.0, 0.7, 25.0] {
            let (x, dx, lj, dlj) = s.constrain_with_jacobian(u);
            assert!((x - s.constrain(u)).abs() < 1e-12);
            let exact = 4f64.ln() - u.abs() - 2.0 * (-u.abs()).exp().ln_1p();
            assert!((lj - exact).abs() < 1e-12);
            if u.abs() < 5.0 {
                assert!((lj - dx.ln()).abs() < 1e-12);
            }
            let h = 1e-6;
            let fd = (s.constrain_with_jacobian(u + h).2 - s.constrain_with_jacobian(u - h).2) / (2.0 * h);
            assert!((fd - dlj).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_support_unconstrain_errors() {
        let spec = parse_model("latent f; f =~ y;").unwrap();
        let data = Dataset::new(vec![("y".into(), vec![0.3])], None).unwrap();
        let layout = build_layout(&spec, &data).unwrap();
        assert!(matches!(layout.unconstrain(&[-1.0, 1.0, 0.0]), Err(Error::OutOfSupport { .. })));
        assert!(matches!(layout.constrain(&[0.0]), Err(Error::Dimension { .. })));
    }
}
