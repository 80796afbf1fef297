//! The benchmark models used in the simulation studies, each with a
//! generative prior (for drawing true parameters) and a weakly informative
//! prior (for fitting).
//!
//! ```
//! use dsem::benchmarks::{benchmark, PriorChoice};
//!
//! let b = benchmark("two-factor").unwrap();
//! let spec = b.spec(PriorChoice::Generative).unwrap();
//! assert_eq!(spec.items.len(), 10);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recover::Design;
use crate::spec::{parse_model, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorChoice {
    Generative,
    Weak,
}

impl PriorChoice {
    pub fn name(self) -> &'static str {
        match self {
            PriorChoice::Generative => "generative",
            PriorChoice::Weak => "weak",
        }
    }
}

impl std::str::FromStr for PriorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generative" => Ok(PriorChoice::Generative),
            "weak" => Ok(PriorChoice::Weak),
            _ => Err(Error::Config(format!("unknown prior choice `{s}` (expected generative or weak)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkConfig {
    pub name: &'static str,
    /// Model structure without priors.
    pub structure: &'static str,
    pub generative: &'static str,
    pub weak: &'static str,
    /// Repeated measurements per group, for grouped designs.
    pub per_group: Option<usize>,
}

impl BenchmarkConfig {
    pub fn source(&self, prior: PriorChoice) -> String {
        let priors = match prior {
            PriorChoice::Generative => self.generative,
            PriorChoice::Weak => self.weak,
        };
        format!("{}\n{}", self.structure.trim(), priors.trim())
    }

    pub fn spec(&self, prior: PriorChoice) -> Result<ModelSpec> {
        parse_model(&self.source(prior))
    }

    /// Design with `n` observations, or `n` groups for grouped benchmarks.
    pub fn design(&self, n: usize) -> Design {
        match self.per_group {
            Some(per_group) => Design::Grouped { groups: n, per_group },
            None => Design::Rows { rows: n },
        }
    }
}

pub const NAMES: [&str; 5] = ["two-factor", "mediation", "interaction", "sequential", "case-study-synthetic"];

pub fn benchmark(name: &str) -> Result<BenchmarkConfig> {
    BENCHMARKS.iter().find(|b| b.name == name).copied().ok_or_else(|| Error::UnknownBenchmark(name.to_string()))
}

pub fn all() -> &'static [BenchmarkConfig] {
    &BENCHMARKS
}

static BENCHMARKS: [BenchmarkConfig; 5] = [
    BenchmarkConfig {
        name: "two-factor",
        structure: "
latent zeta1;
latent zeta2;
zeta1 =~ y11 + y12 + y13 + y14 + y15;
zeta2 =~ y21 + y22 + y23 + y24 + y25;
mu(zeta2) ~ zeta1;
logsd(zeta2) ~ 1 + zeta1;
",
        generative: "
prior mu = normal(1, 0.3);
prior sd = gamma(11, 11) T[0.7, ];
prior logsd.1 = exp_gamma(11, 11);
prior logsd = normal(0.15, 0.05);
prior loading = normal(1, 0.3);
prior resid_sd = normal(0.5, 0.15) T[0.3, ];
",
        weak: "
prior mu = normal(0, 2.5);
prior sd = gamma(5, 5);
prior logsd.1 = exp_gamma(5, 5);
prior logsd = normal(0, 0.5);
prior loading = normal(0, 2.5);
prior resid_sd = gamma(2.5, 5);
",
        per_group: None,
    },
    BenchmarkConfig {
        name: "mediation",
        structure: "
latent zeta1;
latent zeta2;
latent zeta3;
latent zeta4;
zeta1 =~ y11 + y12 + y13 + y14 + y15;
zeta2 =~ y21 + y22 + y23 + y24 + y25;
zeta3 =~ y31 + y32 + y33 + y34 + y35;
zeta4 =~ y41 + y42 + y43 + y44 + y45;
mu(zeta2) ~ zeta1;
logsd(zeta2) ~ 1 + zeta1;
mu(zeta3) ~ zeta1;
logsd(zeta3) ~ 1 + zeta1;
mu(zeta4) ~ zeta1 + zeta2;
logsd(zeta4) ~ 1 + zeta1 + zeta3;
",
        generative: "
prior mu = normal(1, 0.3);
prior sd = gamma(11, 11) T[0.7, ];
prior logsd.1 = exp_gamma(11, 11);
prior logsd = normal(-0.15, 0.05);
prior logsd(zeta4).zeta1 = normal(0.15, 0.05);
prior loading = normal(1, 0.3);
prior resid_sd = normal(0.5, 0.15) T[0.3, ];
",
        weak: "
prior mu = normal(0, 2.5);
prior sd = gamma(5, 5);
prior logsd.1 = exp_gamma(5, 5);
prior logsd = normal(0, 0.5);
prior loading = normal(0, 2.5);
prior resid_sd = gamma(2.5, 5);
",
        per_group: None,
    },
    BenchmarkConfig {
        name: "interaction",
        structure: "
latent zeta1;
latent zeta2;
latent zeta3;
latent zeta4;
zeta1 =~ y11 + y12 + y13 + y14 + y15;
zeta2 =~ y21 + y22 + y23 + y24 + y25;
zeta3 =~ y31 + y32 + y33 + y34 + y35;
zeta4 =~ y41 + y42 + y43 + y44 + y45;
mu(zeta4) ~ zeta1 + zeta1*zeta2;
logsd(zeta4) ~ 1 + zeta1 + zeta1*zeta3;
",
        generative: "
prior mu(zeta4).zeta1 = normal(1, 0.3);
prior mu(zeta4).zeta1*zeta2 = normal(0.5, 0.3);
prior sd = gamma(11, 11) T[0.7, ];
prior logsd.1 = exp_gamma(11, 11);
prior logsd(zeta4).zeta1 = normal(0.1, 0.05);
prior logsd(zeta4).zeta1*zeta3 = normal(0.05, 0.05);
prior loading = normal(1, 0.3);
prior resid_sd = normal(0.5, 0.15) T[0.3, ];
",
        weak: "
prior mu = normal(0, 2.5);
prior sd = gamma(5, 5);
prior logsd.1 = exp_gamma(5, 5);
prior logsd = normal(0, 0.5);
prior loading = normal(0, 2.5);
prior resid_sd = gamma(2.5, 5);
",
        per_group: None,
    },
    BenchmarkConfig {
        name: "sequential",
        structure: "
latent zeta1;
latent zeta2;
latent zeta3;
latent zeta4;
latent zeta5;
zeta1 =~ y11 + y12 + y13 + y14 + y15;
zeta2 =~ y21 + y22 + y23 + y24 + y25;
zeta3 =~ y31 + y32 + y33 + y34 + y35;
zeta4 =~ y41 + y42 + y43 + y44 + y45;
zeta5 =~ y51 + y52 + y53 + y54 + y55;
mu(zeta2) ~ zeta1;
logsd(zeta2) ~ 1 + square(zeta1);
mu(zeta3) ~ zeta2;
logsd(zeta3) ~ 1 + square(zeta2);
mu(zeta4) ~ zeta3;
logsd(zeta4) ~ 1 + square(zeta3);
mu(zeta5) ~ zeta4;
logsd(zeta5) ~ 1 + square(zeta4);
",
        generative: "
prior mu = normal(0, 0.2);
prior sd = gamma(11, 11) T[0.7, ];
prior logsd.1 = exp_gamma(11, 11);
prior logsd = normal(0, 0.05);
prior loading = normal(1, 0.3);
prior resid_sd = normal(0.5, 0.15) T[0.3, ];
",
        weak: "
prior mu = normal(0, 2.5);
prior sd = gamma(5, 5);
prior logsd.1 = exp_gamma(5, 5);
prior logsd = normal(0, 0.5);
prior loading = normal(0, 2.5);
prior resid_sd = gamma(2.5, 5);
",
        per_group: None,
    },
    BenchmarkConfig {
        name: "case-study-synthetic",
        structure: "
latent ne per person;
latent em;
ne =~ n1 + n2 + n3 + n4 + n5 + n6 + n7 + n8;
em =~ e1 + e2 + e3 + e4 + e5;
mu(em) ~ ne;
logsd(em) ~ 1 + ne;
group person on mu(em), logsd(em);
fix sd(ne) = 1;
positive loading(n1);
positive loading(n2);
positive loading(n3);
positive loading(n4);
positive loading(n5);
positive loading(n6);
positive loading(n7);
positive loading(n8);
fix loading(e1) = 1;
free intercept(ne);
free intercept(em);
censor n1 in [1, 5];
censor n2 in [1, 5];
censor n3 in [1, 5];
censor n4 in [1, 5];
censor n5 in [1, 5];
censor n6 in [1, 5];
censor n7 in [1, 5];
censor n8 in [1, 5];
censor e1 in [0, 4];
censor e2 in [0, 4];
censor e3 in [0, 4];
censor e4 in [0, 4];
censor e5 in [0, 4];
",
        generative: "
prior mu(em).ne = normal(0, 1);
prior group_sd = half_normal(0, 0.125);
prior logsd(em).1 = normal(0, 0.125);
prior logsd(em).ne = normal(0, 0.125);
prior intercept(ne) = normal(3, 0.5);
prior intercept(em) = normal(2, 0.5);
prior loading = normal(1, 0.25) T[0.3, ];
prior resid_sd = gamma(20, 20);
",
        weak: "
prior mu(em).ne = normal(0, 2);
prior group_sd = half_normal(0, 0.25);
prior logsd(em).1 = normal(0, 0.25);
prior logsd(em).ne = normal(0, 0.25);
prior intercept = student_t(3, 0, 2.5);
prior loading = normal(0, 2);
prior resid_sd = gamma(5, 5);
",
        per_group: Some(3),
    },
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{layout_for_shape, Role};
    use crate::spec::validate;

    #[test]
    fn all_benchmarks_parse_and_identify() {
        for b in all() {
            for p in [PriorChoice::Generative, PriorChoice::Weak] {
                let s = b.spec(p).unwrap();
                assert!(validate(&s).passed, "{} {:?}", b.name, p);
            }
        }
    }

    #[test]
    fn every_structural_slot_has_a_prior() {
        for b in all() {
            for p in [PriorChoice::Generative, PriorChoice::Weak] {
                let s = b.spec(p).unwrap();
                let group = b.per_group.map(|_| crate::data::GroupColumn {
                    name: "person".into(),
                    labels: vec!["a".into()],
                    ids: vec![0],
                });
                let layout = layout_for_shape(&s, 1, group.as_ref()).unwrap();
                for e in layout.entries() {
                    if !matches!(e.role, Role::LatentValue | Role::RandomIntercept) {
                        assert!(e.prior.is_some(), "{} {:?}: {}", b.name, p, e.name);
                    }
                }
            }
        }
    }

    #[test]
    fn two_factor_table_entries() {
        use crate::dist::PriorDef;
        use crate::spec::{DistParam, ParamKey, Transform};
        let s = benchmark("two-factor").unwrap().spec(PriorChoice::Generative).unwrap();
        let slope = ParamKey::Coefficient {
            latent: "zeta2",
            target: DistParam::LogSd,
            transform: &Transform::Identity("zeta1".into()),
        };
        assert_eq!(s.prior_for(&slope), Some(PriorDef::normal(0.15, 0.05).unwrap()));
        let icpt = ParamKey::Coefficient { latent: "zeta2", target: DistParam::LogSd, transform: &Transform::Intercept };
        assert_eq!(s.prior_for(&icpt), Some(PriorDef::exp_gamma(11.0, 11.0).unwrap()));
        assert_eq!(s.prior_for(&ParamKey::Sd { latent: "zeta1" }), Some(PriorDef::truncated_gamma(11.0, 11.0, 0.7, f64::INFINITY).unwrap()));
    }

    #[test]
    fn unknown_benchmark() {
        assert!(matches!(benchmark("nope"), Err(Error::UnknownBenchmark(_))));
    }
}
