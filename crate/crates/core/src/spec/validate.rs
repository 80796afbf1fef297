use serde::{Deserialize, Serialize};

use super::{ItemIntercept, Loading, ModelSpec, Transform};

/// Where a latent's location or scale is pinned down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum IdentificationSource {
    FixedMean { value: f64 },
    /// Mean predictor without an intercept term.
    PredictedMean,
    /// Mean predictor with an intercept, anchored by fixed item intercepts.
    FixedItemIntercept { item: String },
    FixedSd { value: f64 },
    FixedLoading { item: String, value: f64 },
    /// Log-sd predictor without an intercept term.
    PredictedSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentReport {
    pub latent: String,
    pub mean: Vec<IdentificationSource>,
    pub scale: Vec<IdentificationSource>,
    pub identified: bool,
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub latents: Vec<LatentReport>,
}

/// Lists, per latent, the constraints that identify its mean and scale.
pub fn validate(spec: &ModelSpec) -> ValidationReport {
    let mut latents = Vec::new();
    for l in &spec.latents {
        let mut mean = Vec::new();
        let mut scale = Vec::new();
        let mut problems = Vec::new();

        let has_intercept = |terms: &[super::PredictorTerm]| terms.iter().any(|t| t.transform == Transform::Intercept);
        if let Some(v) = l.mean_fixed {
            mean.push(IdentificationSource::FixedMean { value: v });
        } else if !has_intercept(&l.mu_predictor) {
            mean.push(IdentificationSource::PredictedMean);
        }
        let fixed_intercepts: Vec<_> = spec
            .items_of(&l.name)
            .filter(|i| matches!(i.intercept, ItemIntercept::Fixed(_)))
            .map(|i| i.name.clone())
            .collect();
        if has_intercept(&l.mu_predictor) {
            if let Some(item) = fixed_intercepts.first() {
                mean.push(IdentificationSource::FixedItemIntercept { item: item.clone() });
            }
        }
        if mean.is_empty() {
            problems.push("mean unidentified: free mean intercept and all item intercepts free".into());
        }

        if let Some(v) = l.sd_fixed {
            scale.push(IdentificationSource::FixedSd { value: v });
        }
        for item in spec.items_of(&l.name) {
            if let Loading::Fixed(v) = item.loading {
                if v != 0.0 {
                    scale.push(IdentificationSource::FixedLoading { item: item.name.clone(), value: v });
                } else {
                    problems.push(format!("loading of `{}` fixed to 0 carries no scale information", item.name));
                }
            }
        }
        if !l.sigma_predictor.is_empty() && !has_intercept(&l.sigma_predictor) {
            scale.push(IdentificationSource::PredictedSd);
        }
        if scale.is_empty() {
            problems.push("scale unidentified: no fixed loading and no fixed sd".into());
        }

        latents.push(LatentReport {
            latent: l.name.clone(),
            identified: !mean.is_empty() && !scale.is_empty(),
            mean,
            scale,
            problems,
        });
    }
    ValidationReport { passed: latents.iter().all(|l| l.identified), latents }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_model;

    #[test]
    fn two_factor_passes() {
        let s = parse_model(
            "latent a; latent b; a =~ x1 + x2; b =~ y1 + y2; mu(b) ~ a; logsd(b) ~ 1 + a;",
        )
        .unwrap();
        let r = validate(&s);
        assert!(r.passed);
        assert_eq!(r.latents[1].mean, vec![IdentificationSource::PredictedMean]);
    }

    #[test]
    fn all_free_fails_on_scale() {
        let s = parse_model("latent a; a =~ x1 + x2; free loading(a);").unwrap();
        let r = validate(&s);
        assert!(!r.passed);
        assert!(r.latents[0].problems[0].contains("scale unidentified"));
    }

    #[test]
    fn free_mean_intercept_with_free_item_intercepts_fails() {
        let s = parse_model("latent a; latent b; a =~ x; b =~ y; mu(b) ~ 1 + a; free intercept(y);").unwrap();
        assert!(!validate(&s).passed);
    }
}
