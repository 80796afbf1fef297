use std::fmt::{self, Write};

use super::{DistParam, ItemIntercept, Loading, ModelSpec};

pub(super) fn write_spec(spec: &ModelSpec, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    for l in &spec.latents {
        match &l.level {
            Some(col) => writeln!(f, "latent {} per {col};", l.name)?,
            None => writeln!(f, "latent {};", l.name)?,
        }
    }
    for l in &spec.latents {
        let items: Vec<&str> = spec.items_of(&l.name).map(|i| i.name.as_str()).collect();
        if !items.is_empty() {
            writeln!(f, "{} =~ {};", l.name, items.join(" + "))?;
        }
    }
    for l in &spec.latents {
        for target in [DistParam::Mu, DistParam::LogSd] {
            let terms = l.predictor(target);
            if !terms.is_empty() {
                let mut s = String::new();
                for (k, t) in terms.iter().enumerate() {
                    if k > 0 {
                        s.push_str(" + ");
                    }
                    write!(s, "{}", t.transform)?;
                }
                writeln!(f, "{}({}) ~ {s};", target.keyword(), l.name)?;
            }
        }
    }
    for l in &spec.latents {
        if let Some(v) = l.mean_fixed {
            writeln!(f, "fix mean({}) = {v};", l.name)?;
        }
        if let Some(v) = l.sd_fixed {
            writeln!(f, "fix sd({}) = {v};", l.name)?;
        }
    }
    for l in &spec.latents {
        for (k, item) in spec.items_of(&l.name).enumerate() {
            match item.loading {
                Loading::Fixed(v) => writeln!(f, "fix loading({}) = {v};", item.name)?,
                Loading::Positive => writeln!(f, "positive loading({});", item.name)?,
                // Only the first item can default to fixed.
                Loading::Free if k == 0 => writeln!(f, "free loading({});", item.name)?,
                Loading::Free => {}
            }
            match item.intercept {
                ItemIntercept::Free => writeln!(f, "free intercept({});", item.name)?,
                ItemIntercept::Fixed(v) if v != 0.0 => writeln!(f, "fix intercept({}) = {v};", item.name)?,
                ItemIntercept::Fixed(_) => {}
            }
        }
    }
    for item in &spec.items {
        if let Some((a, b)) = item.censor {
            writeln!(f, "censor {} in [{a}, {b}];", item.name)?;
        }
    }
    if let Some(g) = &spec.groups {
        let targets: Vec<String> = g.targets.iter().map(|(p, l)| format!("{}({l})", p.keyword())).collect();
        writeln!(f, "group {} on {};", g.column, targets.join(", "))?;
    }
    for p in &spec.priors {
        writeln!(f, "prior {} = {};", p.selector, p.prior)?;
    }
    Ok(())
}
