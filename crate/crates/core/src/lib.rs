//! Gaussian distributional structural equation models.
//!
//! Latent variables have normal distributions whose mean (identity link) and
//! log standard deviation (log link) are additive predictors of other latent
//! variables. Models are written in a small text language ([`spec`]), fitted
//! by sampling latent values together with the parameters using the No-U-Turn
//! sampler ([`sampler`]), and checked with rank-normalized convergence
//! diagnostics ([`diagnostics`]), simulation-based calibration
//! ([`calibrate`]) and parameter-recovery studies ([`recover`]).
//!
//! ```
//! use dsem::{spec::parse_model, Dataset, Model};
//!
//! let spec = parse_model("latent f; f =~ y1 + y2;").unwrap();
//! let data = Dataset::new(
//!     vec![("y1".into(), vec![0.1, -0.4]), ("y2".into(), vec![0.3, -0.2])],
//!     None,
//! )
//! .unwrap();
//! let model = Model::new(&spec, &data).unwrap();
//! // 1 loading + 2 residual sds + 1 latent sd + 2 latent values
//! assert_eq!(model.layout().dim(), 6);
//! ```

pub mod benchmarks;
pub mod calibrate;
pub mod data;
pub mod density;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod io;
pub mod layout;
pub mod recover;
pub mod sampler;
pub mod spec;

pub use data::Dataset;
pub use density::{LogDensity, Model};
pub use dist::PriorDef;
pub use error::{Error, Result};
pub use layout::{ParameterLayout, Role};
pub use spec::{parse_model, ModelSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/model-language.md")]
    mod model_language {}
    #[doc = include_str!("../../../book/src/likelihood.md")]
    mod likelihood {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/recovery.md")]
    mod recovery {}
}
