//! Tails of convolutions of nonnegative distributions: representations,
//! transforms, numerical convolution and subexponential-class diagnostics.

pub mod analysis;
pub mod convolve;
pub mod dist;
pub mod error;
pub mod extended;
pub mod lemma1;
pub mod logspace;
pub mod quadrature;
pub mod spec;
pub mod transforms;

pub use dist::{
    counterexample, make_atomic, make_atomic_truncated, make_grid, make_parametric, parametric, sample_to_grid,
    shift_mixture, Atomic, Distribution, Family, Grid, GridSpec, Kind, MeanValue, Repr, TailShape, Truncation,
};
pub use error::{Error, Result};
pub use extended::ExtendedReal;
pub use transforms::{
    exp_tilt, gamma_hat, gamma_hat_with_window, integrated_tail, laplace, laplace_detail, LaplaceSummary,
    LaplaceValue, Method,
};
pub use convolve::{
    conv_atomic, conv_atomic_with, conv_tail_at, conv_tail_at_with, self_conv_n, self_conv_n_with, stopped_sum,
    stopped_sum_with, tail_product_integral, tail_product_integral_with, ConvConfig, StoppingTimePmf, TailBracket,
};
pub use lemma1::{construct_h, construct_h_with, h_eval, verify_h, HConfig, HDiagnostics, HFunction};
pub use analysis::{
    builtin_families, check_condition2, format_real, is_long_tailed, liminf_estimate, ratio_curve, ratio_curve_pair,
    ratio_curve_stopped, test_class, theorem_consistency, AnalysisConfig, ClassTag, ClassVerdict, ConsistencyReport,
    CurveMode, ImplicationCheck, LiminfEstimate, Outcome, RatioCurve, Real, Status,
};
pub use spec::{read_spec, DistSpec, TruncatedSpec};
