//! First- and second-order necessary-condition tests along a base pair.

pub mod functionals;
pub mod kernel;
pub mod pointwise;
pub mod report;

pub use functionals::{AdjointPoint, Functionals, PairJets};
pub use kernel::{martingale_kernel, partial_plus_estimate, script_s_series, second_order_integral_test, MartingaleKernel, PartialPlusEstimate, SSeries};
pub use pointwise::{
    classical_singular_check, first_order_check, second_order_pointwise_test, second_order_zero_s_test, singular_check, ClassicalSingularReport, GradientS,
    SingularReport,
};
pub use report::{CheckSettings, ConditionReport, TestRow, Verdict, READING};
