//! Machine-learning powered feasible path optimization.
//!
//! The crate covers the full pipeline for constrained black-box problems:
//!
//! * [`problems`]: benchmark functions and the Williams-Otto process model
//!   behind a uniform evaluate-only interface.
//! * [`sampling`]: Latin hypercube sampling and the adaptive two-stage
//!   sampler with an SVM feasibility filter.
//! * [`svm`]: soft-margin kernel classifier trained by SMO.
//! * [`surrogate`]: Swish multilayer perceptrons with exact Jacobians and
//!   Hessians.
//! * [`qp`]: dense strictly convex QP solver.
//! * [`sqp`]: the SQP feasible path optimizer driven by surrogate
//!   derivatives.
//! * [`pipeline`]: end-to-end trials and repeated-trial statistics.
//!
//! Every numerical type is generic over [`Real`]; the aliases at the crate
//! root fix the scalar to `f64`.

pub mod linalg;
pub mod pipeline;
pub mod problems;
pub mod qp;
pub mod sampling;
pub mod scalar;
pub mod sqp;
pub mod surrogate;
pub mod svm;

pub use scalar::Real;

pub type ProblemSpec = problems::ProblemSpec<f64>;
pub type Dataset = sampling::Dataset<f64>;
pub type SamplingConfig = sampling::SamplingConfig<f64>;
pub type MlpSurrogate = surrogate::MlpSurrogate<f64>;
pub type TrainConfig = surrogate::TrainConfig<f64>;
pub type SvmModel = svm::SvmModel<f64>;
pub type SvmParams = svm::SvmParams<f64>;
pub type QpProblem = qp::QpProblem<f64>;
pub type QpSolution = qp::QpSolution<f64>;
pub type SqpConfig = sqp::SqpConfig<f64>;
pub type SqpResult = sqp::SqpResult<f64>;
pub type WoState = problems::williams_otto::WoState<f64>;
