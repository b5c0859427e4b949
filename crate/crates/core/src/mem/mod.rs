//! Mechanistic emulators: Gaussian processes whose prior is the law of a
//! linear time-invariant stochastic ODE (the linear proxy) per run, coupled
//! across runs through a kernel over simulator parameters.

mod emulator;
mod lti;
mod param_map;
mod template;
mod warp;

pub use emulator::{condition_mem, optimize_coupling, BlockKernel, Coupling, CouplingFit, MemEmulator, MemPoint, MemPrior};
pub use lti::{mean_function, scalar_cross_integral, sde_covariance, LtiProxy};
pub use param_map::{build_param_map, ParamMap};
pub use template::{fit_proxy, Actuation, FitConfig, InitialState, ProxyFit, ProxyTemplate};
pub use warp::{train_warped_mem, warp_fit, warped_proxy_series, WarpFit, WarpSpec, WarpedMem};
