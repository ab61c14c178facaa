//! From-scratch differentiable computation core: tape autodiff, layers,
//! ODE integration, optimization, and gradient verification.

pub mod check;
pub mod layers;
pub mod ode;
pub mod optim;
pub mod params;
pub mod tape;

pub use check::finite_difference_check;
pub use layers::{Conv2dLayer, ConvTranspose2dLayer, Dense, GruCell, Mlp};
pub use ode::rk4_integrate;
pub use optim::{lr_range_test, step_decay_lr, AdamW, LrRangeResult};
pub use params::{accumulate_gradients, scale_gradients, uniform_init, zeros, ParamArray, ParamSet, TapeBinding};
pub use tape::{Tape, Var, BCE_CLAMP};
