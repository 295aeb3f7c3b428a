#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::unnecessary_to_owned,
    clippy::type_complexity
)]

pub mod bayesopt;
pub mod benchmark;
pub mod calibrate;
pub mod certify;
pub mod float_serde;
pub mod seeds;
pub mod signals;
pub mod stl;
pub mod systems;
