//! Set-theoretic design and runtime of distributed supervisory MPC layered
//! over network-realisation-function (NRF) controllers.

pub mod design;
pub mod linsys;
pub mod nrf;
pub mod optim;
pub mod runtime;
pub mod serial;
pub mod sets;
