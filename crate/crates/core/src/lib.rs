//! A software toolchain for a systolic-array tensor compute unit (TCU).
//!
//! Neural-network graphs ([`nnir`]) are lowered by the [`compiler`] into a
//! small TCU instruction set, executed bit-exactly by the fixed-point
//! simulator in [`tcusim`], and costed in cycles, latency and GOP/s. The
//! [`arch`] module sizes the accelerator against an FPGA resource budget and
//! [`ecg`] provides the heartbeat-classification data pipeline that feeds it.

pub mod arch;
pub mod compiler;
pub mod ecg;
pub mod kv;
pub mod nnir;
pub mod quant;
pub mod tcusim;

/// Book chapters, compiled so their listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/architecture.md")]
    mod architecture {}
    #[doc = include_str!("../../../book/src/compiling.md")]
    mod compiling {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/ecg.md")]
    mod ecg {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
