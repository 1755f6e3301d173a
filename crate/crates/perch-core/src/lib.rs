//! Core algorithms for visibility-aware aerial target tracking and
//! full-state perching on moving inclined platforms.
//!
//! Everything here is deterministic, allocation-light, and `no_std`
//! (with `alloc`): trajectory classes, differentiable penalty terms,
//! the banded spline solver, and the quasi-Newton engine. File formats,
//! simulation, and the CLI live in the companion `perch-sim` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod angles;
pub mod envmap;
pub mod flatness;
pub mod minco;
pub mod optim;
pub mod perching;
pub mod smoothing;
pub mod target;
pub mod tracking;
