//! Saccade-style patch selection as a data-reduction front-end for vision
//! models: a patch-addressable sensor model, selection policies, tiny
//! differentiable models, a learned saccade loop, a toy tracker, and the
//! metrics to quantify the accuracy/bandwidth trade-off.

pub mod config;
pub mod datagen;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod models;
pub mod params;
pub mod policy;
pub mod saccade;
pub mod sensor;
pub mod tracking;
