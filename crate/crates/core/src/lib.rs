//! Deterministic, config-driven synthetic scene simulation with aligned RGB,
//! depth and instance-segmentation outputs, ground-truth annotation export,
//! in-pipeline adversarial patch rendering and simple patch defenses.

pub mod annotator;
pub mod config;
pub mod defense;
pub mod geometry;
pub mod patcher;
pub mod renderer;
pub mod rng;
pub mod run;
pub mod scene;
pub mod sensor_rig;

/// Order-preserving map, parallel when the `parallel` feature is on.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
