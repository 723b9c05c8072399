//! Built-in walker assets and blueprint resolution.

use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkerAsset {
    pub name: String,
    pub albedo: [u8; 3],
}

#[derive(Debug, Clone)]
pub struct AssetLibrary {
    walkers: Vec<WalkerAsset>,
}

impl AssetLibrary {
    pub fn builtin() -> Self {
        let palette: [[u8; 3]; 8] = [
            [178, 62, 48],
            [52, 84, 160],
            [204, 168, 64],
            [84, 120, 76],
            [96, 92, 104],
            [150, 104, 72],
            [40, 40, 44],
            [196, 196, 188],
        ];
        let walkers = palette
            .iter()
            .enumerate()
            .map(|(i, &albedo)| WalkerAsset {
                name: format!("walker.pedestrian.{:04}", i + 1),
                albedo,
            })
            .collect();
        Self { walkers }
    }

    pub fn walkers(&self) -> &[WalkerAsset] {
        &self.walkers
    }

    /// Exact names resolve directly. A trailing `*` picks uniformly among
    /// the assets sharing the prefix, drawing from `rng`.
    pub fn resolve(&self, pattern: &str, rng: &mut SplitMix64) -> Option<WalkerAsset> {
        match pattern.strip_suffix('*') {
            Some(prefix) => {
                let candidates: Vec<&WalkerAsset> = self
                    .walkers
                    .iter()
                    .filter(|w| w.name.starts_with(prefix))
                    .collect();
                if candidates.is_empty() {
                    return None;
                }
                let i = rng.below(candidates.len() as u64) as usize;
                Some(candidates[i].clone())
            }
            None => self.walkers.iter().find(|w| w.name == pattern).cloned(),
        }
    }
}
