//! Nucleus outlines drawn over the RGB tile, colored by cell class.

use std::collections::BTreeMap;

use ovpath_core::annotation::CellLabel;
use ovpath_core::stain::RgbTile;
use serde::{Deserialize, Serialize};

pub const TUMOR_COLOR: [u8; 3] = [255, 0, 0];
pub const STROMA_COLOR: [u8; 3] = [0, 255, 0];
pub const UNLABELED_COLOR: [u8; 3] = [128, 128, 128];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Legend {
    pub tumor: usize,
    pub stroma: usize,
    pub unlabeled: usize,
}

impl Legend {
    pub fn total(&self) -> usize {
        self.tumor + self.stroma + self.unlabeled
    }
}

/// Strokes the 1-px inner boundary of every labeled nucleus. `nuclei` is the
/// nucleus label raster (0 = background); cells missing from `classes` are
/// drawn as unlabeled.
pub fn emit_overlay(tile: &RgbTile, nuclei: &[u16], classes: &BTreeMap<u32, CellLabel>) -> (RgbTile, Legend) {
    let (w, h) = (tile.width, tile.height);
    let mut out = tile.clone();
    let mut present: BTreeMap<u32, CellLabel> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let l = nuclei[y * w + x];
            if l == 0 {
                continue;
            }
            let id = u32::from(l);
            let class = classes.get(&id).copied().unwrap_or(CellLabel::Unlabeled);
            present.insert(id, class);
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || nuclei[y * w + x - 1] != l
                || nuclei[y * w + x + 1] != l
                || nuclei[(y - 1) * w + x] != l
                || nuclei[(y + 1) * w + x] != l;
            if edge {
                out.pixels[y * w + x] = match class {
                    CellLabel::Tumor => TUMOR_COLOR,
                    CellLabel::Stroma => STROMA_COLOR,
                    CellLabel::Unlabeled => UNLABELED_COLOR,
                };
            }
        }
    }
    let mut legend = Legend::default();
    for c in present.values() {
        match c {
            CellLabel::Tumor => legend.tumor += 1,
            CellLabel::Stroma => legend.stroma += 1,
            CellLabel::Unlabeled => legend.unlabeled += 1,
        }
    }
    (out, legend)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tile(w: usize, h: usize) -> RgbTile {
        RgbTile::new(w, h, vec![[200, 150, 180]; w * h], 0.25).unwrap()
    }

    #[test]
    fn empty_raster_leaves_tile() {
        let t = tile(8, 6);
        let (o, legend) = emit_overlay(&t, &[0; 48], &BTreeMap::new());
        assert_eq!(o, t);
        assert_eq!(legend.total(), 0);
    }

    #[test]
    fn outlines_and_counts() {
        let (w, h) = (10, 10);
        let mut raster = vec![0u16; w * h];
        for y in 2..7 {
            for x in 2..7 {
                raster[y * w + x] = 1;
            }
        }
        raster[9 * w + 9] = 2;
        let classes = BTreeMap::from([(1, CellLabel::Tumor)]);
        let (o, legend) = emit_overlay(&tile(w, h), &raster, &classes);
        assert_eq!((o.width, o.height), (w, h));
        assert_eq!(o.get(2, 2), TUMOR_COLOR);
        assert_eq!(o.get(4, 4), [200, 150, 180]);
        assert_eq!(o.get(9, 9), UNLABELED_COLOR);
        assert_eq!(legend, Legend { tumor: 1, stroma: 0, unlabeled: 1 });
        let stroked = o.pixels.iter().filter(|p| **p == TUMOR_COLOR).count();
        assert_eq!(stroked, 16);
    }
}
