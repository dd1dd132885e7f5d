use ovpath_core::annotation::{assign_labels, CellLabel, Label};
use ovpath_core::plane::Pixel;
use ovpath_core::segment::{segment_cells, SegmentationParams};
use ovpath_core::stain::{deconvolve, rgb_to_od, StainMatrix, DEFAULT_WHITE};
use ovpath_core::synth::{generate_roi, CohortSpec, GeneratedRoi, Histotype};

/// Fraction of rendered nuclei matched one-to-one by a segmented cell that
/// carries the right label.
fn recovery(g: &GeneratedRoi, params: &SegmentationParams) -> (f64, usize, usize) {
    let od = rgb_to_od(&g.tile, DEFAULT_WHITE);
    let planes = deconvolve(&od, &StainMatrix::default()).unwrap();
    let cells = segment_cells(&planes.hema, params, &g.truth.roi_id);
    let (labels, _) = assign_labels(&cells, &g.annotations, params.pixel_size);
    let ps = params.pixel_size;
    let mut hits = vec![0usize; cells.len()];
    let owner: Vec<Option<usize>> = g
        .truth
        .cells
        .iter()
        .map(|t| {
            let p = Pixel::new((t.x / ps) as u32, (t.y / ps) as u32);
            cells.iter().position(|c| c.nucleus.contains(p))
        })
        .collect();
    for o in owner.iter().flatten() {
        hits[*o] += 1;
    }
    let correct = g
        .truth
        .cells
        .iter()
        .zip(&owner)
        .filter(|(t, o)| match o {
            Some(i) if hits[*i] == 1 => {
                let want = match t.label {
                    Label::Tumor => CellLabel::Tumor,
                    Label::Stroma => CellLabel::Stroma,
                };
                labels[*i].label == want
            }
            _ => false,
        })
        .count();
    (correct as f64 / g.truth.cells.len() as f64, g.truth.cells.len(), cells.len())
}

#[test]
fn segmentation_recovers_rendered_cells() {
    let spec = CohortSpec::default();
    let params = SegmentationParams::default();
    for (class, subject, roi) in [(Histotype::Hgsoc, 0, 0), (Histotype::Sbot, 0, 0), (Histotype::Hgsoc, 7, 4)] {
        let g = generate_roi(&spec, class, subject, roi).unwrap();
        let (rate, n_truth, n_seg) = recovery(&g, &params);
        eprintln!("{} truth={n_truth} segmented={n_seg} recovered={rate:.4}", g.truth.roi_id);
        assert!(rate >= 0.95, "{}: {rate}", g.truth.roi_id);
    }
}

#[test]
fn deconvolution_recovers_planted_concentrations() {
    let spec = CohortSpec::default();
    for class in Histotype::ALL {
        let g = generate_roi(&spec, class, 1, 0).unwrap();
        let planes = deconvolve(&rgb_to_od(&g.tile, DEFAULT_WHITE), &StainMatrix::default()).unwrap();
        let n = g.hema.data.len() as f64;
        let mae_h: f64 = planes.hema.data.iter().zip(&g.hema.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        let mae_e: f64 = planes.eosin.data.iter().zip(&g.eosin.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        assert!(mae_h <= 0.02 && mae_e <= 0.02, "{class:?}: {mae_h} {mae_e}");
    }
}

#[test]
fn hgsoc_radii_vary_more() {
    let spec = CohortSpec::default();
    let radii = |class| -> Vec<f64> {
        (0..4)
            .flat_map(|r| generate_roi(&spec, class, 0, r).unwrap().truth.cells)
            .filter(|c| c.label == Label::Tumor)
            .map(|c| (c.semi_major * c.semi_minor).sqrt())
            .collect()
    };
    let sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let (h, s) = (radii(Histotype::Hgsoc), radii(Histotype::Sbot));
    assert!(h.len() >= 500 && s.len() >= 500);
    assert!(sd(&h) > sd(&s), "{} vs {}", sd(&h), sd(&s));
}
