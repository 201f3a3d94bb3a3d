use platesmith_core::augment::{augment, AugmentParams};
use platesmith_core::grammar::{class_of_char, NUM_CLASSES};
use platesmith_core::ocr::{Detection, TemplateRecognizer};
use platesmith_core::pseudolabel::{
    accept_pseudolabel, assemble_string, expansion_round, sweep_grid, LabeledExample, PoolItem, RejectReason, Source,
};
use platesmith_core::raster::NormBox;
use platesmith_core::render::{render_dataset, DatasetConfig};
use platesmith_core::Raster;
use proptest::prelude::*;

fn detection() -> impl Strategy<Value = Detection> {
    (0..NUM_CLASSES, 0.05f64..0.95, 0.3f64..0.7, 0.0f64..=1.0).prop_map(|(c, x, y, conf)| {
        Detection::new(
            c,
            NormBox {
                x_center: x,
                y_center: y,
                w: 0.08,
                h: 0.5,
            },
            conf,
        )
        .unwrap()
    })
}

proptest! {
    #[test]
    fn assembly_ignores_input_order(dets in proptest::collection::vec(detection(), 0..12), seed in any::<u64>()) {
        let mut shuffled = dets.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(assemble_string(&dets), assemble_string(&shuffled));
    }

    #[test]
    fn higher_threshold_accepts_subset(dets in proptest::collection::vec(detection(), 6..10)) {
        let grid = sweep_grid();
        for w in grid.windows(2) {
            if accept_pseudolabel(&dets, w[1]).accepted {
                prop_assert!(accept_pseudolabel(&dets, w[0]).accepted);
            }
        }
    }
}

fn pool(items: Vec<Raster>, tag: &str) -> Vec<PoolItem> {
    items
        .into_iter()
        .enumerate()
        .map(|(i, image)| PoolItem { id: format!("{tag}-{i}"), image })
        .collect()
}

#[test]
fn clean_pool_is_almost_fully_accepted() {
    let items = render_dataset(&DatasetConfig { count: 200, seed: 40, ..Default::default() }).unwrap();
    let truth: Vec<String> = items.iter().map(|i| i.spec.text()).collect();
    let mut labeled = Vec::new();
    let report = expansion_round(
        &mut labeled,
        &pool(items.into_iter().map(|i| i.raster).collect(), "clean"),
        0.8,
        1,
        &TemplateRecognizer::font(),
    )
    .unwrap();
    assert!(report.acceptance_rate >= 0.95, "{report:?}");
    for e in &labeled {
        assert_eq!(e.source, Source::Pseudolabel { round: 1 });
        let i: usize = e.id.trim_start_matches("clean-").parse().unwrap();
        assert_eq!(e.text, truth[i]);
    }
}

#[test]
fn noise_pool_is_rejected() {
    let images: Vec<Raster> = (0..50)
        .map(|k| augment(&Raster::gray(193, 72, 128), &AugmentParams::noise(80.0, k)))
        .collect();
    let mut labeled = Vec::new();
    let report = expansion_round(&mut labeled, &pool(images, "noise"), 0.8, 1, &TemplateRecognizer::font()).unwrap();
    assert_eq!(report.accepted, 0);
    assert!(labeled.is_empty());
    assert_eq!(report.rejected.values().sum::<usize>(), 50);
}

#[test]
fn round_preconditions() {
    let rec = TemplateRecognizer::font();
    let img = Raster::gray(193, 72, 255);
    let mut labeled = vec![LabeledExample::manual("a", img.clone(), "AA1234BC", Vec::new())];
    assert!(expansion_round(&mut labeled, &[], 0.8, 1, &rec).is_err());
    let dup = [PoolItem { id: "a".into(), image: img.clone() }];
    assert!(expansion_round(&mut labeled, &dup, 0.8, 1, &rec).is_err());
    let fresh = [PoolItem { id: "b".into(), image: img }];
    assert!(expansion_round(&mut labeled, &fresh, 1.0, 1, &rec).is_err());
    let report = expansion_round(&mut labeled, &fresh, 0.8, 1, &rec).unwrap();
    assert_eq!(report.rejected.get(&RejectReason::WrongCount), Some(&1));
    assert_eq!(labeled.len(), 1);
    assert!(labeled[0].accepted);
}

#[test]
fn suffix_outside_alphabet_cannot_come_from_detections() {
    // Every class letter is a valid suffix letter, so a well-formed reading
    // can fail on its prefix but never on its suffix.
    for c in "ABCEHIKMOPTXYZ".chars() {
        assert!(class_of_char(c).is_some());
    }
    let dets: Vec<Detection> = "KK1234BC"
        .chars()
        .enumerate()
        .map(|(i, c)| {
            let b = NormBox { x_center: 0.1 + 0.1 * i as f64, y_center: 0.5, w: 0.08, h: 0.5 };
            Detection::new(class_of_char(c).unwrap(), b, 0.9).unwrap()
        })
        .collect();
    assert_eq!(accept_pseudolabel(&dets, 0.5).reason, Some(RejectReason::InvalidPrefix));
}
