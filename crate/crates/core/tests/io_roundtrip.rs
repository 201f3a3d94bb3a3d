use platesmith_core::grammar::NUM_CLASSES;
use platesmith_core::io::{
    decode_image, decode_pnm, encode_pnm, encode_png, format_annotation, parse_annotation, read_annotation,
    read_image, write_annotation, write_image, write_rendered_dataset, Label, Manifest,
};
use platesmith_core::raster::NormBox;
use platesmith_core::render::{render_dataset, DatasetConfig};
use platesmith_core::Raster;
use proptest::prelude::*;

fn label() -> impl Strategy<Value = Label> {
    (0..NUM_CLASSES, 1u32..=1_000_000, 1u32..=1_000_000)
        .prop_flat_map(|(c, w, h)| {
            (
                Just(c),
                w.div_ceil(2)..=1_000_000 - w / 2,
                h.div_ceil(2)..=1_000_000 - h / 2,
                Just(w),
                Just(h),
            )
        })
        .prop_map(|(class_id, x, y, w, h)| Label {
            class_id,
            bbox: NormBox {
                x_center: x as f64 / 1e6,
                y_center: y as f64 / 1e6,
                w: w as f64 / 1e6,
                h: h as f64 / 1e6,
            },
        })
}

fn raster() -> impl Strategy<Value = Raster> {
    (1usize..40, 1usize..40, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
        proptest::collection::vec(any::<u8>(), w * h * c).prop_map(move |d| Raster::new(w, h, c, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn yolo_lines_round_trip(labels in proptest::collection::vec(label(), 0..12)) {
        let text = format_annotation(&labels);
        let back = parse_annotation(&text, "prop").unwrap();
        prop_assert_eq!(&back, &labels);
        prop_assert_eq!(format_annotation(&back), text);
    }

    #[test]
    fn pnm_round_trip(img in raster()) {
        let bytes = encode_pnm(&img);
        prop_assert_eq!(decode_pnm(&bytes).unwrap(), img);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn png_round_trip(img in raster()) {
        prop_assert_eq!(decode_image(&encode_png(&img).unwrap()).unwrap(), img);
    }
}

#[test]
fn rendered_plates_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let items = render_dataset(&DatasetConfig { count: 5, seed: 3, ..Default::default() }).unwrap();
    for (i, item) in items.iter().enumerate() {
        assert_eq!((item.raster.width(), item.raster.height()), (193, 72));
        for ext in ["ppm", "png"] {
            let p = dir.path().join(format!("{i}.{ext}"));
            write_image(&p, &item.raster).unwrap();
            assert_eq!(read_image(&p).unwrap(), item.raster);
        }
        let labels: Vec<Label> = item
            .boxes
            .iter()
            .enumerate()
            .map(|(k, b)| Label { class_id: k, bbox: *b })
            .collect();
        let p = dir.path().join(format!("{i}.txt"));
        write_annotation(&p, &labels).unwrap();
        let back = read_annotation(&p).unwrap();
        for (a, b) in back.iter().zip(&labels) {
            assert_eq!(a.class_id, b.class_id);
            assert!((a.bbox.x_center - b.bbox.x_center).abs() <= 5e-7);
            assert!((a.bbox.w - b.bbox.w).abs() <= 5e-7);
        }
    }
}

#[test]
fn dataset_manifest_validates_and_detects_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let items = render_dataset(&DatasetConfig { count: 4, seed: 9, ..Default::default() }).unwrap();
    let written = write_rendered_dataset(dir.path(), "demo", 9, &items, 1).unwrap();
    let loaded = Manifest::load(dir.path()).unwrap();
    assert_eq!(loaded, written);
    loaded.validate(dir.path()).unwrap();
    assert_eq!(loaded.splits["val"].len(), 1);
    assert_eq!(loaded.splits["train"].len(), 3);
    std::fs::remove_file(dir.path().join("labels/000002.txt")).unwrap();
    assert!(loaded.validate(dir.path()).is_err());
}
