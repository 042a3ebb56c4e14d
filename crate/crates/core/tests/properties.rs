use proptest::prelude::*;

use tdid_core::adapter::{build_transform, estimate_stats};
use tdid_core::backend::mock::{MockWorld, MockWorldConfig};
use tdid_core::embedding::aggregate_prototype;
use tdid_core::enrollment::{enroll_image, Clock, EnrollmentConfig, ObjectPrototype, PrototypeStore, Provenance};
use tdid_core::inference::{detect_objects, verdict};
use tdid_core::{
    apply_augmentation, cosine_similarity, crop_with_margin, iou, l2_normalize, nms, AugmentationKind, BBox, Backend,
    Detection, Embedding, Image, ImageDims,
};

fn vector(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-10.0f32..10.0, dim).prop_filter("non-degenerate", |v| {
        v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>() > 1e-6
    })
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0f64..80.0, 0.0f64..80.0, 0.5f64..40.0, 0.5f64..40.0)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn image() -> impl Strategy<Value = Image> {
    (1u32..9, 1u32..9).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), (w * h * 3) as usize).prop_map(move |px| Image::new(w, h, px).unwrap())
    })
}

fn prov() -> Provenance {
    Provenance {
        image_sha256: "0".repeat(64),
        bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        augmentation: AugmentationKind::Identity,
        adapted: false,
        timestamp: "1970-01-01T00:00:00Z".into(),
    }
}

proptest! {
    #[test]
    fn normalized_vectors_have_unit_norm(v in vector(24)) {
        let u = l2_normalize(&v).unwrap();
        let n: f64 = u.as_slice().iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn normalization_ignores_positive_scale(v in vector(16), c in 1e-3f32..1e3) {
        let a = l2_normalize(&v).unwrap();
        let scaled: Vec<f32> = v.iter().map(|x| x * c).collect();
        let b = l2_normalize(&scaled).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn cosine_is_exactly_symmetric(a in vector(12), b in vector(12)) {
        prop_assert_eq!(cosine_similarity(&a, &b).unwrap(), cosine_similarity(&b, &a).unwrap());
    }

    #[test]
    fn aggregate_ignores_order(rows in prop::collection::vec(vector(8), 1..12), seed in any::<u64>()) {
        let mut shuffled = rows.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = tdid_core::seed::splitmix64(s);
            shuffled.swap(i, (s % (i as u64 + 1)) as usize);
        }
        match (aggregate_prototype(&rows), aggregate_prototype(&shuffled)) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    prop_assert!((x - y).abs() <= 1e-6);
                }
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn iou_symmetric_bounded_reflexive(a in bbox(), b in bbox()) {
        let x = iou(&a, &b);
        prop_assert_eq!(x, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn nms_keeps_a_sorted_non_overlapping_subset(
        boxes in prop::collection::vec((bbox(), 0.0f64..=1.0), 0..12),
        thr in 0.1f64..0.9,
    ) {
        let dets: Vec<Detection> = boxes.iter().map(|&(b, s)| Detection::new(b, 0, s).unwrap()).collect();
        let kept = nms(&dets, thr);
        for k in &kept {
            prop_assert!(dets.contains(k));
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(iou(&a.bbox, &b.bbox) <= thr);
                prop_assert!(a.score >= b.score);
            }
        }
    }

    #[test]
    fn crops_stay_inside_the_image(b in bbox(), margin in 0.0f64..50.0, w in 1u32..130, h in 1u32..130) {
        let dims = ImageDims::new(w, h).unwrap();
        if let Ok(c) = crop_with_margin(&b, margin, dims) {
            prop_assert!(c.x0() >= 0.0 && c.y0() >= 0.0);
            prop_assert!(c.x1() <= f64::from(w) && c.y1() <= f64::from(h));
            let r = c.to_pixel_rect(dims).unwrap();
            prop_assert!(r.x1 <= w && r.y1 <= h && r.width() > 0 && r.height() > 0);
        }
    }

    #[test]
    fn augmentation_identities(img in image()) {
        use AugmentationKind::*;
        let twice = apply_augmentation(&apply_augmentation(&img, HFlip), HFlip);
        prop_assert_eq!(&twice, &img);
        let undo = apply_augmentation(&apply_augmentation(&img, Rot90Ccw), Rot90Cw);
        prop_assert_eq!(&undo, &img);
        let mut r = img.clone();
        for _ in 0..4 {
            r = apply_augmentation(&r, Rot90Cw);
        }
        prop_assert_eq!(&r, &img);
    }

    #[test]
    fn augmentations_permute_pixels(img in image()) {
        let sorted = |i: &Image| {
            let mut p: Vec<[u8; 3]> = i.pixels().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            p.sort();
            p
        };
        for k in AugmentationKind::ALL {
            prop_assert_eq!(sorted(&apply_augmentation(&img, k)), sorted(&img));
        }
    }

    #[test]
    fn verdict_survives_monotone_rescaling(
        scores in prop::collection::vec((0usize..4, 0.0f64..=1.0), 1..16),
        power in 0.2f64..5.0,
    ) {
        let store = toy_store(4);
        let dets: Vec<Detection> = scores
            .iter()
            .map(|&(c, s)| Detection::new(BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), c, s).unwrap())
            .collect();
        let rescaled: Vec<Detection> = dets
            .iter()
            .map(|d| Detection::new(d.bbox, d.class_index, d.score.powf(power)).unwrap())
            .collect();
        prop_assert_eq!(verdict(&store, dets).predicted, verdict(&store, rescaled).predicted);
    }

    #[test]
    fn verdict_follows_objects_under_reordering(
        scores in prop::collection::vec(0.0f64..=1.0, 4),
        perm_seed in any::<u64>(),
    ) {
        let store = toy_store(4);
        let mut order: Vec<usize> = (0..4).collect();
        let mut s = perm_seed;
        for i in (1..4).rev() {
            s = tdid_core::seed::splitmix64(s);
            order.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let moved = store.reordered(&order).unwrap();
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let dets: Vec<Detection> = (0..4).map(|i| Detection::new(b, i, scores[i]).unwrap()).collect();
        // New position p holds old object order[p].
        let moved_dets: Vec<Detection> = (0..4).map(|p| Detection::new(b, p, scores[order[p]]).unwrap()).collect();
        let distinct = (0..4).all(|i| (0..i).all(|j| scores[i] != scores[j]));
        if distinct {
            prop_assert_eq!(verdict(&store, dets).predicted, verdict(&moved, moved_dets).predicted);
        }
    }
}

fn toy_store(n: usize) -> PrototypeStore {
    let mut s = PrototypeStore::new(n);
    for i in 0..n {
        let mut v = vec![0.0f32; n];
        v[i] = 1.0;
        s.insert(ObjectPrototype::new(format!("o{i}"), "x", vec![Embedding::new(v).unwrap()], vec![prov()]).unwrap())
            .unwrap();
    }
    s
}

fn small_world(sigma: f64, seed: u64) -> MockWorld {
    MockWorld::new(MockWorldConfig {
        num_classes: 6,
        dim: 32,
        noise_sigma: sigma,
        seed,
        ..MockWorldConfig::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mock_is_deterministic_and_scores_are_valid(
        class in 0usize..6,
        instance in any::<u64>(),
        sigma in 0.0f64..0.3,
        n_prompts in 1usize..6,
    ) {
        let w = small_world(sigma, 3);
        let img = w.render(class, instance).unwrap();
        prop_assert_eq!(&img, &w.render(class, instance).unwrap());
        prop_assert_eq!(w.encode_image(&img).unwrap(), w.encode_image(&img).unwrap());
        let prompts: Vec<_> = w.class_latents()[..n_prompts].to_vec();
        let dets = w.detect(&img, &prompts).unwrap();
        prop_assert_eq!(&dets, &w.detect(&img, &prompts).unwrap());
        for d in dets {
            prop_assert!((0.0..=1.0).contains(&d.score));
            prop_assert!(d.class_index < n_prompts);
        }
    }

    #[test]
    fn detections_index_into_the_store(classes in prop::collection::btree_set(0usize..6, 1..6), query in 0usize..6) {
        let w = small_world(0.2, 9);
        let mut store = PrototypeStore::new(32);
        for &c in &classes {
            let img = w.render(c, c as u64).unwrap();
            enroll_image(&mut store, &format!("c{c}"), None, &img, &w, &EnrollmentConfig::default(), None, &Clock::epoch())
                .unwrap();
        }
        let dets = detect_objects(&w.render(query, 77).unwrap(), &store, &w, 0.0, 0.5).unwrap();
        prop_assert!(dets.iter().all(|d| d.class_index < store.len()));
    }

    #[test]
    fn aggregate_tracks_raw_through_edits(ops in prop::collection::vec((0u8..3, 0usize..3, any::<u64>()), 1..10)) {
        let w = small_world(0.2, 1);
        let mut store = PrototypeStore::new(32);
        let cfg = EnrollmentConfig::default();
        for (op, obj, x) in ops {
            let id = format!("o{obj}");
            match op {
                0 | 1 => {
                    let img = w.render(obj, x).unwrap();
                    let no_aug = EnrollmentConfig { use_augmentations: op == 1, ..cfg.clone() };
                    let before = store.get(&id).map_or(0, |p| p.raw().len());
                    enroll_image(&mut store, &id, None, &img, &w, &no_aug, None, &Clock::epoch()).unwrap();
                    let added = store.get(&id).unwrap().raw().len() - before;
                    prop_assert_eq!(added, if op == 1 { 4 } else { 1 });
                }
                _ => {
                    if let Some(p) = store.get(&id) {
                        let len = p.raw().len();
                        let r = store.remove_example(&id, (x % len as u64) as usize);
                        prop_assert_eq!(r.is_err(), len == 1);
                    }
                }
            }
            for p in store.prototypes() {
                let want = aggregate_prototype(p.raw()).unwrap();
                for (a, b) in p.aggregated().as_slice().iter().zip(want.as_slice()) {
                    prop_assert!((a - b).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn transform_is_affine_after_normalization(seed in any::<u64>(), alpha in 0.0f64..1.0) {
        let w = small_world(0.3, seed);
        let stats_a = estimate_stats(&w.image_corpus(200, seed).unwrap()).unwrap();
        let stats_b = estimate_stats(&w.text_corpus(200, 0.1, seed).unwrap()).unwrap();
        let t = build_transform(&stats_a, &stats_b, 1e-5).unwrap();
        prop_assert_eq!(&t, &build_transform(&stats_a, &stats_b, 1e-5).unwrap());
        prop_assert!((&t.w_zca - t.w_zca.transpose()).amax() < 1e-12);
        prop_assert!((&t.w_color - t.w_color.transpose()).amax() < 1e-12);
        let batch = w.image_corpus(2, seed ^ 1).unwrap();
        let x = nalgebra::DMatrix::from_row_slice(1, 32, &batch.row(0).iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
        let y = nalgebra::DMatrix::from_row_slice(1, 32, &batch.row(1).iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
        let mix = &x * alpha + &y * (1.0 - alpha);
        let lhs = t.apply_normalized(&mix).unwrap();
        let rhs = t.apply_normalized(&x).unwrap() * alpha + t.apply_normalized(&y).unwrap() * (1.0 - alpha);
        prop_assert!((lhs - rhs).amax() < 1e-8);
    }
}
