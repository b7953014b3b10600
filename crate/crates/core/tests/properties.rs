use proptest::prelude::*;
use smplgait::eval::{
    compute_metrics, embeddings_from_bytes, embeddings_to_bytes, query_metrics, similarity, EmbeddingRecord,
};
use smplgait::losses::triplet_loss;
use smplgait::manifest::Split;
use smplgait::model::{apply_spatial_transform, set_pool, FeatureMap, TransformVector};
use smplgait::optim::lr_at;
use smplgait::PartEmbedding;

fn map_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..3, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| {
        (
            Just(c),
            Just(h),
            Just(w),
            prop::collection::vec(-2.0..2.0f64, c * h * w),
            prop::collection::vec(-1.0..1.0f64, h * w),
        )
    })
}

/// `pad(F_c) (I + pad(G))` by the textbook triple loop.
fn naive_transform(c: usize, h: usize, w: usize, f: &[f64], g: &TransformVector) -> Vec<f64> {
    let s = h.max(w);
    let fp = |ch: usize, r: usize, k: usize| if r < h && k < w { f[(ch * h + r) * w + k] } else { 0.0 };
    let m = |k: usize, j: usize| {
        let gk = if k < w && j < h { g.matrix_entry(k, j) } else { 0.0 };
        gk + if k == j { 1.0 } else { 0.0 }
    };
    let mut out = vec![0.0; c * s * s];
    for ch in 0..c {
        for r in 0..s {
            for j in 0..s {
                out[(ch * s + r) * s + j] = (0..s).map(|k| fp(ch, r, k) * m(k, j)).sum();
            }
        }
    }
    out
}

fn embedding(parts: usize, dim: usize, values: Vec<f64>) -> PartEmbedding {
    PartEmbedding::new(parts, dim, values).unwrap()
}

proptest! {
    #[test]
    fn transform_matches_naive_product((c, h, w, f, g) in map_strategy()) {
        let map = FeatureMap::new(c, h, w, f.clone()).unwrap();
        let tv = TransformVector::new(h, w, g).unwrap();
        let got = apply_spatial_transform(&map, &tv).unwrap();
        let want = naive_transform(c, h, w, &f, &tv);
        for (a, b) in got.data.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn set_pool_is_elementwise_max(maps in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 6), 1..6)) {
        let fms: Vec<FeatureMap> = maps.iter().map(|m| FeatureMap::new(1, 2, 3, m.clone()).unwrap()).collect();
        let pooled = set_pool(&fms).unwrap();
        for i in 0..6 {
            let want = maps.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(pooled.data[i], want);
        }
        let mut rev = fms.clone();
        rev.reverse();
        prop_assert_eq!(set_pool(&rev).unwrap().data, pooled.data);
    }

    #[test]
    fn similarity_symmetric_and_scale_free(
        a in prop::collection::vec(-1.0..1.0f64, 6),
        b in prop::collection::vec(-1.0..1.0f64, 6),
        k in 0.1..10.0f64,
    ) {
        let (ea, eb) = (embedding(2, 3, a), embedding(2, 3, b));
        let s = similarity(&ea, &eb).unwrap();
        prop_assert!((s - similarity(&eb, &ea).unwrap()).abs() < 1e-15);
        prop_assert!((s - similarity(&ea.scaled(k), &eb).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn metrics_bounded(rankings in prop::collection::vec(prop::collection::vec(any::<bool>(), 1..20), 1..8)) {
        let m = compute_metrics(&rankings);
        prop_assert_eq!(m.evaluated + m.skipped, rankings.len());
        for v in [m.rank1, m.rank5, m.map, m.minp] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.rank1 <= m.rank5);
        for r in &rankings {
            if let Some((ap, inp)) = query_metrics(r) {
                prop_assert!(ap > 0.0 && ap <= 1.0 && inp > 0.0 && inp <= 1.0);
            }
        }
    }

    #[test]
    fn positives_first_is_perfect(pos in 1usize..6, neg in 0usize..10) {
        let rel: Vec<bool> = (0..pos + neg).map(|i| i < pos).collect();
        prop_assert_eq!(query_metrics(&rel), Some((1.0, 1.0)));
    }

    #[test]
    fn triplet_loss_nonnegative_and_margin_monotone(
        values in prop::collection::vec(-1.0..1.0f64, 4 * 6),
        margin in 0.0..1.0f64,
    ) {
        let emb: Vec<Vec<f64>> = values.chunks(6).map(<[f64]>::to_vec).collect();
        let labels = [0, 0, 1, 1];
        let (l, _, active) = triplet_loss(&emb, &labels, 1, 6, margin);
        let (l_more, _, active_more) = triplet_loss(&emb, &labels, 1, 6, margin + 0.5);
        prop_assert!(l >= 0.0);
        // the mean over active triplets can drop; the hinge sum cannot
        prop_assert!(active_more >= active);
        prop_assert!(l_more * active_more as f64 >= l * active as f64 - 1e-12);
    }

    #[test]
    fn lr_never_increases(e in 0usize..2000, gamma in 0.01..1.0f64) {
        let ms = [200, 600, 900];
        prop_assert!(lr_at(1e-3, e + 1, &ms, gamma) <= lr_at(1e-3, e, &ms, gamma));
    }

    #[test]
    fn embeddings_round_trip_exactly(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..4)) {
        let records: Vec<EmbeddingRecord> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| EmbeddingRecord {
                sequence_id: format!("seq{i}"),
                subject_id: i as u32,
                camera_id: 1,
                split: if i % 2 == 0 { Split::Query } else { Split::Gallery },
                embedding: embedding(1, 2, vec![v, -v]),
            })
            .collect();
        let back = embeddings_from_bytes(&embeddings_to_bytes(&records).unwrap()).unwrap();
        prop_assert_eq!(back, records);
    }
}
