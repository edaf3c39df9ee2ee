use proptest::prelude::*;

use timem_core::bench::percentile;
use timem_core::config::Config;
use timem_core::consolidation::DialogTurn;
use timem_core::engine::Engine;
use timem_core::indexing::min_max_normalize;
use timem_core::store::embedding_b64;
use timem_core::time::parse_ts;
use timem_core::tmt::Level;

#[derive(Debug, Clone)]
struct Step {
    gap_secs: i64,
    new_session: bool,
    flush_after: bool,
}

fn step() -> impl Strategy<Value = Step> {
    let gap = prop_oneof![
        4 => 1i64..600,
        2 => 600i64..86_400,
        1 => 86_400i64..40 * 86_400,
    ];
    (gap, prop::bool::weighted(0.2), prop::bool::weighted(0.05)).prop_map(|(gap_secs, new_session, flush_after)| Step {
        gap_secs,
        new_session,
        flush_after,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_turn_stream_keeps_the_tree_valid(steps in prop::collection::vec(step(), 1..80)) {
        let engine = Engine::mock(Config { embedding_dim: 64, ..Config::default() }).unwrap();
        let mut ts = parse_ts("2024-01-29T08:00:00Z").unwrap();
        let mut session = 0;
        let mut in_session = 0;
        for (i, s) in steps.iter().enumerate() {
            ts += chrono::Duration::seconds(s.gap_secs);
            if s.new_session || i == 0 {
                session += 1;
                in_session = 0;
            }
            in_session += 1;
            let turn = DialogTurn {
                turn_id: format!("s{session}:{in_session}"),
                session_id: format!("s{session}"),
                timestamp: ts,
                user_text: format!("Turn {i}: we talked about hiking and work."),
                assistant_text: "Noted.".into(),
            };
            engine.ingest_turn("p", &turn).unwrap();
            if s.flush_after {
                engine.flush("p", None).unwrap();
            }
        }
        engine.flush("p", None).unwrap();
        let report = engine.validate("p").unwrap();
        prop_assert!(report.is_clean(), "{:?}", report.violations);
        prop_assert_eq!(report.count(Level::Segment), steps.len());
        prop_assert!(report.count(Level::Profile) >= 1);
        prop_assert_eq!(engine.pending_work("p").unwrap(), 0);
    }

    #[test]
    fn normalized_scores_stay_in_unit_range(values in prop::collection::vec(0.0f64..50.0, 1..100)) {
        let out = min_max_normalize(&values);
        prop_assert_eq!(out.len(), values.len());
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        for (i, j) in (0..values.len()).flat_map(|i| (0..values.len()).map(move |j| (i, j))) {
            if values[i] < values[j] {
                prop_assert!(out[i] <= out[j]);
            }
        }
    }

    #[test]
    fn embeddings_survive_base64(values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 0..64)) {
        let back = embedding_b64::decode(&embedding_b64::encode(&values)).unwrap();
        prop_assert_eq!(back, values);
    }

    #[test]
    fn percentile_is_an_element(values in prop::collection::vec(-1e6f64..1e6, 1..50), p in 1.0f64..=100.0) {
        let got = percentile(&values, p).unwrap();
        prop_assert!(values.contains(&got));
        let below = values.iter().filter(|v| **v <= got).count() as f64;
        prop_assert!(below >= p / 100.0 * values.len() as f64 - 1e-9);
    }
}
