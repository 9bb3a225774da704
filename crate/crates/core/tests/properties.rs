use std::collections::BTreeMap;

use chrono::{DateTime, FixedOffset, TimeZone};
use proptest::prelude::*;

use tracer_core::quality::{threshold_table, CategoryQuality, ResourceQuality};
use tracer_core::trace::{
    parse_trace, serialize_trace, OnMissing, Provenance, Selector, SelectorStrategy, Trace, TraceAction, Until,
    UrlPattern,
};

fn selector() -> impl Strategy<Value = Selector> {
    let token = "[a-z][a-z0-9_-]{0,12}";
    let expr = "[a-z][a-z0-9 \"'#./\\[\\]=-]{0,20}";
    prop_oneof![
        token.prop_map(|v| Selector::new(SelectorStrategy::ElementId, v)),
        token.prop_map(|v| Selector::new(SelectorStrategy::HtmlClass, v)),
        expr.prop_map(|v| Selector::new(SelectorStrategy::Css, v)),
        expr.prop_map(|v| Selector::new(SelectorStrategy::Xpath, v)),
    ]
}

fn action() -> impl Strategy<Value = TraceAction> {
    let until = prop_oneof![Just(Until::ElementAbsent), Just(Until::ElementDisabled), Just(Until::MaxOnly)];
    let kind = prop_oneof![
        selector().prop_map(TraceAction::click),
        (selector(), selector()).prop_map(|(s, l)| TraceAction::click_all(s, l)),
        (selector(), until, proptest::option::of(1u32..500)).prop_map(|(s, u, m)| {
            // A bare iteration bound must be stated.
            let m = if u == Until::MaxOnly { m.or(Some(1)) } else { m };
            TraceAction::repeat_click(s, u, m)
        }),
    ];
    (kind, 0u64..100_000, any::<bool>()).prop_map(|(a, w, skip)| {
        a.with_wait(w).with_on_missing(if skip { OnMissing::Skip } else { OnMissing::Fail })
    })
}

fn timestamp() -> impl Strategy<Value = DateTime<FixedOffset>> {
    (0i64..4_000_000_000, -720i32..=720).prop_map(|(secs, offset_min)| {
        FixedOffset::east_opt(offset_min * 60).unwrap().timestamp_opt(secs, 0).unwrap()
    })
}

fn trace() -> impl Strategy<Value = Trace> {
    (
        "[a-z][a-z0-9-]{0,15}",
        "https://[a-z]{1,8}\\.example/[a-z*/?]{0,20}",
        proptest::collection::vec((action(), proptest::option::of("[a-z]{1,6}")), 1..6),
        timestamp(),
        proptest::option::of("[A-Za-z ]{1,12}"),
    )
        .prop_map(|(id, pattern, actions, created_at, curator)| {
            let prov = Provenance {
                created_on: "https://example.org/page".into(),
                user_agent: "Mozilla/5.0 (test)".into(),
                created_at,
                curator,
            };
            actions
                .into_iter()
                .fold(Trace::new(id, UrlPattern::new(pattern), prov), |t, (a, c)| t.push(a, c.as_deref()))
        })
}

/// Reference glob matcher: plain backtracking over the definition.
fn naive_glob(p: &[char], t: &[char]) -> bool {
    match p {
        [] => t.is_empty(),
        ['*', '*', rest @ ..] => (0..=t.len()).any(|k| naive_glob(rest, &t[k..])),
        ['*', rest @ ..] => {
            let run = t.iter().take_while(|c| **c != '/').count();
            (0..=run).any(|k| naive_glob(rest, &t[k..]))
        }
        [c, rest @ ..] => t.first() == Some(c) && naive_glob(rest, &t[1..]),
    }
}

fn quality(expected: usize, captured: usize) -> ResourceQuality {
    let q = CategoryQuality::new(expected, captured);
    ResourceQuality {
        resource_url: "https://h.example/r".into(),
        categories: BTreeMap::from([("files".to_string(), q.clone())]),
        overall: q,
    }
}

proptest! {
    #[test]
    fn serialized_traces_parse_back_unchanged(t in trace()) {
        let bytes = serialize_trace(&t);
        let back = parse_trace(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(serialize_trace(&back), bytes);
    }

    #[test]
    fn pattern_matching_agrees_with_reference(
        pat in "[ab/*-]{0,10}",
        path in "[ab/-]{0,12}",
    ) {
        let base = "https://h.example/";
        let url = format!("{base}{path}");
        let got = UrlPattern::new(format!("{base}{pat}")).matches(&url).unwrap();
        let want = naive_glob(&pat.chars().collect::<Vec<_>>(), &path.chars().collect::<Vec<_>>());
        prop_assert_eq!(got, want, "pattern {:?} url {:?}", pat, url);
    }

    #[test]
    fn threshold_rows_are_monotone(pairs in proptest::collection::vec((0usize..50, 0usize..50), 1..40)) {
        let qs: Vec<_> = pairs.iter().map(|&(e, c)| quality(e, c.min(e))).collect();
        for row in threshold_table(&qs).unwrap() {
            let p: Vec<f64> = row.cells.iter().map(|c| c.percent).collect();
            prop_assert!(p[1..].windows(2).all(|w| w[0] >= w[1]), "{:?}", p);
            prop_assert!(p.iter().all(|v| (0.0..=100.0).contains(v)));
        }
    }
}
