use imbalance_core::dists::Family;
use imbalance_core::rng::SeedKey;
use imbalance_core::tuning::{
    best_loss_trace, gamlss_hyper, probnn_hyper, record_for, reuse_records, sample_trial, select_best, trial_plan, tune,
    HyperValue, SearchSpace, TrialStatus, LR_MAX, LR_MIN, RATE_MAX, RATE_MIN,
};
use imbalance_core::Error;
use proptest::prelude::*;

fn lr(h: &imbalance_core::tuning::Hyperparams) -> f64 {
    h["learning_rate"].as_f64().unwrap()
}

#[test]
fn learning_rates_stay_in_open_range() {
    let space = SearchSpace::gamlss(Family::StudentT);
    for i in 0..10_000u64 {
        let h = sample_trial(&space, SeedKey::new(3).with_u64(i));
        let v = lr(&h);
        assert!(v > LR_MIN && v < LR_MAX, "{v}");
    }
}

#[test]
fn dropout_rate_only_when_enabled() {
    let space = SearchSpace::probnn();
    let (mut on, mut off) = (0, 0);
    for i in 0..2000u64 {
        let h = sample_trial(&space, SeedKey::new(8).with_u64(i));
        match h["dropout.on"].as_bool().unwrap() {
            true => {
                on += 1;
                let r = h["dropout.rate"].as_f64().unwrap();
                assert!(r > 0.0 && r < 1.0);
            }
            false => {
                off += 1;
                assert!(!h.contains_key("dropout.rate"));
            }
        }
        let layers = h["layers"].as_i64().unwrap();
        assert_eq!(h.contains_key("layer3.width"), layers == 3);
        for l in 1..=layers {
            let p = format!("layer{l}.kernel_l1");
            assert_eq!(h.contains_key(&p), h[&format!("{p}.on")] == HyperValue::Bool(true));
        }
        probnn_hyper(&h, Family::Normal).unwrap();
    }
    assert!(on > 0 && off > 0);
}

#[test]
fn rates_are_log_uniform() {
    let space = SearchSpace::gamlss(Family::Normal);
    let (mut n, mut below) = (0usize, 0usize);
    for i in 0..100_000u64 {
        let h = sample_trial(&space, SeedKey::new(17).with_u64(i));
        if let Some(v) = h.get("lambda.mu") {
            let v = v.as_f64().unwrap();
            assert!(v > RATE_MIN && v < RATE_MAX);
            n += 1;
            if v < 1e-2 {
                below += 1;
            }
        }
    }
    let want = (1e-2f64 / RATE_MIN).ln() / (RATE_MAX / RATE_MIN).ln();
    let got = below as f64 / n as f64;
    assert!((got - want).abs() < 0.02, "{got} vs {want}");
    assert!(n > 40_000 && n < 60_000);
}

#[test]
fn space_dimensions() {
    assert_eq!(SearchSpace::gamlss(Family::Normal).len(), 5);
    assert_eq!(SearchSpace::gamlss(Family::StudentT).len(), 7);
    assert!(SearchSpace::probnn().len() <= 42);
    assert_eq!(SearchSpace::learning_rate_only().len(), 1);
}

#[test]
fn gamlss_hyper_reads_flags() {
    let space = SearchSpace::gamlss(Family::StudentT);
    for i in 0..200u64 {
        let h = sample_trial(&space, SeedKey::new(1).with_u64(i));
        let g = gamlss_hyper(&h, Family::StudentT).unwrap();
        for (k, p) in ["mu", "sigma", "tau"].iter().enumerate() {
            let on = h[&format!("lambda.{p}.on")].as_bool().unwrap();
            assert_eq!(g.lambdas[k].is_some(), on);
        }
    }
}

#[test]
fn quadratic_toy_finds_the_minimum() {
    let space = SearchSpace::learning_rate_only();
    let res = tune(&space, |h, _| Ok((lr(h) - 0.01).powi(2)), 200, 42, &[]).unwrap();
    let best = lr(&res.best);
    assert!(best > 0.003 && best < 0.03, "{best}");
    assert_eq!(res.records.len(), 200);
}

#[test]
fn single_trial_is_best() {
    let space = SearchSpace::gamlss(Family::Normal);
    let res = tune(&space, |_, _| Ok(1.5), 1, 9, &[]).unwrap();
    assert_eq!(res.best_trial, 0);
    assert_eq!(res.best, res.records[0].params);
    assert!(tune(&space, |_, _| Ok(1.5), 0, 9, &[]).is_err());
}

#[test]
fn rerun_is_identical() {
    let space = SearchSpace::probnn();
    let obj = |h: &imbalance_core::tuning::Hyperparams, k: SeedKey| Ok(lr(h).ln().abs() + (k.value() % 7) as f64 * 1e-3);
    let a = tune(&space, obj, 30, 5, &[]).unwrap();
    let b = tune(&space, obj, 30, 5, &[]).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.best_trial, b.best_trial);
    let c = tune(&space, obj, 30, 6, &[]).unwrap();
    assert_ne!(a.records[0].params, c.records[0].params);
}

#[test]
fn failed_trials_are_never_selected() {
    let space = SearchSpace::learning_rate_only();
    let plan = trial_plan(&space, 6, 1);
    let records: Vec<_> = plan
        .iter()
        .map(|t| match t.trial_id {
            0 => record_for(t, Ok(f64::NAN), None),
            1 => record_for(t, Err(Error::Config("boom".into())), None),
            2 => record_for(t, Ok(3.0), None),
            3 => record_for(t, Ok(f64::NEG_INFINITY), None),
            _ => record_for(t, Ok(4.0), None),
        })
        .collect();
    assert!(matches!(records[0].status, TrialStatus::Failed(_)));
    assert!(!records[3].is_ok());
    assert_eq!(select_best(&records).unwrap(), 2);
    let failed: Vec<_> = plan.iter().map(|t| record_for(t, Err(Error::Config("x".into())), None)).collect();
    assert!(matches!(select_best(&failed), Err(Error::Tuning(_))));
}

#[test]
fn ties_go_to_lowest_trial() {
    let space = SearchSpace::learning_rate_only();
    let plan = trial_plan(&space, 4, 2);
    let mut records: Vec<_> = plan.iter().map(|t| record_for(t, Ok(1.0), None)).collect();
    records.reverse();
    assert_eq!(records[select_best(&records).unwrap()].trial_id, 0);
}

#[test]
fn reuse_skips_completed_trials() {
    let space = SearchSpace::gamlss(Family::Normal);
    let first = tune(&space, |h, _| Ok(lr(h)), 10, 3, &[]).unwrap();
    let mut calls = 0;
    let second = tune(
        &space,
        |h, _| {
            calls += 1;
            Ok(lr(h))
        },
        15,
        3,
        &first.records,
    )
    .unwrap();
    assert_eq!(calls, 5);
    assert_eq!(&second.records[..10], &first.records[..]);
    // records from another seed do not match the plan
    let plan = trial_plan(&space, 10, 4);
    assert!(reuse_records(&plan, &first.records, 4).is_err());
    let none = reuse_records(&plan, &[], 4).unwrap();
    assert!(none.iter().all(Option::is_none));
}

#[test]
fn records_serialize_round_trip() {
    let space = SearchSpace::probnn();
    let plan = trial_plan(&space, 3, 11);
    for (t, out) in plan.iter().zip([Ok(0.5), Err(Error::Config("bad".into())), Ok(2.0)]) {
        let r = record_for(t, out, Some(12));
        let s = serde_json::to_string(&r).unwrap();
        let back: imbalance_core::tuning::TrialRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn best_loss_trace_is_nonincreasing(losses in prop::collection::vec(prop::option::of(-10.0f64..10.0), 1..40), seed in 0u64..1000) {
        let plan = trial_plan(&SearchSpace::learning_rate_only(), losses.len(), seed);
        let records: Vec<_> = plan
            .iter()
            .zip(&losses)
            .map(|(t, l)| record_for(t, l.ok_or_else(|| Error::Config("failed".into())), None))
            .collect();
        let trace = best_loss_trace(&records);
        prop_assert_eq!(trace.len(), records.len());
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        if let Ok(i) = select_best(&records) {
            prop_assert_eq!(records[i].val_loss.unwrap(), *trace.last().unwrap());
        }
    }
}
