use approx::assert_relative_eq;
use chrono::NaiveDate;
use imbalance_core::calendar::day_of_year;
use imbalance_core::features::{
    apply_group_mask, assemble_features, periodic_bspline_basis, vwap_index, weekday_dummies, FeatureGroup,
    FeatureGroupMask, FeatureLayout, TradeBook, N_FEATURES, SPLINE_PERIOD,
};
use imbalance_core::panel::col;
use imbalance_core::synth::{generate_synthetic, SynthConfig};
use imbalance_core::{DeliveryIndex, Product, Timestamp, Transaction};
use proptest::prelude::*;

fn day(n: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 6, n).unwrap()
}

fn trade(product: Product, d: NaiveDate, minutes_before: i64, price: f64, volume: f64) -> Transaction {
    Transaction {
        product,
        delivery_day: d,
        exec_time: product.delivery_start(d).minus_minutes(minutes_before),
        price,
        volume,
    }
}

#[test]
fn single_trade_index() {
    let p = Product::QuarterHourly(40);
    let book = TradeBook::new(&[trade(p, day(2), 45, 50.0, 10.0)]);
    assert_eq!(vwap_index(&book, day(2), p, 30, 60), Some(50.0));
    assert_eq!(vwap_index(&book, day(2), p, 0, 30), None);
}

#[test]
fn volume_weighted_index() {
    let p = Product::QuarterHourly(40);
    let book = TradeBook::new(&[trade(p, day(2), 45, 50.0, 10.0), trade(p, day(2), 40, 60.0, 30.0)]);
    assert_eq!(vwap_index(&book, day(2), p, 30, 60), Some(57.5));
}

#[test]
fn window_is_closed_left_open_right() {
    let p = Product::Hourly(10);
    // trades exactly at start - 90 and start - 30
    let book = TradeBook::new(&[trade(p, day(3), 90, 40.0, 1.0), trade(p, day(3), 30, 80.0, 1.0)]);
    assert_eq!(vwap_index(&book, day(3), p, 30, 60), Some(40.0));
    assert_eq!(vwap_index(&book, day(3), p, 29, 1), Some(80.0));
    assert_eq!(vwap_index(&book, day(3), p, 91, 10), None);
}

#[test]
fn other_products_and_days_do_not_mix() {
    let p = Product::QuarterHourly(40);
    let book = TradeBook::new(&[
        trade(p, day(2), 45, 50.0, 1.0),
        trade(Product::QuarterHourly(41), day(2), 45, 99.0, 1.0),
        trade(p, day(3), 45, 77.0, 1.0),
    ]);
    assert_eq!(vwap_index(&book, day(2), p, 30, 60), Some(50.0));
}

// Cox-de Boor recursion on the knots j*h, folded onto the circle.
fn de_boor_periodic(t: f64) -> [f64; 6] {
    let h = SPLINE_PERIOD / 6.0;
    fn b(j: i64, k: u32, t: f64, h: f64) -> f64 {
        let tj = j as f64 * h;
        if k == 0 {
            return if t >= tj && t < tj + h { 1.0 } else { 0.0 };
        }
        let kf = k as f64;
        let left = (t - tj) / (kf * h) * b(j, k - 1, t, h);
        let right = (tj + (kf + 1.0) * h - t) / (kf * h) * b(j + 1, k - 1, t, h);
        left + right
    }
    let mut out = [0.0; 6];
    for j in -12..12i64 {
        out[j.rem_euclid(6) as usize] += b(j, 3, t, h);
    }
    out
}

#[test]
fn spline_matches_de_boor() {
    for t in [0.0, 1.0, 100.0, 182.5, 250.3, 364.9] {
        let ours = periodic_bspline_basis(t);
        let oracle = de_boor_periodic(t);
        for i in 0..6 {
            assert_relative_eq!(ours[i], oracle[i], epsilon = 1e-12);
        }
    }
}

#[test]
fn spline_at_day_100() {
    let b = periodic_bspline_basis(100.0);
    // t/h = 1.6438..., so bases 0 and 1 are active with u = 1.64 and 0.64
    let u: f64 = 100.0 / (365.0 / 6.0);
    assert_relative_eq!(b[1], (u - 1.0).powi(3) / 6.0, epsilon = 1e-12);
    assert_eq!(b.iter().filter(|v| **v > 0.0).count(), 4);
}

#[test]
fn weekday_examples() {
    // 2021-06-07 is a Monday
    assert_eq!(weekday_dummies(day(7)), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(weekday_dummies(day(13)), [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    assert_eq!(weekday_dummies(day(9))[2], 1.0);
}

#[test]
fn layout_has_unique_names() {
    let l = FeatureLayout::full();
    assert_eq!(l.len(), N_FEATURES);
    let mut names = l.names().to_vec();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 947);
    for n in ["DoW_1", "DoW_7", "Imb_lag4", "Imb_lag7", "Spline_6", "VWAP15_qh96", "dID5_55", "Solar_prev_qh96"] {
        assert!(l.position(n).is_some(), "{n}");
    }
}

fn market() -> imbalance_core::synth::SynthMarket {
    generate_synthetic(&SynthConfig { seed: 4, n_days: 40, txn_rate: 0.5, ..SynthConfig::default() }).unwrap()
}

#[test]
fn imbalance_lags_at_qh_10() {
    let m = market();
    let book = TradeBook::new(&m.transactions);
    let d = m.panel.day(10);
    let fv = assemble_features(&m.panel, &book, DeliveryIndex::new(d, 10).unwrap()).unwrap();
    for (lag, qh) in [(4, 6), (5, 5), (6, 4), (7, 3)] {
        let want = m.panel.get(col::IMB, DeliveryIndex::new(d, qh).unwrap()).unwrap();
        assert_eq!(fv.get(&format!("Imb_lag{lag}")).unwrap(), want);
    }
}

#[test]
fn imbalance_lags_cross_midnight() {
    let m = market();
    let book = TradeBook::new(&m.transactions);
    let d = m.panel.day(10);
    let fv = assemble_features(&m.panel, &book, DeliveryIndex::new(d, 2).unwrap()).unwrap();
    let want = m.panel.get(col::IMB, DeliveryIndex::new(m.panel.day(9), 91).unwrap()).unwrap();
    assert_eq!(fv.get("Imb_lag7").unwrap(), want);
}

#[test]
fn first_day_has_no_history() {
    let m = market();
    let book = TradeBook::new(&m.transactions);
    let r = assemble_features(&m.panel, &book, DeliveryIndex::new(m.panel.start(), 40).unwrap());
    assert!(matches!(r, Err(imbalance_core::Error::InsufficientHistory(_))));
}

#[test]
fn no_information_after_cutoff_is_used() {
    let m = market();
    let d = m.panel.day(20);
    let target = DeliveryIndex::new(d, 50).unwrap();
    let cutoff = target.cutoff();
    let base = assemble_features(&m.panel, &TradeBook::new(&m.transactions), target).unwrap();

    let mut panel = m.panel.clone();
    // settled values of the target and the three preceding quarter-hours
    for lag in 0..4 {
        panel.set(col::IMB, target.lagged(lag), 1e6).unwrap();
    }
    for r in 0..panel.n_rows() {
        let i = panel.index_of(r);
        panel.set(col::IP, i, -1e6).unwrap();
        if i > target {
            panel.set(col::IMB, i, 1e6).unwrap();
        }
    }
    let mut txns: Vec<Transaction> = m
        .transactions
        .iter()
        .map(|t| if t.exec_time >= cutoff { Transaction { price: t.price + 500.0, ..*t } } else { *t })
        .collect();
    for q in 1..=96u8 {
        let p = Product::QuarterHourly(q);
        let late = Transaction { product: p, delivery_day: d, exec_time: cutoff, price: 9999.0, volume: 50.0 };
        if late.validate().is_ok() {
            txns.push(late);
        }
    }
    txns.push(Transaction {
        product: Product::Hourly(13),
        delivery_day: d,
        exec_time: Timestamp(cutoff.0 + 60),
        price: -9999.0,
        volume: 5.0,
    });
    let poisoned = assemble_features(&panel, &TradeBook::new(&txns), target).unwrap();
    assert_eq!(base.values.len(), poisoned.values.len());
    for (i, (a, b)) in base.values.iter().zip(&poisoned.values).enumerate() {
        assert!(a == b || (a.is_nan() && b.is_nan()), "feature {} changed", base.names[i]);
    }
}

#[test]
fn mask_keeps_selected_groups() {
    let m = market();
    let book = TradeBook::new(&m.transactions);
    let l = FeatureLayout::full();
    let fv = assemble_features(&m.panel, &book, DeliveryIndex::new(m.panel.day(5), 1).unwrap()).unwrap();
    let sub = apply_group_mask(&fv, &l, &FeatureGroupMask::only(&[FeatureGroup::Splines, FeatureGroup::Weekday])).unwrap();
    assert_eq!(sub.len(), 13);
    assert_eq!(sub.names[0], "DoW_1");
    assert_eq!(sub.get("Spline_3"), fv.get("Spline_3"));
    let mut no_fund = FeatureGroupMask::all();
    no_fund.set(FeatureGroup::Fundamentals, false);
    no_fund.set(FeatureGroup::FundamentalsPrevDay, false);
    assert_eq!(apply_group_mask(&fv, &l, &no_fund).unwrap().len(), N_FEATURES - 768);
    assert!(apply_group_mask(&sub, &l, &FeatureGroupMask::all()).is_err());
}

#[test]
fn calendar_features_match_their_day() {
    let m = market();
    let book = TradeBook::new(&m.transactions);
    let d = m.panel.day(12);
    let fv = assemble_features(&m.panel, &book, DeliveryIndex::new(d, 77).unwrap()).unwrap();
    let basis = periodic_bspline_basis(day_of_year(d));
    for i in 0..6 {
        assert_eq!(fv.get(&format!("Spline_{}", i + 1)).unwrap(), basis[i]);
    }
    let dow = weekday_dummies(d);
    for i in 0..7 {
        assert_eq!(fv.get(&format!("DoW_{}", i + 1)).unwrap(), dow[i]);
    }
}

fn trades_strategy() -> impl Strategy<Value = Vec<(i64, f64, f64)>> {
    proptest::collection::vec((31i64..400, 10.0f64..120.0, 0.1f64..20.0), 1..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vwap_ignores_input_order(trades in trades_strategy(), rot in 0usize..30) {
        let p = Product::QuarterHourly(60);
        let mut txns: Vec<Transaction> = trades.iter().map(|(m, pr, v)| trade(p, day(4), *m, *pr, *v)).collect();
        let a = vwap_index(&TradeBook::new(&txns), day(4), p, 30, 400);
        let k = rot % txns.len();
        txns.rotate_left(k);
        txns.reverse();
        let b = vwap_index(&TradeBook::new(&txns), day(4), p, 30, 400);
        prop_assert!((a.unwrap() - b.unwrap()).abs() <= 1e-9 * a.unwrap().abs().max(1.0));
    }

    #[test]
    fn vwap_splits_into_subwindows(trades in trades_strategy(), split in 31i64..400) {
        let p = Product::Hourly(15);
        let txns: Vec<Transaction> = trades.iter().map(|(m, pr, v)| trade(p, day(4), *m, *pr, *v)).collect();
        let book = TradeBook::new(&txns);
        let start = p.delivery_start(day(4));
        let from = start.minus_minutes(400);
        let mid = start.minus_minutes(split);
        let to = start.minus_minutes(30);
        let vol = |a: Timestamp, b: Timestamp| -> f64 {
            txns.iter().filter(|t| t.exec_time >= a && t.exec_time < b).map(|t| t.volume).sum()
        };
        let whole = book.vwap_between(day(4), p, from, to).unwrap();
        let (v1, v2) = (vol(from, mid), vol(mid, to));
        let mut combined = 0.0;
        if v1 > 0.0 {
            combined += v1 * book.vwap_between(day(4), p, from, mid).unwrap();
        }
        if v2 > 0.0 {
            combined += v2 * book.vwap_between(day(4), p, mid, to).unwrap();
        }
        combined /= v1 + v2;
        prop_assert!((whole - combined).abs() <= 1e-9 * whole.abs().max(1.0));
    }

    #[test]
    fn spline_partition_and_period(t in -400.0f64..800.0) {
        let b = periodic_bspline_basis(t);
        let s: f64 = b.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(b.iter().all(|v| *v >= 0.0));
        let c = periodic_bspline_basis(t + SPLINE_PERIOD);
        for i in 0..6 {
            prop_assert!((b[i] - c[i]).abs() < 1e-9);
        }
    }
}
