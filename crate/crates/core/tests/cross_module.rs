use randgame::density2::{bounds_e2d, e2d, p_max_bound, stable_e2d_interval};
use randgame::kostlan::{e_nd, e_nd_integrated};
use randgame::quad::QuadConfig;

#[test]
fn trend_in_strategy_count() {
    let q = QuadConfig::default();
    let row = |d: usize| -> Vec<f64> { (2..=4).map(|n| e_nd(n, d, &q).unwrap().value).collect() };
    for d in [2, 3, 4] {
        let r = row(d);
        assert!(r[0] > r[1] && r[1] > r[2], "d={d}: {r:?}");
    }
    for d in [5, 7] {
        let r = row(d);
        assert!(r[0] < r[1] && r[1] < r[2], "d={d}: {r:?}");
    }
}

#[test]
fn quadrature_routes_agree_for_two_strategies() {
    let q = QuadConfig::default();
    for d in 2..=10 {
        let a = e2d(d, &q).unwrap().value;
        let b = e_nd_integrated(2, d, &q).unwrap().value;
        assert!((a - b).abs() < 1e-5, "d={d}: {a} vs {b}");
    }
}

#[test]
fn bounds_grow_and_probability_bound_shrinks() {
    let lowers: Vec<f64> = (2..=200).map(|d| bounds_e2d(d).0).collect();
    assert!(lowers.windows(2).all(|w| w[1] > w[0]));
    let p: Vec<f64> = (10..=200).map(|d| p_max_bound(d, d - 1).unwrap()).collect();
    assert!(p.windows(2).all(|w| w[1] < w[0]));
    assert!(*p.last().unwrap() < 0.5);
    for d in 2..=100 {
        let (lo, hi) = bounds_e2d(d);
        assert_eq!(stable_e2d_interval(d), (lo / 2.0, hi / 2.0));
    }
}

#[test]
fn stable_interval_contains_half_the_mean() {
    let q = QuadConfig::default();
    for d in [2, 3, 8, 40] {
        let half = e2d(d, &q).unwrap().value / 2.0;
        let (lo, hi) = stable_e2d_interval(d);
        assert!(lo <= half && half <= hi, "d={d}");
    }
}
