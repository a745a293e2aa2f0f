use proptest::prelude::*;
use qou::density::{marginal_cdf, MarginalDensity, NumericConfig};
use qou::experiments::jump_rate_integral;
use qou::numerics::{
    integrate_1d, integrate_2d, integrate_edge, invert_monotone, Endpoint, QuadConfig, Rect,
};
use qou::qseries::{psi_product, QParams, SeriesConfig};

fn quad() -> QuadConfig {
    QuadConfig::default()
}

#[test]
fn marginal_normalization_against_composite_rule() {
    let qp = QParams::new(0.5).unwrap();
    let p = MarginalDensity::new(&qp, &SeriesConfig::default()).unwrap();
    let l = qp.half_width();
    let cfg = QuadConfig::new(1e-12, 1e-12, 200).unwrap();
    let adaptive = integrate_edge(|y| p.pdf(y), Endpoint::Lower, l, &qp, &cfg)
        .unwrap()
        .value
        + integrate_edge(|y| p.pdf(y), Endpoint::Upper, l, &qp, &cfg)
            .unwrap()
            .value;
    assert!((adaptive - 1.0).abs() < 1e-10, "{adaptive}");

    // composite midpoint rule with 10^6 panels on y = −L cos θ, θ ∈ [0, π]
    let panels = 1_000_000;
    let h = std::f64::consts::PI / panels as f64;
    let composite: f64 = (0..panels)
        .map(|i| {
            let th = (i as f64 + 0.5) * h;
            p.pdf(-l * th.cos()) * l * th.sin()
        })
        .sum::<f64>()
        * h;
    assert!(
        (composite - adaptive).abs() < 1e-10,
        "{composite} vs {adaptive}"
    );
}

#[test]
fn edge_substitution_agrees_with_plain_quadrature() {
    let q0 = QParams::new(0.0).unwrap();
    let p0 = MarginalDensity::new(&q0, &SeriesConfig::default()).unwrap();
    let cfg = QuadConfig::new(1e-13, 1e-11, 400).unwrap();
    let edge = integrate_edge(|y| p0.pdf(y), Endpoint::Lower, 0.1, &q0, &cfg).unwrap();
    let plain = integrate_1d(|y| p0.pdf(y), -2.0, -1.9, &cfg).unwrap();
    assert!((edge.value - plain.value).abs() <= edge.err_estimate + plain.err_estimate + 1e-12);

    let qh = QParams::new(0.5).unwrap();
    let ph = MarginalDensity::new(&qh, &SeriesConfig::default()).unwrap();
    let m = integrate_edge(|y| ph.pdf(y), Endpoint::Upper, 0.05, &qh, &quad())
        .unwrap()
        .value;
    assert!(m > 0.0 && m < 0.05 * ph.sup());
}

#[test]
fn corner_integral_matches_iterated_quadrature() {
    // q = 0: Ψ = 1/(y₁−y₂)², p the semicircle
    let qp = QParams::new(0.0).unwrap();
    let eps = 0.1;
    let cfg = NumericConfig::default();
    let f = jump_rate_integral(&qp, eps, &cfg).unwrap();

    let semi = |y: f64| (4.0 - y * y).max(0.0).sqrt() / (2.0 * std::f64::consts::PI);
    let tight = QuadConfig::new(1e-15, 1e-12, 2000).unwrap();
    let outer = integrate_1d(
        |y1| {
            integrate_1d(
                |y2| semi(y1) * semi(y2) / (y1 - y2).powi(2),
                2.0 - eps,
                2.0,
                &tight,
            )
            .unwrap()
            .value
        },
        -2.0,
        -2.0 + eps,
        &tight,
    )
    .unwrap();
    let iterated = 2.0 * outer.value;
    assert!(
        (f.value - iterated).abs() < 1e-8 * iterated,
        "{} vs {iterated}",
        f.value
    );

    // the same box through the generic 2-D routine in original coordinates
    let generic = integrate_2d(
        |y1, y2| semi(y1) * semi(y2) * psi_product(&qp, y1, y2, &SeriesConfig::default()).unwrap(),
        Rect {
            x0: -2.0,
            x1: -2.0 + eps,
            y0: 2.0 - eps,
            y1: 2.0,
        },
        &tight,
    )
    .unwrap();
    assert!((2.0 * generic.value - iterated).abs() < 1e-8 * iterated);
}

#[test]
fn two_dimensional_symmetry() {
    let r = integrate_2d(
        |x, y| x * y,
        Rect {
            x0: -1.0,
            x1: 1.0,
            y0: -1.0,
            y1: 1.0,
        },
        &quad(),
    )
    .unwrap();
    assert!(r.value.abs() < 1e-14);
    let one = integrate_2d(
        |_, _| 1.0,
        Rect {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
        },
        &quad(),
    )
    .unwrap();
    assert!((one.value - 1.0).abs() < 1e-14);
}

#[test]
fn median_of_semicircle() {
    let qp = QParams::new(0.0).unwrap();
    let cfg = NumericConfig::default();
    let m = invert_monotone(
        |x| marginal_cdf(&qp, x, &cfg).unwrap(),
        0.5,
        (-2.0, 2.0),
        &quad(),
    )
    .unwrap();
    assert!(m.abs() < 1e-9, "{m}");
    let cube = invert_monotone(|x| x * x * x, 0.125, (0.0, 1.0), &quad()).unwrap();
    assert!((cube - 0.5).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn inversion_recovers_target(a in 0.2f64..4.0, b in -1.0f64..1.0, k in 1u32..6, t in 0.01f64..0.99) {
        // F(x) = a·x^k + b·x restricted to monotone cases on [0, 1]
        let b = b.abs();
        let f = |x: f64| a * x.powi(k as i32) + b * x;
        let target = t * f(1.0);
        let cfg = QuadConfig::new(1e-12, 1e-10, 60).unwrap();
        let x = invert_monotone(f, target, (0.0, 1.0), &cfg).unwrap();
        prop_assert!((f(x) - target).abs() <= 1e-12 + 1e-14 * target.abs());
    }

    #[test]
    fn linearity(c1 in -2.0f64..2.0, c2 in -2.0f64..2.0, w in 0.5f64..3.0, s in 0.1f64..2.0) {
        let f = |x: f64| (w * x).sin();
        let g = |x: f64| (-s * x * x).exp();
        let cfg = quad();
        let rf = integrate_1d(f, 0.0, 2.0, &cfg).unwrap();
        let rg = integrate_1d(g, 0.0, 2.0, &cfg).unwrap();
        let rh = integrate_1d(|x| c1 * f(x) + c2 * g(x), 0.0, 2.0, &cfg).unwrap();
        let slack = c1.abs() * rf.err_estimate + c2.abs() * rg.err_estimate + rh.err_estimate + 1e-14;
        prop_assert!((rh.value - c1 * rf.value - c2 * rg.value).abs() <= slack);
    }
}
