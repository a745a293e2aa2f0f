//! Infinite q-products and the kernel factor functions built from them.
//!
//! Every product here has the shape `Π_{k ≥ k0} f_k` with `|log f_k| ≤ B·|q|^k`
//! once `B·|q|^k ≤ 1`, so the log-tail after `K` terms is bounded by
//! `B·|q|^K / (1 − |q|)`. Evaluation stops at the first `K` where that bound
//! drops below [`SeriesConfig::tol`]; if `max_terms` is reached first the
//! evaluation fails with [`Error::NonConvergent`] instead of truncating.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

/// Model parameter `q ∈ (−1, 1)` together with the support half-width
/// `L = 2/√(1−q)` and the cached value of `(q;q)_∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QParams {
    q: f64,
    half_width: f64,
    qq_inf: f64,
}

impl QParams {
    pub fn new(q: f64) -> Result<Self> {
        Self::with_config(q, &SeriesConfig::default())
    }

    pub fn with_config(q: f64, cfg: &SeriesConfig) -> Result<Self> {
        if !q.is_finite() || q <= -1.0 || q >= 1.0 {
            return Err(Error::Domain(format!(
                "q = {q} must lie in the open interval (-1, 1)"
            )));
        }
        let qq_inf = pochhammer_raw(q, q, cfg)?;
        Ok(Self {
            q,
            half_width: 2.0 / (1.0 - q).sqrt(),
            qq_inf,
        })
    }

    #[inline]
    pub fn q(&self) -> f64 {
        self.q
    }

    /// `L = 2/√(1−q)`; the state space is `[−L, L]`.
    #[inline]
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// `(q;q)_∞`.
    #[inline]
    pub fn qq_inf(&self) -> f64 {
        self.qq_inf
    }

    pub(crate) fn check_in_support(&self, what: &str, x: f64) -> Result<()> {
        if !x.is_finite() || x.abs() > self.half_width * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "{what} = {x} outside the support [-{L}, {L}]",
                L = self.half_width
            )));
        }
        Ok(())
    }
}

/// Truncation policy shared by all infinite products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesConfig {
    /// Absolute bound on the neglected log-tail.
    pub tol: f64,
    pub max_terms: usize,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_terms: 10_000,
        }
    }
}

impl SeriesConfig {
    pub fn new(tol: f64, max_terms: usize) -> Result<Self> {
        if !(tol > 0.0) || max_terms == 0 {
            return Err(Error::InvalidInput(format!(
                "series config needs tol > 0 and max_terms >= 1 (got {tol}, {max_terms})"
            )));
        }
        Ok(Self { tol, max_terms })
    }
}

/// Number of terms `K` (exclusive end index) after which the log-tail of a
/// product with per-term log bound `bound · |q|^k` is below `cfg.tol`.
pub(crate) fn terms_needed(
    what: &'static str,
    q_abs: f64,
    bound: f64,
    start: usize,
    cfg: &SeriesConfig,
) -> Result<usize> {
    let mut r = q_abs.powi(start as i32);
    let mut k = start;
    loop {
        let scaled = bound * r;
        let tail = scaled / (1.0 - q_abs);
        if scaled <= 1.0 && tail < cfg.tol {
            return Ok(k);
        }
        if k - start >= cfg.max_terms {
            return Err(Error::NonConvergent {
                what,
                max_terms: cfg.max_terms,
                tail_bound: tail,
                tol: cfg.tol,
            });
        }
        r *= q_abs;
        k += 1;
    }
}

/// Product accumulated as sign and log-magnitude, so hundreds of factors
/// neither overflow nor underflow.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct LogProduct {
    log: f64,
    negative: bool,
    zero: bool,
}

impl LogProduct {
    #[inline]
    pub fn push(&mut self, factor: f64) {
        if factor == 0.0 {
            self.zero = true;
        } else {
            if factor < 0.0 {
                self.negative = !self.negative;
            }
            self.log += factor.abs().ln();
        }
    }

    /// Pushes the factor `1 + t` without forming it first.
    #[inline]
    pub fn push_one_plus(&mut self, t: f64) {
        if t > -1.0 {
            self.log += t.ln_1p();
        } else {
            self.push(1.0 + t);
        }
    }

    #[inline]
    pub fn push_log(&mut self, log: f64) {
        self.log += log;
    }

    pub fn value(&self) -> f64 {
        if self.zero {
            0.0
        } else if self.negative {
            -self.log.exp()
        } else {
            self.log.exp()
        }
    }
}

fn pochhammer_raw(a: f64, q: f64, cfg: &SeriesConfig) -> Result<f64> {
    if a == 0.0 {
        return Ok(1.0);
    }
    let k_end = terms_needed("(a;q)_inf", q.abs(), 2.0 * a.abs(), 0, cfg)?;
    let mut prod = LogProduct::default();
    let mut qk = 1.0;
    for _ in 0..k_end {
        prod.push_one_plus(-a * qk);
        qk *= q;
    }
    Ok(prod.value())
}

/// `(a;q)_∞ = Π_{k≥0} (1 − a·q^k)`.
pub fn qpochhammer_inf(a: f64, qp: &QParams, cfg: &SeriesConfig) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::Domain(format!("non-finite argument a = {a}")));
    }
    pochhammer_raw(a, qp.q, cfg)
}

/// Limiting Poisson parameter
/// `α_q = (1−q)^{3/2} / (18π²) · Π_{k≥1} (1−q^k)⁷ / (1+q^k)⁴`.
///
/// Each factor is formed as a ratio before entering the product, which keeps
/// the alternating factors for `q < 0` from drifting apart.
pub fn alpha_q(qp: &QParams, cfg: &SeriesConfig) -> Result<f64> {
    let q = qp.q;
    let k_end = terms_needed("alpha_q", q.abs(), 22.0, 1, cfg)?;
    let mut prod = LogProduct::default();
    let mut qk = q;
    for _ in 1..k_end {
        prod.push_log(7.0 * (-qk).ln_1p() - 4.0 * qk.ln_1p());
        qk *= q;
    }
    Ok((1.0 - q).powf(1.5) / (18.0 * PI * PI) * prod.value())
}

/// `φ_{q,k}(δ,x,y) = (1−e^{−2δ}q^{2k})² − (1−q)e^{−δ}q^k(1+e^{−2δ}q^{2k})xy
/// + (1−q)e^{−2δ}q^{2k}(x²+y²)`, evaluated as written.
pub fn phi(qp: &QParams, k: u32, delta: f64, x: f64, y: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta = {delta} must be positive")));
    }
    qp.check_in_support("x", x)?;
    qp.check_in_support("y", y)?;
    let a = (-delta).exp() * qp.q.powi(k as i32);
    Ok(factor_quadratic(qp.q, a, x, y))
}

/// `ψ_{q,k}(y1,y2)`, the `δ ↓ 0` limit of `φ_{q,k}`.
pub fn psi(qp: &QParams, k: u32, y1: f64, y2: f64) -> Result<f64> {
    qp.check_in_support("y1", y1)?;
    qp.check_in_support("y2", y2)?;
    if k == 0 {
        let d = y1 - y2;
        return Ok((1.0 - qp.q) * d * d);
    }
    Ok(factor_quadratic(qp.q, qp.q.powi(k as i32), y1, y2))
}

/// `(1−a²)² − (1−q)a(1+a²)xy + (1−q)a²(x²+y²)`. Commutative in `x`, `y`.
#[inline]
fn factor_quadratic(q: f64, a: f64, x: f64, y: f64) -> f64 {
    let a2 = a * a;
    let one_minus = 1.0 - a2;
    one_minus * one_minus - (1.0 - q) * a * (1.0 + a2) * (x * y) + (1.0 - q) * a2 * (x * x + y * y)
}

/// `Ψ_q(y1,y2) = Π_{k≥0} 1/ψ_{q,k}(y1,y2)`.
pub fn psi_product(qp: &QParams, y1: f64, y2: f64, cfg: &SeriesConfig) -> Result<f64> {
    let head = psi(qp, 0, y1, y2)?;
    if head == 0.0 {
        return Err(Error::SingularInput(format!(
            "psi_0 vanishes on the diagonal y1 = y2 = {y1}"
        )));
    }
    let q = qp.q;
    let k_end = terms_needed("Psi_q", q.abs(), 38.0, 1, cfg)?;
    let mut prod = LogProduct::default();
    prod.push(1.0 / head);
    let mut qk = q;
    for _ in 1..k_end {
        prod.push(1.0 / factor_quadratic(q, qk, y1, y2));
        qk *= q;
    }
    Ok(prod.value())
}

/// `Π_{k≥0} (1+q^k)^{−4}`, the value of `Ψ_q` at the corner `(−L, L)`.
pub fn psi_corner(qp: &QParams, cfg: &SeriesConfig) -> Result<f64> {
    let q = qp.q;
    let k_end = terms_needed("Psi_q corner", q.abs(), 8.0, 1, cfg)?;
    let mut prod = LogProduct::default();
    prod.push(1.0 / 16.0);
    let mut qk = q;
    for _ in 1..k_end {
        prod.push_log(-4.0 * qk.ln_1p());
        qk *= q;
    }
    Ok(prod.value())
}

/// Upper bound on the kernel ratio `p_{0,t}(x,y)/p(y)` with `ρ = e^{−t}`:
/// `(ρ²;q)_∞ / (ρ;q)_∞⁴`.
pub fn kernel_ratio_upper_bound(qp: &QParams, rho: f64, cfg: &SeriesConfig) -> Result<f64> {
    let num = qpochhammer_inf(rho * rho, qp, cfg)?;
    let den = qpochhammer_inf(rho, qp, cfg)?;
    Ok(num / den.powi(4))
}

/// Lower constant `C(x, ρ, q)` for the kernel ratio, in the transcribed form
///
/// `(ρ²;q)_∞ / Π_k [(1+ρ²q^{2k})² + 2(1−q)(1+ρ²q^k)|xρq^{2k}| + (1−q)ρ²x²q^{2k}]`.
///
/// This form is not a valid lower bound for every `q`: for `q = 0.5` it
/// exceeds the ratio near `y = −sign(x)·L`. See [`mixing_lower_constant_exact`].
pub fn mixing_lower_constant(qp: &QParams, x: f64, rho: f64, cfg: &SeriesConfig) -> Result<f64> {
    qp.check_in_support("x", x)?;
    let q = qp.q;
    let num = qpochhammer_inf(rho * rho, qp, cfg)?;
    let k_end = terms_needed("C(x,rho,q)", q.abs(), 40.0, 0, cfg)?;
    let mut den = LogProduct::default();
    let r2 = rho * rho;
    let mut qk = 1.0;
    for _ in 0..k_end {
        let q2k = qk * qk;
        let f = (1.0 + r2 * q2k).powi(2)
            + 2.0 * (1.0 - q) * (1.0 + r2 * qk) * (x * rho * q2k).abs()
            + (1.0 - q) * r2 * x * x * q2k;
        den.push(f);
        qk *= q;
    }
    Ok(num / den.value())
}

/// Lower constant built from the exact maximum over `y` of each kernel factor:
///
/// `(ρ²;q)_∞ / Π_k [(1+a_k²)² + 2√(1−q)(1+a_k²)|a_k x| + (1−q)a_k²x²]`, `a_k = ρq^k`.
///
/// It agrees with [`mixing_lower_constant`] at `q = 0` and is a valid bound
/// for all `q`.
pub fn mixing_lower_constant_exact(
    qp: &QParams,
    x: f64,
    rho: f64,
    cfg: &SeriesConfig,
) -> Result<f64> {
    qp.check_in_support("x", x)?;
    let q = qp.q;
    let num = qpochhammer_inf(rho * rho, qp, cfg)?;
    let k_end = terms_needed("C*(x,rho,q)", q.abs(), 40.0, 0, cfg)?;
    let s = (1.0 - q).sqrt() * x.abs();
    let mut den = LogProduct::default();
    let mut qk = 1.0;
    for _ in 0..k_end {
        let a = rho * qk;
        let a2 = a * a;
        den.push((1.0 + a2).powi(2) + 2.0 * (1.0 + a2) * (a * s).abs() + a2 * s * s);
        qk *= q;
    }
    Ok(num / den.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> SeriesConfig {
        SeriesConfig::default()
    }

    #[test]
    fn rejects_q_outside_open_interval() {
        for q in [-1.0, 1.0, 1.5, f64::NAN] {
            assert!(matches!(QParams::new(q), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn half_width_identity() {
        for q in [-0.9, -0.3, 0.0, 0.4, 0.99] {
            let qp = QParams::new(q).unwrap();
            assert!((qp.half_width() * (1.0 - q).sqrt() - 2.0).abs() < 1e-15);
            let direct = qpochhammer_inf(q, &qp, &cfg()).unwrap();
            assert!((qp.qq_inf() - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn pochhammer_trivial_values() {
        let qp = QParams::new(0.7).unwrap();
        assert_eq!(qpochhammer_inf(0.0, &qp, &cfg()).unwrap(), 1.0);
        let q0 = QParams::new(0.0).unwrap();
        assert!((qpochhammer_inf(0.3, &q0, &cfg()).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn pochhammer_with_nonpositive_factor() {
        let qp = QParams::new(0.5).unwrap();
        // (2;0.5)_∞ has first factor −1, then 0 at k=1.
        assert_eq!(qpochhammer_inf(2.0, &qp, &cfg()).unwrap(), 0.0);
        let v = qpochhammer_inf(3.0, &qp, &cfg()).unwrap();
        let mut direct = 1.0;
        for k in 0..200 {
            direct *= 1.0 - 3.0 * 0.5f64.powi(k);
        }
        assert!((v - direct).abs() < 1e-12 * direct.abs());
    }

    #[test]
    fn non_convergent_when_cap_too_small() {
        let qp = QParams::new(0.99).unwrap();
        let tight = SeriesConfig::new(1e-12, 10).unwrap();
        assert!(matches!(
            qpochhammer_inf(0.5, &qp, &tight),
            Err(Error::NonConvergent { .. })
        ));
    }

    #[test]
    fn alpha_at_zero() {
        let qp = QParams::new(0.0).unwrap();
        let a = alpha_q(&qp, &cfg()).unwrap();
        assert!((a - 1.0 / (18.0 * PI * PI)).abs() < 1e-16);
    }

    #[test]
    fn alpha_positive_and_tolerance_stable() {
        let loose = SeriesConfig::new(1e-8, 10_000).unwrap();
        for q in [-0.95, -0.5, -0.1, 0.2, 0.5, 0.9, 0.97] {
            let qp = QParams::new(q).unwrap();
            let a = alpha_q(&qp, &cfg()).unwrap();
            let b = alpha_q(&qp, &loose).unwrap();
            assert!(a > 0.0 && a.is_finite());
            assert!((a - b).abs() < 1e-8, "q={q}: {a} vs {b}");
        }
    }

    #[test]
    fn phi_at_origin() {
        let qp = QParams::new(0.3).unwrap();
        let (k, d) = (2, 0.7);
        let v = phi(&qp, k, d, 0.0, 0.0).unwrap();
        let e = 1.0 - (-2.0 * d).exp() * 0.3f64.powi(4);
        assert!((v - e * e).abs() < 1e-15);
    }

    #[test]
    fn phi_corner_at_zero_q() {
        let qp = QParams::new(0.0).unwrap();
        let v = phi(&qp, 0, 1.0, 2.0, 2.0).unwrap();
        let e = (-1.0f64).exp();
        let expected = (1.0 - e * e).powi(2) - 4.0 * e * (1.0 + e * e) + 8.0 * e * e;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - (1.0 - e).powi(4)).abs() < 1e-15);
    }

    #[test]
    fn phi_grid_minimum_matches_corner_value() {
        let qp = QParams::new(0.5).unwrap();
        let l = qp.half_width();
        let n = 201;
        let mut min = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                let x = -l + 2.0 * l * i as f64 / (n - 1) as f64;
                let y = -l + 2.0 * l * j as f64 / (n - 1) as f64;
                min = min.min(phi(&qp, 1, 0.1, x, y).unwrap());
            }
        }
        let expected = (1.0 - (-0.1f64).exp() * 0.5).powi(4);
        assert!((min - expected).abs() < 1e-12, "{min} vs {expected}");
    }

    #[test]
    fn phi_rejects_out_of_support() {
        let qp = QParams::new(0.0).unwrap();
        assert!(matches!(phi(&qp, 0, 1.0, 2.5, 0.0), Err(Error::Domain(_))));
        assert!(matches!(psi(&qp, 1, 0.0, -2.1), Err(Error::Domain(_))));
    }

    #[test]
    fn psi_collapses_at_k_zero() {
        let qp = QParams::new(-0.4).unwrap();
        let v = psi(&qp, 0, 0.3, -1.1).unwrap();
        assert!((v - 1.4 * 1.4 * 1.4).abs() < 1e-14);
        // the general formula at k = 0 agrees
        let general = factor_quadratic(-0.4, 1.0, 0.3, -1.1);
        assert!((v - general).abs() < 1e-14);
    }

    #[test]
    fn psi_corner_is_fourth_power() {
        for q in [-0.6, 0.0, 0.5] {
            let qp = QParams::new(q).unwrap();
            let l = qp.half_width();
            for k in 0..6u32 {
                let v = psi(&qp, k, -l, l).unwrap();
                let e = (1.0 + q.powi(k as i32)).powi(4);
                assert!((v - e).abs() < 1e-13 * e, "q={q} k={k}");
            }
        }
    }

    #[test]
    fn phi_tends_to_psi() {
        let qp = QParams::new(0.5).unwrap();
        let (y1, y2) = (-1.3, 2.1);
        for k in [0u32, 1, 3] {
            let target = psi(&qp, k, y1, y2).unwrap();
            let mut prev = f64::INFINITY;
            for d in [1e-2, 1e-3, 1e-4] {
                let err = (phi(&qp, k, d, y1, y2).unwrap() - target).abs();
                assert!(err < 20.0 * d, "k={k} d={d} err={err}");
                assert!(err < prev);
                prev = err;
            }
        }
    }

    #[test]
    fn psi_product_values() {
        let q0 = QParams::new(0.0).unwrap();
        assert!((psi_product(&q0, -2.0, 2.0, &cfg()).unwrap() - 1.0 / 16.0).abs() < 1e-16);
        for q in [-0.5, 0.3, 0.8] {
            let qp = QParams::new(q).unwrap();
            let l = qp.half_width();
            let v = psi_product(&qp, -l, l, &cfg()).unwrap();
            let c = psi_corner(&qp, &cfg()).unwrap();
            assert!((v - c).abs() < 1e-11 * c, "q={q}: {v} vs {c}");
        }
        let qp = QParams::new(0.5).unwrap();
        assert!(matches!(
            psi_product(&qp, 0.0, 0.0, &cfg()),
            Err(Error::SingularInput(_))
        ));
    }

    #[test]
    fn lower_constants_agree_at_zero_q() {
        let qp = QParams::new(0.0).unwrap();
        for x in [-2.0, -0.7, 0.0, 1.5] {
            let a = mixing_lower_constant(&qp, x, 0.4, &cfg()).unwrap();
            let b = mixing_lower_constant_exact(&qp, x, 0.4, &cfg()).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn phi_and_psi_symmetric(q in -0.95f64..0.95, k in 0u32..6, d in 1e-3f64..5.0,
                                 sx in -1.0f64..1.0, sy in -1.0f64..1.0) {
            let qp = QParams::new(q).unwrap();
            let (x, y) = (sx * qp.half_width(), sy * qp.half_width());
            prop_assert_eq!(phi(&qp, k, d, x, y).unwrap(), phi(&qp, k, d, y, x).unwrap());
            prop_assert_eq!(psi(&qp, k, x, y).unwrap(), psi(&qp, k, y, x).unwrap());
        }

        #[test]
        fn phi_above_corner_floor(q in -0.95f64..0.95, k in 0u32..6, d in 1e-3f64..5.0,
                                  sx in -1.0f64..1.0, sy in -1.0f64..1.0) {
            let qp = QParams::new(q).unwrap();
            let (x, y) = (sx * qp.half_width(), sy * qp.half_width());
            let floor = (1.0 - (-d).exp() * q.abs().powi(k as i32)).powi(4);
            let v = phi(&qp, k, d, x, y).unwrap();
            prop_assert!(v >= floor * (1.0 - 1e-9) - 1e-15, "{} < {}", v, floor);
        }

        #[test]
        fn pochhammer_decreasing_in_a(q in 0.0f64..0.99, a in 0.0f64..0.98, da in 1e-3f64..0.02) {
            let qp = QParams::new(q).unwrap();
            let lo = qpochhammer_inf(a, &qp, &SeriesConfig::default()).unwrap();
            let hi = qpochhammer_inf(a + da, &qp, &SeriesConfig::default()).unwrap();
            prop_assert!(hi < lo);
        }
    }
}
