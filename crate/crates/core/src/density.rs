//! Stationary marginal density and transition density of the
//! q-Ornstein–Uhlenbeck process, with CDFs, moments and semigroup checks.
//!
//! Internally every state `y ∈ [−L, L]` is represented by its angle
//! `φ ∈ [0, π]`, `y = −L cos φ`. In that coordinate each kernel factor splits
//! as
//!
//! `φ_{q,k}(t,x,y) = [(1−a)² + 4a sin²((φx+φy)/2)] · [(1−a)² + 4a sin²((φx−φy)/2)]`
//!
//! with `a = e^{−t}q^k` (cosines replace sines when `a < 0`). Both brackets
//! are sums of nonnegative terms, so the factor keeps full relative accuracy
//! at the corners and on the diagonal where the expanded quadratic cancels.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{
    adaptive_partition, integrate_1d_points, integrate_edge, kronrod21, try_invert_monotone,
    Endpoint, Panel, QuadConfig,
};
use crate::qseries::{terms_needed, LogProduct, QParams, SeriesConfig};

/// Products with more active terms than this are accumulated in log-domain.
const LOG_DOMAIN_TERMS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityPoint {
    pub x: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransitionQuery {
    t: f64,
    x: f64,
    y: f64,
}

impl TransitionQuery {
    pub fn new(qp: &QParams, t: f64, x: f64, y: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!(
                "elapsed time t = {t} must be positive"
            )));
        }
        qp.check_in_support("x", x)?;
        qp.check_in_support("y", y)?;
        Ok(Self { t, x, y })
    }

    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
}

/// Series and quadrature settings for operations that need both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NumericConfig {
    pub series: SeriesConfig,
    pub quad: QuadConfig,
}

impl Default for NumericConfig {
    fn default() -> Self {
        Self {
            series: SeriesConfig::default(),
            quad: QuadConfig {
                abs_tol: 1e-12,
                rel_tol: 1e-10,
                max_subdivisions: 400,
            },
        }
    }
}

/// `(sin(φ/2), cos(φ/2))` for the angle of a state.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HalfAngle {
    s: f64,
    c: f64,
}

impl HalfAngle {
    #[inline]
    pub fn from_state(x: f64, l: f64) -> Self {
        let x = x.clamp(-l, l);
        Self {
            s: ((l + x) / (2.0 * l)).sqrt(),
            c: ((l - x) / (2.0 * l)).sqrt(),
        }
    }

    #[inline]
    pub fn from_angle(phi: f64) -> Self {
        let (s, c) = (0.5 * phi).sin_cos();
        Self { s, c }
    }

    #[inline]
    fn sin_full(&self) -> f64 {
        2.0 * self.s * self.c
    }
}

/// Angle of a state: `acos(−x/L)`, clamped to `[0, π]`.
pub(crate) fn state_angle(x: f64, l: f64) -> f64 {
    (-x / l).clamp(-1.0, 1.0).acos()
}

/// One factor family `Π_k [g_k + 4|b_k| w_k²]`, where `w` is a sine or
/// cosine depending on the sign of `b_k` and `g_k = (1−|b_k|)²`.
#[derive(Debug, Clone)]
struct FactorTerms {
    positive: Vec<bool>,
    scaled: Vec<f64>,
    gap2: Vec<f64>,
    log_domain: bool,
}

impl FactorTerms {
    /// Terms for `|b_k| = e^{−shift}|q|^k`, `k ∈ start..end`.
    fn new(q: f64, shift: f64, start: usize, end: usize) -> Self {
        let mut positive = Vec::with_capacity(end - start);
        let mut scaled = Vec::with_capacity(end - start);
        let mut gap2 = Vec::with_capacity(end - start);
        let ln_q = q.abs().ln();
        for k in start..end {
            let log_abs = if k == 0 {
                -shift
            } else {
                -shift + k as f64 * ln_q
            };
            let abs = log_abs.exp();
            let gap = -log_abs.exp_m1();
            positive.push(k % 2 == 0 || q > 0.0);
            scaled.push(4.0 * abs);
            gap2.push(gap * gap);
        }
        let log_domain = positive.len() > LOG_DOMAIN_TERMS;
        Self {
            positive,
            scaled,
            gap2,
            log_domain,
        }
    }

    #[inline]
    fn product<F: Fn(bool) -> (f64, f64)>(&self, pair: F, paired: bool) -> f64 {
        let (sin_w, cos_w) = pair(true);
        let (sin_w2, cos_w2) = pair(false);
        if self.log_domain {
            let mut acc = LogProduct::default();
            for i in 0..self.scaled.len() {
                acc.push(self.term(i, sin_w, cos_w, sin_w2, cos_w2, paired));
            }
            acc.value()
        } else {
            let mut acc = 1.0;
            for i in 0..self.scaled.len() {
                acc *= self.term(i, sin_w, cos_w, sin_w2, cos_w2, paired);
            }
            acc
        }
    }

    #[inline(always)]
    fn term(&self, i: usize, s1: f64, c1: f64, s2: f64, c2: f64, paired: bool) -> f64 {
        let g = self.gap2[i];
        let m = self.scaled[i];
        let (w1, w2) = if self.positive[i] { (s1, s2) } else { (c1, c2) };
        let first = g + m * w1;
        if paired {
            first * (g + m * w2)
        } else {
            first
        }
    }
}

/// Stationary density `p(x)` with its `k ≥ 1` factors precomputed.
#[derive(Debug, Clone)]
pub struct MarginalDensity {
    qp: QParams,
    norm: f64,
    terms: FactorTerms,
}

impl MarginalDensity {
    pub fn new(qp: &QParams, cfg: &SeriesConfig) -> Result<Self> {
        let q = qp.q();
        let end = if q == 0.0 {
            1
        } else {
            terms_needed("marginal density", q.abs(), 14.0, 1, cfg)?
        };
        Ok(Self {
            qp: *qp,
            norm: (1.0 - q).sqrt() * qp.qq_inf() / (2.0 * PI),
            terms: FactorTerms::new(q, 0.0, 1, end),
        })
    }

    pub fn params(&self) -> &QParams {
        &self.qp
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let l = self.qp.half_width();
        if !(x.abs() < l) {
            return 0.0;
        }
        self.pdf_half(HalfAngle::from_state(x, l))
    }

    #[inline]
    pub(crate) fn pdf_half(&self, h: HalfAngle) -> f64 {
        let sin_full = h.sin_full();
        let sin2 = sin_full * sin_full;
        let cos_full = h.c * h.c - h.s * h.s;
        let cos2 = cos_full * cos_full;
        let prod = self.terms.product(|_| (sin2, cos2), false);
        self.norm * 2.0 * sin_full * prod
    }

    /// Largest density value, located on a grid and refined by golden section.
    pub fn sup(&self) -> f64 {
        let l = self.qp.half_width();
        let n = 2000;
        let mut best = (0.0, 0.0);
        for i in 0..=n {
            let x = -l + 2.0 * l * i as f64 / n as f64;
            let v = self.pdf(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        let h = 2.0 * l / n as f64;
        let (mut a, mut b) = ((best.0 - h).max(-l), (best.0 + h).min(l));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if self.pdf(c) > self.pdf(d) {
                b = d;
            } else {
                a = c;
            }
        }
        best.1.max(self.pdf(0.5 * (a + b)))
    }
}

/// Transition kernel for one elapsed time `t`: the ratio
/// `p_{0,t}(x,y)/p(y) = (e^{−2t};q)_∞ Π_k φ_{q,k}(t,x,y)^{−1}`.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    t: f64,
    pref: f64,
    terms: FactorTerms,
    marginal: MarginalDensity,
}

impl TransitionKernel {
    pub fn new(qp: &QParams, t: f64, cfg: &SeriesConfig) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!(
                "elapsed time t = {t} must be positive"
            )));
        }
        let q = qp.q();
        let end = if q == 0.0 {
            1
        } else {
            terms_needed("transition kernel", q.abs(), 38.0 * (-t).exp(), 0, cfg)?
        };
        Ok(Self {
            t,
            pref: exp_pochhammer(2.0 * t, q, cfg)?,
            terms: FactorTerms::new(q, t, 0, end),
            marginal: MarginalDensity::new(qp, cfg)?,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn params(&self) -> &QParams {
        &self.marginal.qp
    }

    pub fn marginal(&self) -> &MarginalDensity {
        &self.marginal
    }

    /// `p_{0,t}(x,y)/p(y)`.
    pub fn ratio(&self, x: f64, y: f64) -> f64 {
        let l = self.marginal.qp.half_width();
        self.ratio_half(HalfAngle::from_state(x, l), HalfAngle::from_state(y, l))
    }

    /// `p_{0,t}(x,y)`; zero outside the support in `y`.
    pub fn pdf(&self, x: f64, y: f64) -> f64 {
        let l = self.marginal.qp.half_width();
        if !(y.abs() < l) {
            return 0.0;
        }
        let hy = HalfAngle::from_state(y, l);
        self.ratio_half(HalfAngle::from_state(x, l), hy) * self.marginal.pdf_half(hy)
    }

    #[inline]
    pub(crate) fn ratio_half(&self, hx: HalfAngle, hy: HalfAngle) -> f64 {
        let sp = hx.s * hy.c + hx.c * hy.s;
        let sm = hx.s * hy.c - hx.c * hy.s;
        let cp = hx.c * hy.c - hx.s * hy.s;
        let cm = hx.c * hy.c + hx.s * hy.s;
        let prod = self.terms.product(
            |first| {
                if first {
                    (sp * sp, cp * cp)
                } else {
                    (sm * sm, cm * cm)
                }
            },
            true,
        );
        self.pref / prod
    }

    /// Density of the law of `φ(Y)` given `X = x`, in angle coordinates:
    /// `p_{0,t}(x, −L cos φ) · L sin φ`.
    #[inline]
    pub(crate) fn angle_density(&self, hx: HalfAngle, phi: f64) -> f64 {
        let hy = HalfAngle::from_angle(phi);
        let l = self.marginal.qp.half_width();
        self.ratio_half(hx, hy) * self.marginal.pdf_half(hy) * l * hy.sin_full()
    }

    /// Breakpoints in angle coordinates that resolve the peak of width
    /// `≈ t` around `φx` and its mirror images at the ends.
    pub(crate) fn breakpoints(&self, phi_x: f64) -> Vec<f64> {
        let mut pts = vec![0.0, PI, phi_x];
        let mut w = 0.5 * self.t.min(1.0);
        while w < PI {
            pts.extend([phi_x - w, phi_x + w, w, PI - w]);
            w *= 4.0;
        }
        pts.retain(|p| (0.0..=PI).contains(p));
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        pts
    }
}

/// `(e^{−s};q)_∞` with each factor `1 − e^{−s}q^k` formed without
/// cancellation for small `s`.
fn exp_pochhammer(s: f64, q: f64, cfg: &SeriesConfig) -> Result<f64> {
    let rho = (-s).exp();
    let end = if q == 0.0 {
        1
    } else {
        terms_needed("(e^-s;q)_inf", q.abs(), 2.0 * rho, 0, cfg)?
    };
    let ln_q = q.abs().ln();
    let mut acc = LogProduct::default();
    for k in 0..end {
        let log_abs = if k == 0 { -s } else { -s + k as f64 * ln_q };
        if k % 2 == 0 || q > 0.0 {
            acc.push(-log_abs.exp_m1());
        } else {
            acc.push_one_plus(log_abs.exp());
        }
    }
    Ok(acc.value())
}

/// `p^{(q)}(x)`; zero outside `(−L, L)`.
pub fn marginal_pdf(qp: &QParams, x: f64, cfg: &SeriesConfig) -> Result<f64> {
    Ok(MarginalDensity::new(qp, cfg)?.pdf(x))
}

pub fn marginal_point(qp: &QParams, x: f64, cfg: &SeriesConfig) -> Result<DensityPoint> {
    Ok(DensityPoint {
        x,
        value: marginal_pdf(qp, x, cfg)?,
    })
}

/// `p^{(q)}_{0,t}(x,y)`.
pub fn transition_pdf(qp: &QParams, query: &TransitionQuery, cfg: &SeriesConfig) -> Result<f64> {
    Ok(TransitionKernel::new(qp, query.t, cfg)?.pdf(query.x, query.y))
}

/// `∫_{−L}^{x} p`, computed from the nearer margin with the edge substitution.
pub fn marginal_cdf(qp: &QParams, x: f64, cfg: &NumericConfig) -> Result<f64> {
    let l = qp.half_width();
    if x <= -l {
        return Ok(0.0);
    }
    if x >= l {
        return Ok(1.0);
    }
    let density = MarginalDensity::new(qp, &cfg.series)?;
    let v = if x <= 0.0 {
        integrate_edge(|y| density.pdf(y), Endpoint::Lower, x + l, qp, &cfg.quad)?.value
    } else {
        1.0 - integrate_edge(|y| density.pdf(y), Endpoint::Upper, l - x, qp, &cfg.quad)?.value
    };
    Ok(v.clamp(0.0, 1.0))
}

/// `∫_{−L}^{y} p_{0,t}(x,z) dz`.
pub fn conditional_cdf(qp: &QParams, t: f64, x: f64, y: f64, cfg: &NumericConfig) -> Result<f64> {
    qp.check_in_support("x", x)?;
    let kernel = TransitionKernel::new(qp, t, &cfg.series)?;
    kernel_cdf(&kernel, x, y, &cfg.quad)
}

pub(crate) fn kernel_cdf(
    kernel: &TransitionKernel,
    x: f64,
    y: f64,
    quad: &QuadConfig,
) -> Result<f64> {
    let l = kernel.params().half_width();
    if y <= -l {
        return Ok(0.0);
    }
    let phi_y = if y >= l { PI } else { state_angle(y, l) };
    if phi_y <= 0.0 {
        return Ok(0.0);
    }
    let phi_x = state_angle(x, l);
    let hx = HalfAngle::from_state(x, l);
    let pts = kernel.breakpoints(phi_x);
    let r = integrate_1d_points(|phi| kernel.angle_density(hx, phi), 0.0, phi_y, &pts, quad)?;
    Ok(r.value)
}

/// `∫ x^r p(x) dx`.
pub fn moment(qp: &QParams, r: u32, cfg: &NumericConfig) -> Result<f64> {
    let density = MarginalDensity::new(qp, &cfg.series)?;
    let l = qp.half_width();
    let f = |y: f64| y.powi(r as i32) * density.pdf(y);
    let lower = integrate_edge(f, Endpoint::Lower, l, qp, &cfg.quad)?;
    let upper = integrate_edge(f, Endpoint::Upper, l, qp, &cfg.quad)?;
    Ok(lower.value + upper.value)
}

/// `|∫ p_{0,s}(x,z) p_{0,t}(z,y) dz − p_{0,s+t}(x,y)|`.
pub fn chapman_kolmogorov_residual(
    qp: &QParams,
    s: f64,
    t: f64,
    x: f64,
    y: f64,
    cfg: &NumericConfig,
) -> Result<f64> {
    TransitionQuery::new(qp, s, x, y)?;
    TransitionQuery::new(qp, t, x, y)?;
    let l = qp.half_width();
    let first = TransitionKernel::new(qp, s, &cfg.series)?;
    let second = TransitionKernel::new(qp, t, &cfg.series)?;
    let direct = TransitionKernel::new(qp, s + t, &cfg.series)?.pdf(x, y);
    let hx = HalfAngle::from_state(x, l);
    let hy = HalfAngle::from_state(y, l);
    let marginal = first.marginal();
    let mut pts = first.breakpoints(state_angle(x, l));
    pts.extend(second.breakpoints(state_angle(y, l)));
    let composed = integrate_1d_points(
        |phi| {
            let hz = HalfAngle::from_angle(phi);
            first.ratio_half(hx, hz)
                * marginal.pdf_half(hz)
                * second.ratio_half(hz, hy)
                * marginal.pdf_half(hy)
                * l
                * hz.sin_full()
        },
        0.0,
        PI,
        &pts,
        &cfg.quad,
    )?;
    Ok((composed.value - direct).abs())
}

/// Conditional law of `X_t` given `X_0 = x`, held as an adaptive partition
/// of the angle interval with cumulative panel masses. Supports CDF and
/// quantile evaluation without re-integrating from the boundary.
pub struct ConditionalLaw<'a> {
    kernel: &'a TransitionKernel,
    hx: HalfAngle,
    panels: Vec<Panel>,
    /// `cum_left[j] = Σ_{i<j} panel mass`.
    cum_left: Vec<f64>,
    /// `cum_right[j] = Σ_{i≥j} panel mass`.
    cum_right: Vec<f64>,
    total: f64,
}

impl<'a> ConditionalLaw<'a> {
    pub fn new(kernel: &'a TransitionKernel, x: f64, quad: &QuadConfig) -> Result<Self> {
        let l = kernel.params().half_width();
        let hx = HalfAngle::from_state(x, l);
        let pts = kernel.breakpoints(state_angle(x, l));
        let part = adaptive_partition(|phi| kernel.angle_density(hx, phi), &pts, quad)?;
        let panels = part.panels;
        let n = panels.len();
        let mut cum_left = vec![0.0; n + 1];
        for (j, p) in panels.iter().enumerate() {
            cum_left[j + 1] = cum_left[j] + p.value;
        }
        let mut cum_right = vec![0.0; n + 1];
        for j in (0..n).rev() {
            cum_right[j] = cum_right[j + 1] + panels[j].value;
        }
        let total = cum_left[n];
        Ok(Self {
            kernel,
            hx,
            panels,
            cum_left,
            cum_right,
            total,
        })
    }

    /// Unnormalized total mass (should be 1 up to quadrature error).
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn panel_count(&self) -> usize {
        self.panels.len()
    }

    fn density(&self, phi: f64) -> f64 {
        self.kernel.angle_density(self.hx, phi)
    }

    /// Normalized CDF at state `y`.
    pub fn cdf(&self, y: f64) -> f64 {
        let l = self.kernel.params().half_width();
        if y <= -l {
            return 0.0;
        }
        if y >= l {
            return 1.0;
        }
        let phi = state_angle(y, l);
        let j = self
            .panels
            .partition_point(|p| p.b <= phi)
            .min(self.panels.len() - 1);
        let p = self.panels[j];
        let mut f = |a| self.density(a);
        let inside = if phi > p.a {
            kronrod21(&mut f, p.a, phi)
        } else {
            0.0
        };
        ((self.cum_left[j] + inside) / self.total).clamp(0.0, 1.0)
    }

    /// Quantile at level `u`; `u_complement` must equal `1 − u` and is
    /// passed separately so upper-tail levels keep their precision.
    pub fn quantile(&self, u: f64, u_complement: f64) -> Result<f64> {
        let l = self.kernel.params().half_width();
        let phi = self.quantile_angle(u, u_complement)?;
        Ok((-l * phi.cos()).clamp(-l, l))
    }

    /// As [`ConditionalLaw::quantile`], returning the angle `φ ∈ [0, π]`.
    pub fn quantile_angle(&self, u: f64, u_complement: f64) -> Result<f64> {
        if u <= 0.0 {
            return Ok(0.0);
        }
        if u_complement <= 0.0 {
            return Ok(PI);
        }
        if u <= 0.5 {
            let target = u * self.total;
            let j = self.cum_left[1..]
                .partition_point(|c| *c < target)
                .min(self.panels.len() - 1);
            let p = self.panels[j];
            let base = self.cum_left[j];
            let cfg = QuadConfig {
                abs_tol: 1e-11 * target,
                ..QuadConfig::default()
            };
            try_invert_monotone(
                |a| {
                    let mut f = |z| self.density(z);
                    Ok(base
                        + if a > p.a {
                            kronrod21(&mut f, p.a, a)
                        } else {
                            0.0
                        })
                },
                target,
                (p.a, p.b),
                &cfg,
            )
            .or_else(|e| clamp_bracket(e, p.a, p.b))
        } else {
            let target = u_complement * self.total;
            // first panel j whose right-cumulative mass cum_right[j+1] drops to target
            let j = self.cum_right[1..]
                .partition_point(|c| *c > target)
                .min(self.panels.len() - 1);
            let p = self.panels[j];
            let base = self.cum_right[j + 1];
            let cfg = QuadConfig {
                abs_tol: 1e-11 * target,
                ..QuadConfig::default()
            };
            try_invert_monotone(
                |a| {
                    let mut f = |z| self.density(z);
                    Ok(-(base
                        + if a < p.b {
                            kronrod21(&mut f, a, p.b)
                        } else {
                            0.0
                        }))
                },
                -target,
                (p.a, p.b),
                &cfg,
            )
            .or_else(|e| clamp_bracket(e, p.a, p.b))
        }
    }
}

/// Rounding between the cumulative sums and the in-panel rule can put the
/// target a hair outside the panel image; the nearest endpoint is then the
/// answer.
fn clamp_bracket(e: Error, a: f64, b: f64) -> Result<f64> {
    match e {
        Error::BracketInvalid { target, lo, hi } => {
            let scale = lo.abs().max(hi.abs()).max(1e-300);
            if target < lo && lo - target <= 1e-9 * scale {
                Ok(a)
            } else if target > hi && target - hi <= 1e-9 * scale {
                Ok(b)
            } else {
                Err(Error::BracketInvalid { target, lo, hi })
            }
        }
        other => Err(other),
    }
}
