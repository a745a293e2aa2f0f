//! Adaptive Gauss–Kronrod quadrature, square-root edge substitution,
//! tensorized 2-D integration and bracketed monotone inversion.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::qseries::QParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 60,
        }
    }
}

impl QuadConfig {
    pub fn new(abs_tol: f64, rel_tol: f64, max_subdivisions: usize) -> Result<Self> {
        if !(abs_tol > 0.0) || !(rel_tol > 0.0) || max_subdivisions == 0 {
            return Err(Error::InvalidInput(format!(
                "quadrature tolerances must be positive and max_subdivisions >= 1 \
                 (got {abs_tol}, {rel_tol}, {max_subdivisions})"
            )));
        }
        Ok(Self {
            abs_tol,
            rel_tol,
            max_subdivisions,
        })
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadResult {
    pub value: f64,
    pub err_estimate: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Lower,
    Upper,
}

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21),
// digits as published.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_208_814_942,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

/// One application of the 21-point rule: `(kronrod value, error estimate)`.
#[allow(clippy::needless_range_loop)]
pub(crate) fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { at: x, value: v })
        }
    };

    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    let fc = eval(center)?;
    let mut res_g = 0.0;
    let mut res_k = fc * WGK[10];
    let mut res_abs = fc.abs() * WGK[10];
    for j in 0..5 {
        let jj = 2 * j + 1;
        let dx = half * XGK[jj];
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        fv1[jj] = f1;
        fv2[jj] = f2;
        res_g += WG[j] * (f1 + f2);
        res_k += WGK[jj] * (f1 + f2);
        res_abs += WGK[jj] * (f1.abs() + f2.abs());
    }
    for j in 0..5 {
        let jj = 2 * j;
        let dx = half * XGK[jj];
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        fv1[jj] = f1;
        fv2[jj] = f2;
        res_k += WGK[jj] * (f1 + f2);
        res_abs += WGK[jj] * (f1.abs() + f2.abs());
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let h = half.abs();
    let value = res_k * half;
    res_abs *= h;
    res_asc *= h;

    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok((value, err))
}

/// Kronrod value only; used for sub-panel integrals inside a resolved panel.
pub(crate) fn kronrod21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> f64 {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = f(center) * WGK[10];
    for j in 0..10 {
        let dx = half * XGK[j];
        acc += WGK[j] * (f(center - dx) + f(center + dx));
    }
    acc * half
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Panel {
    pub a: f64,
    pub b: f64,
    pub value: f64,
    pub err: f64,
}

#[derive(Debug, Clone, Copy)]
struct HeapPanel(Panel);

impl PartialEq for HeapPanel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapPanel {}
impl PartialOrd for HeapPanel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapPanel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .err
            .total_cmp(&other.0.err)
            .then_with(|| other.0.a.total_cmp(&self.0.a))
    }
}

/// Adaptive partition of `[points[0], points[last]]` whose panel integrals
/// meet the configured tolerance in sum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    /// Panels sorted by left endpoint.
    pub panels: Vec<Panel>,
    pub evaluations: usize,
}

impl Partition {
    pub fn value(&self) -> f64 {
        self.panels.iter().map(|p| p.value).sum()
    }

    pub fn err_estimate(&self) -> f64 {
        self.panels.iter().map(|p| p.err).sum()
    }
}

/// Builds an adaptive partition starting from the sorted breakpoints
/// `points` (first and last are the integration limits). The worst panel is
/// bisected until the summed error estimate meets the tolerance.
pub fn adaptive_partition<F: FnMut(f64) -> f64>(
    mut f: F,
    points: &[f64],
    cfg: &QuadConfig,
) -> Result<Partition> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("need at least two breakpoints".into()));
    }
    let mut heap = BinaryHeap::with_capacity(points.len() + cfg.max_subdivisions);
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut evaluations = 0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(a < b) {
            return Err(Error::InvalidInput(format!(
                "breakpoints must be strictly increasing ({a} >= {b})"
            )));
        }
        let (value, err) = gk21(&mut f, a, b)?;
        evaluations += 21;
        total += value;
        total_err += err;
        heap.push(HeapPanel(Panel { a, b, value, err }));
    }

    let mut splits = 0;
    while total_err > cfg.target(total) {
        let worst = heap.peek().copied().expect("non-empty heap").0;
        let mid = 0.5 * (worst.a + worst.b);
        if !(worst.a < mid && mid < worst.b) || splits >= cfg.max_subdivisions {
            return Err(Error::MaxSubdivisionsExceeded {
                limit: cfg.max_subdivisions,
                a: points[0],
                b: points[points.len() - 1],
                err_estimate: total_err,
            });
        }
        heap.pop();
        let (v1, e1) = gk21(&mut f, worst.a, mid)?;
        let (v2, e2) = gk21(&mut f, mid, worst.b)?;
        evaluations += 42;
        splits += 1;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.err;
        heap.push(HeapPanel(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            err: e1,
        }));
        heap.push(HeapPanel(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            err: e2,
        }));
    }

    let mut panels: Vec<Panel> = heap.into_iter().map(|h| h.0).collect();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    Ok(Partition {
        panels,
        evaluations,
    })
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidInput(format!(
            "integration interval [{a}, {b}] must satisfy a < b"
        )));
    }
    Ok(())
}

/// `∫_a^b f` by adaptive 21-point Gauss–Kronrod.
pub fn integrate_1d<F: FnMut(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    integrate_1d_points(f, a, b, &[], cfg)
}

/// As [`integrate_1d`] with extra interior breakpoints (points outside
/// `(a, b)` are ignored).
pub fn integrate_1d_points<F: FnMut(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    points: &[f64],
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    check_interval(a, b)?;
    let mut pts = Vec::with_capacity(points.len() + 2);
    pts.push(a);
    pts.extend(points.iter().copied().filter(|p| *p > a && *p < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let part = adaptive_partition(f, &pts, cfg)?;
    Ok(QuadResult {
        value: part.value(),
        err_estimate: part.err_estimate(),
        evaluations: part.evaluations,
    })
}

/// Integrates `f` over the margin `[−L, −L+width]` (or `[L−width, L]`)
/// through `y = ∓L ± u²`, which turns a `√(L ∓ y)` edge factor into a
/// smooth integrand in `u`.
pub fn integrate_edge<F: FnMut(f64) -> f64>(
    mut f: F,
    endpoint: Endpoint,
    width: f64,
    qp: &QParams,
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    let l = qp.half_width();
    if !(width > 0.0 && width < 2.0 * l) {
        return Err(Error::InvalidInput(format!(
            "margin width {width} must lie in (0, {})",
            2.0 * l
        )));
    }
    let top = width.sqrt();
    match endpoint {
        Endpoint::Lower => integrate_1d(|u| 2.0 * u * f(-l + u * u), 0.0, top, cfg),
        Endpoint::Upper => integrate_1d(|u| 2.0 * u * f(l - u * u), 0.0, top, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

/// Nested 1-D integration over `rect`: the inner `y` integral is taken at
/// each outer node with a tightened tolerance. The reported error adds the
/// outer estimate to `width · max inner error`.
pub fn integrate_2d<F: FnMut(f64, f64) -> f64>(
    mut f: F,
    rect: Rect,
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    check_interval(rect.x0, rect.x1)?;
    check_interval(rect.y0, rect.y1)?;
    let width = rect.x1 - rect.x0;
    let inner_cfg = QuadConfig {
        abs_tol: cfg.abs_tol / (4.0 * width),
        rel_tol: cfg.rel_tol / 4.0,
        max_subdivisions: cfg.max_subdivisions,
    };
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let mut inner_evals = 0usize;
    let mut inner_err = 0.0f64;
    let outer = integrate_1d(
        |x| match integrate_1d(|y| f(x, y), rect.y0, rect.y1, &inner_cfg) {
            Ok(r) => {
                inner_evals += r.evaluations;
                inner_err = inner_err.max(r.err_estimate);
                r.value
            }
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        rect.x0,
        rect.x1,
        cfg,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let outer = outer?;
    Ok(QuadResult {
        value: outer.value,
        err_estimate: outer.err_estimate + width * inner_err,
        evaluations: outer.evaluations + inner_evals,
    })
}

/// Solves `F(x) = target` for nondecreasing `F` on `[a, b]`.
pub fn invert_monotone<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    bracket: (f64, f64),
    cfg: &QuadConfig,
) -> Result<f64> {
    try_invert_monotone(|x| Ok(f(x)), target, bracket, cfg)
}

/// Fallible form of [`invert_monotone`]. Brent's method on `F(x) − target`;
/// stops once `|F(x) − target| ≤ cfg.abs_tol` or the bracket has shrunk to
/// rounding level.
pub fn try_invert_monotone<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    target: f64,
    bracket: (f64, f64),
    cfg: &QuadConfig,
) -> Result<f64> {
    let (mut a, mut b) = bracket;
    if !(a <= b) {
        return Err(Error::InvalidInput(format!("bracket [{a}, {b}] is empty")));
    }
    let fa_raw = f(a)?;
    let fb_raw = f(b)?;
    if !(fa_raw <= target && target <= fb_raw) {
        return Err(Error::BracketInvalid {
            target,
            lo: fa_raw,
            hi: fb_raw,
        });
    }
    let mut fa = fa_raw - target;
    let mut fb = fb_raw - target;
    if fa.abs() <= cfg.abs_tol && fa.abs() <= fb.abs() {
        return Ok(a);
    }
    if fb.abs() <= cfg.abs_tol {
        return Ok(b);
    }
    let x_floor = 1e-18 * (b - a).abs();
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..400 {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + x_floor;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb.abs() <= cfg.abs_tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b)? - target;
    }
    Ok(b)
}
