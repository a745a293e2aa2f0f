//! Boundary-to-boundary big jumps on dyadic paths: event detection, counts
//! per unit interval and the per-interval indicators.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::qseries::QParams;
use crate::sampler::PathGrid;

/// Margin width `ε` and the half-open unit-time window `(a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpSpec {
    epsilon: f64,
    half_width: f64,
    window: (u64, u64),
}

impl JumpSpec {
    pub fn new(qp: &QParams, epsilon: f64, a: u64, b: u64) -> Result<Self> {
        let l = qp.half_width();
        if !(epsilon > 0.0 && epsilon < l) {
            return Err(Error::InvalidInput(format!(
                "margin width epsilon = {epsilon} must lie in (0, L) = (0, {l})"
            )));
        }
        if a >= b {
            return Err(Error::InvalidInput(format!("window ({a}, {b}] is empty")));
        }
        Ok(Self {
            epsilon,
            half_width: l,
            window: (a, b),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn window(&self) -> (u64, u64) {
        self.window
    }

    /// `y < −L + ε`.
    #[inline]
    pub fn in_lower(&self, y: f64) -> bool {
        y < -self.half_width + self.epsilon
    }

    /// `y > L − ε`.
    #[inline]
    pub fn in_upper(&self, y: f64) -> bool {
        y > self.half_width - self.epsilon
    }

    fn step_range(&self, n: u32, horizon: u64) -> Result<(u64, u64)> {
        let (a, b) = self.window;
        if b > horizon {
            return Err(Error::WindowOutOfRange { a, b, horizon });
        }
        Ok((a * (1u64 << n) + 1, b * (1u64 << n)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpEvent {
    /// Crossing happens between grid times `(i−1)/2^n` and `i/2^n`.
    pub step_index: u64,
    pub y_from: f64,
    pub y_to: f64,
}

/// Counts `N((k−1, k], ε)` for the unit intervals of the window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpCount {
    pub epsilon: f64,
    pub n: u32,
    pub window: [u64; 2],
    #[serde(rename = "per_interval")]
    pub per_unit_interval: Vec<u64>,
    pub total: u64,
}

/// Every step in the window that crosses from the lower to the upper margin,
/// in increasing order.
pub fn detect_jumps(path: &PathGrid, spec: &JumpSpec) -> Result<Vec<JumpEvent>> {
    let (first, last) = spec.step_range(path.n(), path.horizon())?;
    let v = path.values();
    let mut events = Vec::new();
    for i in first..=last {
        let (y_from, y_to) = (v[i as usize - 1], v[i as usize]);
        if spec.in_lower(y_from) && spec.in_upper(y_to) {
            events.push(JumpEvent {
                step_index: i,
                y_from,
                y_to,
            });
        }
    }
    Ok(events)
}

/// Buckets events into the unit intervals of the window.
pub fn tally_events(events: &[JumpEvent], spec: &JumpSpec, n: u32) -> JumpCount {
    let (a, b) = spec.window;
    let mut per = vec![0u64; (b - a) as usize];
    for e in events {
        let k = (e.step_index - 1) / (1u64 << n) - a;
        per[k as usize] += 1;
    }
    JumpCount {
        epsilon: spec.epsilon,
        n,
        window: [a, b],
        total: per.iter().sum(),
        per_unit_interval: per,
    }
}

pub fn count_events(path: &PathGrid, spec: &JumpSpec) -> Result<JumpCount> {
    let events = detect_jumps(path, spec)?;
    Ok(tally_events(&events, spec, path.n()))
}

/// `J_k = 1{N((k−1, k], ε) ≥ 1}`.
pub fn bernoulli_indicators(count: &JumpCount) -> Vec<u8> {
    count
        .per_unit_interval
        .iter()
        .map(|&c| u8::from(c >= 1))
        .collect()
}

/// Summary of one window: `N`, `W = Σ J_k` and the largest per-interval count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WindowTally {
    pub total: u64,
    pub intervals_hit: u64,
    pub max_in_interval: u64,
}

/// Margin tests on angle coordinates `y = −L cos φ`. A cheap angle guard
/// rejects most states; near the threshold the state is formed exactly as in
/// [`PathGrid`] so both routes classify identically.
#[derive(Debug, Clone, Copy)]
pub struct AngleMargins {
    spec: JumpSpec,
    lower_guard: f64,
    upper_guard: f64,
}

impl AngleMargins {
    pub fn new(spec: JumpSpec) -> Self {
        let r = 1.0 - spec.epsilon / spec.half_width;
        Self {
            spec,
            lower_guard: r.acos() + 1e-6,
            upper_guard: (-r).acos() - 1e-6,
        }
    }

    #[inline]
    fn state(&self, phi: f64) -> f64 {
        let l = self.spec.half_width;
        (-l * phi.cos()).clamp(-l, l)
    }

    #[inline]
    pub fn in_lower(&self, phi: f64) -> bool {
        phi < self.lower_guard && self.spec.in_lower(self.state(phi))
    }

    #[inline]
    pub fn in_upper(&self, phi: f64) -> bool {
        phi > self.upper_guard && self.spec.in_upper(self.state(phi))
    }
}

/// Single-pass detector fed one grid state at a time, for paths too long to
/// store.
#[derive(Debug, Clone)]
pub struct StreamingDetector {
    margins: AngleMargins,
    steps_per_unit: u64,
    first_step: u64,
    last_step: u64,
    prev_lower: bool,
    interval: u64,
    in_interval: u64,
    tally: WindowTally,
}

impl StreamingDetector {
    pub fn new(spec: JumpSpec, n: u32) -> Self {
        let (a, b) = spec.window;
        Self {
            margins: AngleMargins::new(spec),
            steps_per_unit: 1u64 << n,
            first_step: a * (1u64 << n) + 1,
            last_step: b * (1u64 << n),
            prev_lower: false,
            interval: u64::MAX,
            in_interval: 0,
            tally: WindowTally::default(),
        }
    }

    /// Feeds the state at grid index `i`; indices must arrive as `0, 1, 2, …`.
    #[inline]
    pub fn observe(&mut self, i: u64, phi: f64) {
        if self.prev_lower
            && i >= self.first_step
            && i <= self.last_step
            && self.margins.in_upper(phi)
        {
            let k = (i - 1) / self.steps_per_unit;
            if k != self.interval {
                self.close_interval();
                self.interval = k;
            }
            self.in_interval += 1;
            self.tally.total += 1;
        }
        self.prev_lower = self.margins.in_lower(phi);
    }

    fn close_interval(&mut self) {
        if self.in_interval > 0 {
            self.tally.intervals_hit += 1;
            self.tally.max_in_interval = self.tally.max_in_interval.max(self.in_interval);
        }
        self.in_interval = 0;
    }

    pub fn finish(mut self) -> WindowTally {
        self.close_interval();
        self.tally
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q0() -> QParams {
        QParams::new(0.0).unwrap()
    }

    #[test]
    fn constant_path_has_no_events() {
        let path = PathGrid::from_values(&q0(), 2, 2, vec![0.0; 9], None).unwrap();
        let spec = JumpSpec::new(&q0(), 0.3, 0, 2).unwrap();
        assert!(detect_jumps(&path, &spec).unwrap().is_empty());
        assert_eq!(
            count_events(&path, &spec).unwrap().per_unit_interval,
            vec![0, 0]
        );
    }

    #[test]
    fn constructed_crossing() {
        let eps = 0.3;
        let path =
            PathGrid::from_values(&q0(), 0, 1, vec![-2.0 + eps / 2.0, 2.0 - eps / 2.0], None)
                .unwrap();
        let spec = JumpSpec::new(&q0(), eps, 0, 1).unwrap();
        let ev = detect_jumps(&path, &spec).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].step_index, 1);
    }

    #[test]
    fn boundary_value_counts_as_inside() {
        let path = PathGrid::from_values(&q0(), 0, 1, vec![-2.0, 2.0], None).unwrap();
        let spec = JumpSpec::new(&q0(), 0.1, 0, 1).unwrap();
        assert_eq!(detect_jumps(&path, &spec).unwrap().len(), 1);
    }

    #[test]
    fn bookkeeping_per_interval() {
        // n = 1: interval 1 holds steps 1-2, interval 3 holds steps 5-6
        let lo = -1.95;
        let hi = 1.95;
        let v = vec![lo, hi, 0.0, 0.0, lo, hi, 0.0, 0.0, 0.0];
        let path = PathGrid::from_values(&q0(), 1, 4, v, None).unwrap();
        let spec = JumpSpec::new(&q0(), 0.1, 0, 4).unwrap();
        let c = count_events(&path, &spec).unwrap();
        assert_eq!(c.per_unit_interval, vec![1, 0, 1, 0]);
        assert_eq!(c.total, 2);
        assert_eq!(bernoulli_indicators(&c), vec![1, 0, 1, 0]);
    }

    #[test]
    fn indicators() {
        let c = JumpCount {
            epsilon: 0.1,
            n: 0,
            window: [0, 3],
            per_unit_interval: vec![0, 2, 1],
            total: 3,
        };
        assert_eq!(bernoulli_indicators(&c), vec![0, 1, 1]);
    }

    #[test]
    fn window_and_spec_validation() {
        let path = PathGrid::from_values(&q0(), 0, 2, vec![0.0; 3], None).unwrap();
        let spec = JumpSpec::new(&q0(), 0.3, 1, 3).unwrap();
        assert!(matches!(
            detect_jumps(&path, &spec),
            Err(Error::WindowOutOfRange { .. })
        ));
        assert!(JumpSpec::new(&q0(), 2.0, 0, 1).is_err());
        assert!(JumpSpec::new(&q0(), 0.0, 0, 1).is_err());
        assert!(JumpSpec::new(&q0(), 0.1, 2, 2).is_err());
    }

    #[test]
    fn json_shape() {
        let c = JumpCount {
            epsilon: 0.5,
            n: 3,
            window: [0, 2],
            per_unit_interval: vec![1, 0],
            total: 1,
        };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(
            s,
            r#"{"epsilon":0.5,"n":3,"window":[0,2],"per_interval":[1,0],"total":1}"#
        );
    }

    #[test]
    fn streaming_matches_double_in_one_interval() {
        let l: f64 = 2.0;
        let phis = [0.01, 3.13, 0.02, 3.12, 1.0];
        let spec = JumpSpec::new(&q0(), 0.2, 0, 1).unwrap();
        let mut det = StreamingDetector::new(spec, 2);
        for (i, p) in phis.iter().enumerate() {
            det.observe(i as u64, *p);
        }
        let tally = det.finish();
        assert_eq!(
            tally,
            WindowTally {
                total: 2,
                intervals_hit: 1,
                max_in_interval: 2
            }
        );
        let values: Vec<f64> = phis.iter().map(|p| (-l * p.cos()).clamp(-l, l)).collect();
        let path = PathGrid::from_values(&q0(), 2, 1, values, None).unwrap();
        assert_eq!(count_events(&path, &spec).unwrap().total, 2);
    }
}
