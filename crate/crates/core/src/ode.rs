//! Adaptive Dormand-Prince 5(4) integration with terminal events.

/// Step-size controller settings.
#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-11, atol: 1e-13, h_init: 1e-4, h_min: 1e-15, max_steps: 1_000_000 }
    }
}

/// How an integration run ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stop<const D: usize> {
    /// Reached the requested end point.
    End { t: f64, y: [f64; D] },
    /// Event `index` changed sign; `(t, y)` is located to bisection precision.
    Event { index: usize, t: f64, y: [f64; D] },
    /// The controller could not make progress (step below `h_min` or step budget spent).
    Stalled { t: f64, y: [f64; D] },
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const D: usize>(y: &[f64; D], terms: &[(f64, &[f64; D])]) -> [f64; D] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..D {
            out[i] += c * k[i];
        }
    }
    out
}

/// One Dormand-Prince step of size `h`; returns the new state and the error estimate.
pub fn dp_step<const D: usize, F>(f: &F, t: f64, y: &[f64; D], h: f64) -> ([f64; D], [f64; D])
where
    F: Fn(f64, &[f64; D]) -> [f64; D],
{
    let k1 = f(t, y);
    let k2 = f(t + C2 * h, &axpy(y, &[(h * A21, &k1)]));
    let k3 = f(t + C3 * h, &axpy(y, &[(h * A31, &k1), (h * A32, &k2)]));
    let k4 = f(t + C4 * h, &axpy(y, &[(h * A41, &k1), (h * A42, &k2), (h * A43, &k3)]));
    let k5 = f(
        t + C5 * h,
        &axpy(y, &[(h * A51, &k1), (h * A52, &k2), (h * A53, &k3), (h * A54, &k4)]),
    );
    let k6 = f(
        t + h,
        &axpy(y, &[(h * A61, &k1), (h * A62, &k2), (h * A63, &k3), (h * A64, &k4), (h * A65, &k5)]),
    );
    let y5 = axpy(y, &[(h * B1, &k1), (h * B3, &k3), (h * B4, &k4), (h * B5, &k5), (h * B6, &k6)]);
    let k7 = f(t + h, &y5);
    let mut err = [0.0; D];
    for i in 0..D {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y5, err)
}

/// Integrates `y' = f(t, y)` from `t0` to `t1 > t0`, stopping at the first sign change of
/// any event function. Accepted points (including the start) are pushed onto `path`.
pub fn integrate<const D: usize, F, G>(
    f: F,
    events: G,
    t0: f64,
    y0: [f64; D],
    t1: f64,
    opts: &OdeOptions,
    path: &mut Vec<(f64, [f64; D])>,
) -> Stop<D>
where
    F: Fn(f64, &[f64; D]) -> [f64; D],
    G: Fn(f64, &[f64; D], &mut Vec<f64>),
{
    let mut t = t0;
    let mut y = y0;
    let mut h = opts.h_init.min(t1 - t0);
    let mut ev_prev = Vec::new();
    let mut ev_new = Vec::new();
    events(t, &y, &mut ev_prev);
    path.push((t, y));
    let mut steps = 0;
    while t < t1 {
        if steps >= opts.max_steps || h < opts.h_min {
            return Stop::Stalled { t, y };
        }
        steps += 1;
        let last = t + h >= t1;
        let h_try = if last { t1 - t } else { h };
        let (y_new, err) = dp_step(&f, t, &y, h_try);
        let mut enorm = 0.0f64;
        for i in 0..D {
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            enorm = enorm.max((err[i] / sc).abs());
        }
        if !enorm.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            h = 0.25 * h_try;
            continue;
        }
        if enorm > 1.0 {
            h = h_try * (0.9 * enorm.powf(-0.2)).max(0.2);
            continue;
        }
        events(t + h_try, &y_new, &mut ev_new);
        if let Some(index) = first_crossing(&ev_prev, &ev_new) {
            let (te, ye) = locate_event(&f, &events, index, t, &y, h_try, ev_prev[index]);
            path.push((te, ye));
            return Stop::Event { index, t: te, y: ye };
        }
        t = if last { t1 } else { t + h_try };
        y = y_new;
        std::mem::swap(&mut ev_prev, &mut ev_new);
        path.push((t, y));
        let fac = if enorm == 0.0 { 5.0 } else { (0.9 * enorm.powf(-0.2)).clamp(0.2, 5.0) };
        h = h_try * fac;
    }
    Stop::End { t, y }
}

fn first_crossing(prev: &[f64], new: &[f64]) -> Option<usize> {
    prev.iter()
        .zip(new)
        .position(|(&a, &b)| (a > 0.0 && b <= 0.0) || (a < 0.0 && b >= 0.0))
}

/// Bisects on the step length until the event bracket is below round-off.
fn locate_event<const D: usize, F, G>(
    f: &F,
    events: &G,
    index: usize,
    t: f64,
    y: &[f64; D],
    h: f64,
    ev_start: f64,
) -> (f64, [f64; D])
where
    F: Fn(f64, &[f64; D]) -> [f64; D],
    G: Fn(f64, &[f64; D], &mut Vec<f64>),
{
    let mut lo = 0.0;
    let mut hi = h;
    let mut ev = Vec::new();
    let mut y_hi = dp_step(f, t, y, h).0;
    for _ in 0..200 {
        if hi - lo <= 4.0 * f64::EPSILON * (t.abs() + h) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (ym, _) = dp_step(f, t, y, mid);
        events(t + mid, &ym, &mut ev);
        let same_side = (ev[index] > 0.0) == (ev_start > 0.0) && ev[index] != 0.0;
        if same_side {
            lo = mid;
        } else {
            hi = mid;
            y_hi = ym;
        }
    }
    (t + hi, y_hi)
}
