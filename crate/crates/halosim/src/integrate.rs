//! Explicit embedded Runge-Kutta integrator (Dormand-Prince 8(5,3)) with
//! adaptive step control.
//!
//! The pair is the 12-stage order-8 method with two embedded error
//! estimators of orders 5 and 3, combined the usual way, and a
//! Lund-stabilized (PI) step-size controller. Dense output is not carried;
//! event localization re-propagates inside the bracketing step instead.

use nalgebra::SVector;
use serde::{Deserialize, Serialize};
use std::ops::ControlFlow;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("maximum step count {max_steps} exceeded at t = {t}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
    #[error("right-hand side returned a non-finite value at t = {t}")]
    NonFiniteRhs { t: f64 },
}

/// Tolerances and step bounds. Times and states are in whatever units the
/// right-hand side uses (canonical units inside the propagator).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub atol: f64,
    pub rtol: f64,
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
    pub safety: f64,
    /// Lund stabilization exponent of the PI controller.
    pub beta: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            atol: 1e-13,
            rtol: 1e-13,
            max_step: 5.0,
            min_step: 0.0,
            max_steps: 1_000_000,
            safety: 0.9,
            beta: 0.0,
        }
    }
}

/// Outcome of an integration: either the requested end time was reached or
/// a step callback asked to stop early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Reached,
    Stopped,
}

/// One accepted step, reported to the caller's callback.
pub struct Step<'a, const N: usize> {
    pub t_prev: f64,
    pub y_prev: &'a SVector<f64, N>,
    pub t: f64,
    pub y: &'a SVector<f64, N>,
}

/// Integrate dy/dt = f(t, y) from (t0, y0) to t_end (either direction).
/// `on_step` sees every accepted step and may stop the integration early.
pub fn integrate<const N: usize>(
    f: &mut impl FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
    t0: f64,
    y0: SVector<f64, N>,
    t_end: f64,
    cfg: &IntegratorConfig,
    mut on_step: impl FnMut(Step<'_, N>) -> ControlFlow<()>,
) -> Result<(f64, SVector<f64, N>, Outcome), IntegrateError> {
    // requests below the time resolution of the scale are no-ops
    if (t_end - t0).abs() < 1e-13 * t0.abs().max(1.0) {
        return Ok((t0, y0, Outcome::Reached));
    }
    let posneg = (t_end - t0).signum();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut h = initial_step(f, t, &y, &k1, t_end, cfg);
    let mut facold: f64 = 1e-4;
    let mut n_steps = 0usize;
    let mut rejected_prev = false;

    let expo1 = 1.0 / 8.0 - cfg.beta * 0.2;
    const FAC1: f64 = 0.333;
    const FAC2: f64 = 6.0;

    loop {
        // the remaining gap can round below the local time resolution after
        // an exact-landing step; snap to the end point in that case
        if (t - t_end) * posneg >= 0.0 || (t_end - t).abs() < 1e-13 * t.abs().max(1.0) {
            return Ok((t_end, y, Outcome::Reached));
        }
        if n_steps >= cfg.max_steps {
            return Err(IntegrateError::MaxStepsExceeded {
                t,
                max_steps: cfg.max_steps,
            });
        }
        // don't overshoot
        if (t + 1.01 * h - t_end) * posneg > 0.0 {
            h = t_end - t;
        }
        if h.abs() < 1e-14 * t.abs().max(1.0) {
            return Err(IntegrateError::StepUnderflow { t });
        }

        // the twelve stages
        let k2 = f(t + C2 * h, &(y + k1 * (A21 * h)));
        let k3 = f(t + C3 * h, &(y + k1 * (A31 * h) + k2 * (A32 * h)));
        let k4 = f(t + C4 * h, &(y + k1 * (A41 * h) + k3 * (A43 * h)));
        let k5 = f(
            t + C5 * h,
            &(y + k1 * (A51 * h) + k3 * (A53 * h) + k4 * (A54 * h)),
        );
        let k6 = f(
            t + C6 * h,
            &(y + k1 * (A61 * h) + k4 * (A64 * h) + k5 * (A65 * h)),
        );
        let k7 = f(
            t + C7 * h,
            &(y + k1 * (A71 * h) + k4 * (A74 * h) + k5 * (A75 * h) + k6 * (A76 * h)),
        );
        let k8 = f(
            t + C8 * h,
            &(y + k1 * (A81 * h)
                + k4 * (A84 * h)
                + k5 * (A85 * h)
                + k6 * (A86 * h)
                + k7 * (A87 * h)),
        );
        let k9 = f(
            t + C9 * h,
            &(y + k1 * (A91 * h)
                + k4 * (A94 * h)
                + k5 * (A95 * h)
                + k6 * (A96 * h)
                + k7 * (A97 * h)
                + k8 * (A98 * h)),
        );
        let k10 = f(
            t + C10 * h,
            &(y + k1 * (A101 * h)
                + k4 * (A104 * h)
                + k5 * (A105 * h)
                + k6 * (A106 * h)
                + k7 * (A107 * h)
                + k8 * (A108 * h)
                + k9 * (A109 * h)),
        );
        let k11 = f(
            t + C11 * h,
            &(y + k1 * (A111 * h)
                + k4 * (A114 * h)
                + k5 * (A115 * h)
                + k6 * (A116 * h)
                + k7 * (A117 * h)
                + k8 * (A118 * h)
                + k9 * (A119 * h)
                + k10 * (A1110 * h)),
        );
        let t_new = t + h;
        let k12 = f(
            t_new,
            &(y + k1 * (A121 * h)
                + k4 * (A124 * h)
                + k5 * (A125 * h)
                + k6 * (A126 * h)
                + k7 * (A127 * h)
                + k8 * (A128 * h)
                + k9 * (A129 * h)
                + k10 * (A1210 * h)
                + k11 * (A1211 * h)),
        );
        let deriv8 = k1 * B1 + k6 * B6 + k7 * B7 + k8 * B8 + k9 * B9 + k10 * B10 + k11 * B11
            + k12 * B12;
        let y_new = y + deriv8 * h;

        // dual embedded error estimate (orders 5 and 3)
        let mut err5: f64 = 0.0;
        let mut err3: f64 = 0.0;
        for i in 0..N {
            let sk = cfg.atol + cfg.rtol * y[i].abs().max(y_new[i].abs());
            let e3 = deriv8[i] - BHH1 * k1[i] - BHH2 * k9[i] - BHH3 * k12[i];
            err3 += (e3 / sk) * (e3 / sk);
            let e5 = ER1 * k1[i]
                + ER6 * k6[i]
                + ER7 * k7[i]
                + ER8 * k8[i]
                + ER9 * k9[i]
                + ER10 * k10[i]
                + ER11 * k11[i]
                + ER12 * k12[i];
            err5 += (e5 / sk) * (e5 / sk);
        }
        let mut deno = err5 + 0.01 * err3;
        if deno <= 0.0 {
            deno = 1.0;
        }
        let err = h.abs() * err5 * (1.0 / (deno * N as f64)).sqrt();
        if !err.is_finite() {
            return Err(IntegrateError::NonFiniteRhs { t });
        }

        let fac11 = err.powf(expo1);
        let fac = (fac11 / facold.powf(cfg.beta) / cfg.safety).clamp(1.0 / FAC2, 1.0 / FAC1);
        let mut h_new = h / fac;

        if err <= 1.0 {
            // accept
            facold = err.max(1e-4);
            let k_next = f(t_new, &y_new);
            let flow = on_step(Step {
                t_prev: t,
                y_prev: &y,
                t: t_new,
                y: &y_new,
            });
            t = t_new;
            y = y_new;
            k1 = k_next;
            n_steps += 1;
            if let ControlFlow::Break(()) = flow {
                return Ok((t, y, Outcome::Stopped));
            }
            if rejected_prev {
                h_new = if posneg > 0.0 {
                    h_new.min(h)
                } else {
                    h_new.max(h)
                };
                rejected_prev = false;
            }
        } else {
            // reject
            h_new = h / (fac11 / cfg.safety).min(1.0 / FAC1);
            rejected_prev = true;
            n_steps += 1;
        }
        if h_new.abs() > cfg.max_step {
            h_new = cfg.max_step * posneg;
        }
        if cfg.min_step > 0.0 && h_new.abs() < cfg.min_step {
            h_new = cfg.min_step * posneg;
        }
        h = h_new;
    }
}

/// Hairer's starting-step heuristic for an order-8 method.
fn initial_step<const N: usize>(
    f: &mut impl FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
    t0: f64,
    y0: &SVector<f64, N>,
    f0: &SVector<f64, N>,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> f64 {
    let posneg = (t_end - t0).signum();
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..N {
        let sk = cfg.atol + cfg.rtol * y0[i].abs();
        dnf += (f0[i] / sk) * (f0[i] / sk);
        dny += (y0[i] / sk) * (y0[i] / sk);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(cfg.max_step);
    h *= posneg;

    let y1 = y0 + f0 * h;
    let f1 = f(t0 + h, &y1);
    let mut der2 = 0.0;
    for i in 0..N {
        let sk = cfg.atol + cfg.rtol * y0[i].abs();
        der2 += ((f1[i] - f0[i]) / sk) * ((f1[i] - f0[i]) / sk);
    }
    let der2 = der2.sqrt() / h.abs();
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h.abs() * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(1.0 / 8.0)
    };
    let h = (100.0 * h.abs()).min(h1).min(cfg.max_step);
    h * posneg
}

// Dormand-Prince 8(5,3) coefficients.
const C2: f64 = 0.526001519587677318785587544488E-01;
const C3: f64 = 0.789002279381515978178381316732E-01;
const C4: f64 = 0.118350341907227396726757197510E+00;
const C5: f64 = 0.281649658092772603273242802490E+00;
const C6: f64 = 0.333333333333333333333333333333E+00;
const C7: f64 = 0.25E+00;
const C8: f64 = 0.307692307692307692307692307692E+00;
const C9: f64 = 0.651282051282051282051282051282E+00;
const C10: f64 = 0.6E+00;
const C11: f64 = 0.857142857142857142857142857142E+00;

const B1: f64 = 5.42937341165687622380535766363E-2;
const B6: f64 = 4.45031289275240888144113950566E0;
const B7: f64 = 1.89151789931450038304281599044E0;
const B8: f64 = -5.8012039600105847814672114227E0;
const B9: f64 = 3.1116436695781989440891606237E-1;
const B10: f64 = -1.52160949662516078556178806805E-1;
const B11: f64 = 2.01365400804030348374776537501E-1;
const B12: f64 = 4.47106157277725905176885569043E-2;

const BHH1: f64 = 0.244094488188976377952755905512E+00;
const BHH2: f64 = 0.733846688281611857341361741547E+00;
const BHH3: f64 = 0.220588235294117647058823529412E-01;

const ER1: f64 = 0.1312004499419488073250102996E-01;
const ER6: f64 = -0.1225156446376204440720569753E+01;
const ER7: f64 = -0.4957589496572501915214079952E+00;
const ER8: f64 = 0.1664377182454986536961530415E+01;
const ER9: f64 = -0.3503288487499736816886487290E+00;
const ER10: f64 = 0.3341791187130174790297318841E+00;
const ER11: f64 = 0.8192320648511571246570742613E-01;
const ER12: f64 = -0.2235530786388629525884427845E-01;

const A21: f64 = 5.26001519587677318785587544488E-2;
const A31: f64 = 1.97250569845378994544595329183E-2;
const A32: f64 = 5.91751709536136983633785987549E-2;
const A41: f64 = 2.95875854768068491816892993775E-2;
const A43: f64 = 8.87627564304205475450678981324E-2;
const A51: f64 = 2.41365134159266685502369798665E-1;
const A53: f64 = -8.84549479328286085344864962717E-1;
const A54: f64 = 9.24834003261792003115737966543E-1;
const A61: f64 = 3.7037037037037037037037037037E-2;
const A64: f64 = 1.70828608729473871279604482173E-1;
const A65: f64 = 1.25467687566822425016691814123E-1;
const A71: f64 = 3.7109375E-2;
const A74: f64 = 1.70252211019544039314978060272E-1;
const A75: f64 = 6.02165389804559606850219397283E-2;
const A76: f64 = -1.7578125E-2;
const A81: f64 = 3.70920001185047927108779319836E-2;
const A84: f64 = 1.70383925712239993810214054705E-1;
const A85: f64 = 1.07262030446373284651809199168E-1;
const A86: f64 = -1.53194377486244017527936158236E-2;
const A87: f64 = 8.27378916381402288758473766002E-3;
const A91: f64 = 6.24110958716075717114429577812E-1;
const A94: f64 = -3.36089262944694129406857109825E0;
const A95: f64 = -8.68219346841726006818189891453E-1;
const A96: f64 = 2.75920996994467083049415600797E1;
const A97: f64 = 2.01540675504778934086186788979E1;
const A98: f64 = -4.34898841810699588477366255144E1;
const A101: f64 = 4.77662536438264365890433908527E-1;
const A104: f64 = -2.48811461997166764192642586468E0;
const A105: f64 = -5.90290826836842996371446475743E-1;
const A106: f64 = 2.12300514481811942347288949897E1;
const A107: f64 = 1.52792336328824235832596922938E1;
const A108: f64 = -3.32882109689848629194453265587E1;
const A109: f64 = -2.03312017085086261358222928593E-2;
const A111: f64 = -9.3714243008598732571704021658E-1;
const A114: f64 = 5.18637242884406370830023853209E0;
const A115: f64 = 1.09143734899672957818500254654E0;
const A116: f64 = -8.14978701074692612513997267357E0;
const A117: f64 = -1.85200656599969598641566180701E1;
const A118: f64 = 2.27394870993505042818970056734E1;
const A119: f64 = 2.49360555267965238987089396762E0;
const A1110: f64 = -3.0467644718982195003823669022E0;
const A121: f64 = 2.27331014751653820792359768449E0;
const A124: f64 = -1.05344954667372501984066689879E1;
const A125: f64 = -2.00087205822486249909675718444E0;
const A126: f64 = -1.79589318631187989172765950534E1;
const A127: f64 = 2.79488845294199600508499808837E1;
const A128: f64 = -2.85899827713502369474065508674E0;
const A129: f64 = -8.87285693353062954433549289258E0;
const A1210: f64 = 1.23605671757943030647266201528E1;
const A1211: f64 = 6.43392746015763530355970484046E-1;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SVector;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let cfg = IntegratorConfig {
            max_step: 10.0,
            ..Default::default()
        };
        let mut f = |_t: f64, y: &SVector<f64, 1>| -y * 0.5;
        let y0 = SVector::<f64, 1>::new(2.0);
        let (t, y, out) = integrate(&mut f, 0.0, y0, 3.0, &cfg, |_| ControlFlow::Continue(()))
            .unwrap();
        assert_eq!(out, Outcome::Reached);
        assert_eq!(t, 3.0);
        assert_relative_eq!(y[0], 2.0 * (-1.5f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn harmonic_oscillator_energy_is_preserved() {
        let cfg = IntegratorConfig::default();
        let mut f = |_t: f64, y: &SVector<f64, 2>| SVector::<f64, 2>::new(y[1], -y[0]);
        let y0 = SVector::<f64, 2>::new(1.0, 0.0);
        let (_, y, _) = integrate(
            &mut f,
            0.0,
            y0,
            200.0 * std::f64::consts::TAU,
            &cfg,
            |_| ControlFlow::Continue(()),
        )
        .unwrap();
        let energy = y[0] * y[0] + y[1] * y[1];
        assert_relative_eq!(energy, 1.0, epsilon = 1e-9);
        assert_relative_eq!(y[0], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn backward_integration_works() {
        let cfg = IntegratorConfig::default();
        let mut f = |t: f64, _y: &SVector<f64, 1>| SVector::<f64, 1>::new(3.0 * t * t);
        let y0 = SVector::<f64, 1>::new(8.0); // y = t^3 at t = 2
        let (_, y, _) = integrate(&mut f, 2.0, y0, -1.0, &cfg, |_| ControlFlow::Continue(()))
            .unwrap();
        assert_relative_eq!(y[0], -1.0, epsilon = 1e-10);
    }

    #[test]
    fn early_stop_via_callback() {
        let cfg = IntegratorConfig::default();
        let mut f = |_t: f64, _y: &SVector<f64, 1>| SVector::<f64, 1>::new(1.0);
        let y0 = SVector::<f64, 1>::new(0.0);
        let (t, _, out) = integrate(&mut f, 0.0, y0, 100.0, &cfg, |s| {
            if s.y[0] > 1.0 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        assert_eq!(out, Outcome::Stopped);
        assert!(t < 100.0);
    }

    #[test]
    fn max_steps_is_enforced() {
        let cfg = IntegratorConfig {
            max_steps: 5,
            max_step: 1e-3,
            ..Default::default()
        };
        let mut f = |_t: f64, _y: &SVector<f64, 1>| SVector::<f64, 1>::new(1.0);
        let y0 = SVector::<f64, 1>::new(0.0);
        let err = integrate(&mut f, 0.0, y0, 100.0, &cfg, |_| ControlFlow::Continue(()))
            .unwrap_err();
        assert!(matches!(err, IntegrateError::MaxStepsExceeded { .. }));
    }
}
