//! Adaptive Dormand-Prince 8(5,3) integrator.
//!
//! Coefficients are Hairer's DOP853 tableau. Output is produced at caller
//! supplied times by landing steps exactly on them, so no interpolant is
//! involved and every output value carries the full local accuracy.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IntegrationError<E: std::error::Error + 'static> {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("maximum number of steps ({steps}) reached at t = {t}")]
    MaxSteps { t: f64, steps: usize },
    #[error("output times must be monotone in the integration direction")]
    BadOutputGrid,
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Rhs(E),
}

#[derive(Debug, Clone, Copy)]
pub struct Dop853Options {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Dop853Options {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }
}

impl Default for Dop853Options {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-12,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Dop853Stats {
    pub evaluations: usize,
    pub accepted: usize,
    pub rejected: usize,
}

const C: [f64; 12] = [
    0.0,
    0.526001519587677318785587544488E-01,
    0.789002279381515978178381316732E-01,
    0.118350341907227396726757197510E+00,
    0.281649658092772603273242802490E+00,
    0.333333333333333333333333333333E+00,
    0.25E+00,
    0.307692307692307692307692307692E+00,
    0.651282051282051282051282051282E+00,
    0.6E+00,
    0.857142857142857142857142857142E+00,
    1.0,
];

const A: [&[f64]; 12] = [
    &[],
    &[5.26001519587677318785587544488E-2],
    &[1.97250569845378994544595329183E-2, 5.91751709536136983633785987549E-2],
    &[2.95875854768068491816892993775E-2, 0.0, 8.87627564304205475450678981324E-2],
    &[
        2.41365134159266685502369798665E-1,
        0.0,
        -8.84549479328286085344864962717E-1,
        9.24834003261792003115737966543E-1,
    ],
    &[
        3.7037037037037037037037037037E-2,
        0.0,
        0.0,
        1.70828608729473871279604482173E-1,
        1.25467687566822425016691814123E-1,
    ],
    &[
        3.7109375E-2,
        0.0,
        0.0,
        1.70252211019544039314978060272E-1,
        6.02165389804559606850219397283E-2,
        -1.7578125E-2,
    ],
    &[
        3.70920001185047927108779319836E-2,
        0.0,
        0.0,
        1.70383925712239993810214054705E-1,
        1.07262030446373284651809199168E-1,
        -1.53194377486244017527936158236E-2,
        8.27378916381402288758473766002E-3,
    ],
    &[
        6.24110958716075717114429577812E-1,
        0.0,
        0.0,
        -3.36089262944694129406857109825E0,
        -8.68219346841726006818189891453E-1,
        2.75920996994467083049415600797E1,
        2.01540675504778934086186788979E1,
        -4.34898841810699588477366255144E1,
    ],
    &[
        4.77662536438264365890433908527E-1,
        0.0,
        0.0,
        -2.48811461997166764192642586468E0,
        -5.90290826836842996371446475743E-1,
        2.12300514481811942347288949897E1,
        1.52792336328824235832596922938E1,
        -3.32882109689848629194453265587E1,
        -2.03312017085086261358222928593E-2,
    ],
    &[
        -9.3714243008598732571704021658E-1,
        0.0,
        0.0,
        5.18637242884406370830023853209E0,
        1.09143734899672957818500254654E0,
        -8.14978701074692612513997267357E0,
        -1.85200656599969598641566180701E1,
        2.27394870993505042818970056734E1,
        2.49360555267965238987089396762E0,
        -3.0467644718982195003823669022E0,
    ],
    &[
        2.27331014751653820792359768449E0,
        0.0,
        0.0,
        -1.05344954667372501984066689879E1,
        -2.00087205822486249909675718444E0,
        -1.79589318631187989172765950534E1,
        2.79488845294199600508499808837E1,
        -2.85899827713502369474065508674E0,
        -8.87285693353062954433549289258E0,
        1.23605671757943030647266201528E1,
        6.43392746015763530355970484046E-1,
    ],
];

// Eighth-order weights for stages 1..12 (stages 2-5 have zero weight).
const B: [f64; 12] = [
    5.42937341165687622380535766363E-2,
    0.0,
    0.0,
    0.0,
    0.0,
    4.45031289275240888144113950566E0,
    1.89151789931450038304281599044E0,
    -5.8012039600105847814672114227E0,
    3.1116436695781989440891606237E-1,
    -1.52160949662516078556178806805E-1,
    2.01365400804030348374776537501E-1,
    4.47106157277725905176885569043E-2,
];

// Third-order embedded solution uses stages 1, 9 and 12.
const BHH: [f64; 3] = [
    0.244094488188976377952755905512E+00,
    0.733846688281611857341361741547E+00,
    0.220588235294117647058823529412E-01,
];

const ER: [f64; 12] = [
    0.1312004499419488073250102996E-01,
    0.0,
    0.0,
    0.0,
    0.0,
    -0.1225156446376204440720569753E+01,
    -0.4957589496572501915214079952E+00,
    0.1664377182454986536961530415E+01,
    -0.3503288487499736816886487290E+00,
    0.3341791187130174790297318841E+00,
    0.8192320648511571246570742613E-01,
    -0.2235530786388629525884427845E-01,
];

const SAFETY: f64 = 0.9;
const FAC_MIN_INV: f64 = 3.0; // 1 / 0.333
const FAC_MAX_INV: f64 = 1.0 / 6.0;
const EXPO: f64 = 1.0 / 8.0;

/// Integrates `y' = f(t, y)` from `(t0, y0)` and returns the state at every
/// time in `t_out`. Times must be monotone in one direction away from `t0`;
/// an entry equal to `t0` returns `y0` unchanged.
pub fn integrate<F, E>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_out: &[f64],
    opts: &Dop853Options,
) -> Result<(Vec<Vec<f64>>, Dop853Stats), IntegrationError<E>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
    E: std::error::Error + 'static,
{
    let n = y0.len();
    let mut stats = Dop853Stats::default();
    let mut out = Vec::with_capacity(t_out.len());
    if t_out.is_empty() {
        return Ok((out, stats));
    }
    let dir = {
        let last = *t_out.last().unwrap();
        if last >= t0 {
            1.0
        } else {
            -1.0
        }
    };
    let mut prev = t0;
    for &t in t_out {
        if (t - prev) * dir < 0.0 || !t.is_finite() {
            return Err(IntegrationError::BadOutputGrid);
        }
        prev = t;
    }

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 12];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut fnew = vec![0.0; n];

    f(t, &y, &mut k[0]).map_err(IntegrationError::Rhs)?;
    stats.evaluations += 1;

    let span = (t_out.last().unwrap() - t0).abs();
    let mut h = if span > 0.0 {
        initial_step(&mut f, t, &y, &k[0], dir, opts, span, &mut stats)?
    } else {
        0.0
    };
    let mut rejected_last = false;

    for &target in t_out {
        while (target - t) * dir > 0.0 {
            if stats.accepted + stats.rejected >= opts.max_steps {
                return Err(IntegrationError::MaxSteps {
                    t,
                    steps: opts.max_steps,
                });
            }
            if h.abs() <= 1e-15 * t.abs().max(1.0) {
                return Err(IntegrationError::StepUnderflow { t });
            }
            let remaining = target - t;
            let landing = h.abs() >= remaining.abs();
            let h_step = if landing { remaining } else { h };

            for s in 1..12 {
                ytmp.copy_from_slice(&y);
                for (j, &a) in A[s].iter().enumerate() {
                    if a != 0.0 {
                        let ha = h_step * a;
                        for (yt, kj) in ytmp.iter_mut().zip(&k[j]) {
                            *yt += ha * kj;
                        }
                    }
                }
                let (_, tail) = k.split_at_mut(s);
                f(t + C[s] * h_step, &ytmp, &mut tail[0]).map_err(IntegrationError::Rhs)?;
            }
            stats.evaluations += 11;

            let mut err = 0.0;
            let mut err2 = 0.0;
            for i in 0..n {
                let mut incr = 0.0;
                let mut e5 = 0.0;
                for s in 0..12 {
                    incr += B[s] * k[s][i];
                    e5 += ER[s] * k[s][i];
                }
                ynew[i] = y[i] + h_step * incr;
                let e3 = incr - BHH[0] * k[0][i] - BHH[1] * k[8][i] - BHH[2] * k[11][i];
                let sc = opts.atol + y[i].abs().max(ynew[i].abs()) * opts.rtol;
                err += (e5 / sc) * (e5 / sc);
                err2 += (e3 / sc) * (e3 / sc);
            }
            let mut deno = err + 0.01 * err2;
            if deno <= 0.0 {
                deno = 1.0;
            }
            let err = h_step.abs() * err * (1.0 / (deno * n as f64)).sqrt();
            if !err.is_finite() {
                // treat as a hard rejection
                stats.rejected += 1;
                h *= 0.25;
                rejected_last = true;
                continue;
            }

            let fac11 = err.powf(EXPO);
            let fac = FAC_MAX_INV.max(FAC_MIN_INV.min(fac11 / SAFETY));
            let mut h_new = h_step / fac;

            if err <= 1.0 {
                if ynew.iter().any(|v| !v.is_finite()) {
                    return Err(IntegrationError::NonFinite { t: t + h_step });
                }
                let t_new = if landing { target } else { t + h_step };
                f(t_new, &ynew, &mut fnew).map_err(IntegrationError::Rhs)?;
                stats.evaluations += 1;
                stats.accepted += 1;
                t = t_new;
                std::mem::swap(&mut y, &mut ynew);
                k[0].copy_from_slice(&fnew);
                if h_new.abs() > opts.h_max {
                    h_new = dir * opts.h_max;
                }
                if rejected_last {
                    h_new = dir * h_new.abs().min(h_step.abs());
                }
                rejected_last = false;
                // a landing step may be artificially short; resume with the
                // step that was planned before clamping
                h = if landing && h_step.abs() < h.abs() {
                    dir * h_new.abs().max(h.abs())
                } else {
                    h_new
                };
            } else {
                h = h_step / FAC_MIN_INV.min(fac11 / SAFETY);
                rejected_last = true;
                stats.rejected += 1;
            }
        }
        out.push(y.clone());
    }
    Ok((out, stats))
}

#[allow(clippy::too_many_arguments)]
fn initial_step<F, E>(
    f: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    dir: f64,
    opts: &Dop853Options,
    span: f64,
    stats: &mut Dop853Stats,
) -> Result<f64, IntegrationError<E>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
    E: std::error::Error + 'static,
{
    let n = y.len();
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..n {
        let sk = opts.atol + opts.rtol * y[i].abs();
        dnf += (f0[i] / sk).powi(2);
        dny += (y[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(opts.h_max).min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(yi, fi)| yi + dir * h * fi).collect();
    let mut f1 = vec![0.0; n];
    f(t + dir * h, &y1, &mut f1).map_err(IntegrationError::Rhs)?;
    stats.evaluations += 1;
    let mut der2 = 0.0;
    for i in 0..n {
        let sk = opts.atol + opts.rtol * y[i].abs();
        der2 += ((f1[i] - f0[i]) / sk).powi(2);
    }
    let der2 = der2.sqrt() / h;
    let der12 = der2.abs().max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        1e-6_f64.max(h.abs() * 1e-3)
    } else {
        (0.01 / der12).powf(EXPO)
    };
    Ok(dir * (100.0 * h).min(h1).min(opts.h_max).min(span))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Error)]
    #[error("never")]
    struct Never;

    #[test]
    fn exponential_growth() {
        let opts = Dop853Options::with_tol(1e-12);
        let (ys, _) = integrate(
            |_, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[0];
                Ok::<(), Never>(())
            },
            0.0,
            &[1.0],
            &[0.5, 1.0, 2.0],
            &opts,
        )
        .unwrap();
        assert!((ys[1][0] - 1f64.exp()).abs() < 1e-11);
        assert!((ys[2][0] - 2f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_backward_and_forward() {
        let opts = Dop853Options::with_tol(1e-12);
        let rhs = |_: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok::<(), Never>(())
        };
        let (fwd, _) = integrate(rhs, 0.0, &[1.0, 0.0], &[10.0], &opts).unwrap();
        assert!((fwd[0][0] - 10f64.cos()).abs() < 1e-10);
        let (back, _) = integrate(rhs, 10.0, &fwd[0], &[0.0], &opts).unwrap();
        assert!((back[0][0] - 1.0).abs() < 1e-10);
        assert!(back[0][1].abs() < 1e-10);
    }

    #[test]
    fn time_dependent_rhs_uses_stage_times() {
        // y' = cos(t) exercises every c_i, including the last stage at c = 1
        let opts = Dop853Options::with_tol(1e-13);
        let (ys, _) = integrate(
            |t, _y: &[f64], dy: &mut [f64]| {
                dy[0] = (5.0 * t).cos();
                Ok::<(), Never>(())
            },
            0.0,
            &[0.0],
            &[3.0],
            &opts,
        )
        .unwrap();
        assert!((ys[0][0] - (15.0f64).sin() / 5.0).abs() < 1e-12);
    }

    #[test]
    fn output_at_start_time() {
        let opts = Dop853Options::default();
        let (ys, _) = integrate(
            |_, _y: &[f64], dy: &mut [f64]| {
                dy[0] = 1.0;
                Ok::<(), Never>(())
            },
            0.0,
            &[2.0],
            &[0.0, 1.0],
            &opts,
        )
        .unwrap();
        assert_eq!(ys[0][0], 2.0);
        assert!((ys[1][0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_monotone_grid() {
        let opts = Dop853Options::default();
        let r = integrate(
            |_, _y: &[f64], dy: &mut [f64]| {
                dy[0] = 1.0;
                Ok::<(), Never>(())
            },
            0.0,
            &[0.0],
            &[1.0, 0.5],
            &opts,
        );
        assert!(matches!(r, Err(IntegrationError::BadOutputGrid)));
    }

    #[test]
    fn singular_rhs_underflows() {
        // y' = 1/(1 - t) blows up at t = 1
        let opts = Dop853Options::with_tol(1e-10);
        let r = integrate(
            |t, _y: &[f64], dy: &mut [f64]| {
                dy[0] = 1.0 / (1.0 - t).powi(3);
                Ok::<(), Never>(())
            },
            0.0,
            &[0.0],
            &[2.0],
            &opts,
        );
        assert!(r.is_err());
    }
}
