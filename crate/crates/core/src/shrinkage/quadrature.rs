//! Globally adaptive Gauss–Kronrod (7/15) integration of vector integrands.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Integral estimate with its error bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature {
    pub values: Vec<f64>,
    pub abs_error: f64,
    pub intervals: usize,
}

struct Piece {
    a: f64,
    b: f64,
    values: Vec<f64>,
    error: f64,
}

fn gk15<F: Fn(f64, &mut [f64])>(f: &F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> (Vec<f64>, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    f(c, buf);
    for k in 0..dim {
        kron[k] = WGK[7] * buf[k];
        gauss[k] = WG[3] * buf[k];
    }
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        for sign in [-1.0, 1.0] {
            f(c + sign * h * x, buf);
            for k in 0..dim {
                kron[k] += w * buf[k];
                if j % 2 == 1 {
                    gauss[k] += WG[j / 2] * buf[k];
                }
            }
        }
    }
    let mut err: f64 = 0.0;
    for k in 0..dim {
        kron[k] *= h;
        gauss[k] *= h;
        err = err.max((kron[k] - gauss[k]).abs());
    }
    (kron, err)
}

/// Integrates the `dim`-component function `f` over `[a, b]` split at the
/// interior `breaks`, refining the worst interval until the total error is
/// below `rel_tol` times the magnitude of the first component.
pub fn integrate<F>(f: F, a: f64, b: f64, breaks: &[f64], dim: usize, rel_tol: f64, max_intervals: usize) -> Result<Quadrature>
where
    F: Fn(f64, &mut [f64]),
{
    if !(a < b) || dim == 0 {
        return Err(Error::contract(format!("bad integration range [{a}, {b}]")));
    }
    let mut buf = vec![0.0; dim];
    let mut points = vec![a];
    points.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
    points.push(b);
    let mut pieces: Vec<Piece> = points
        .windows(2)
        .map(|w| {
            let (values, error) = gk15(&f, w[0], w[1], dim, &mut buf);
            Piece { a: w[0], b: w[1], values, error }
        })
        .collect();

    loop {
        let total0: f64 = pieces.iter().map(|p| p.values[0]).sum();
        let err: f64 = pieces.iter().map(|p| p.error).sum();
        if !total0.is_finite() || !err.is_finite() {
            return Err(Error::numeric("quadrature", "non-finite integrand"));
        }
        if err <= rel_tol * total0.abs() || err == 0.0 {
            let mut values = vec![0.0; dim];
            for p in &pieces {
                for (v, x) in values.iter_mut().zip(&p.values) {
                    *v += x;
                }
            }
            return Ok(Quadrature {
                values,
                abs_error: err,
                intervals: pieces.len(),
            });
        }
        if pieces.len() >= max_intervals {
            return Err(Error::numeric(
                "quadrature",
                format!("no convergence after {max_intervals} intervals (error {err:e}, integral {total0:e})"),
            ));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .expect("at least one piece");
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if !(mid > p.a && mid < p.b) {
            return Err(Error::numeric("quadrature", "interval collapsed below machine precision"));
        }
        for (lo, hi) in [(p.a, mid), (mid, p.b)] {
            let (values, error) = gk15(&f, lo, hi, dim, &mut buf);
            pieces.push(Piece { a: lo, b: hi, values, error });
        }
    }
}
