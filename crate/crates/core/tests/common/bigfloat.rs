//! Fixed-point reals on `num-bigint` with 256 fractional bits: enough to
//! serve as an exact reference for f64 formulas.

use std::ops::{Add, Div, Mul, Sub};

use icl_lab::bounds::{theorem2_bound, BoundInputs};
use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};

const P: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fx(BigInt);

impl Fx {
    pub fn zero() -> Fx {
        Fx(BigInt::zero())
    }

    pub fn int(n: i64) -> Fx {
        Fx(BigInt::from(n) << P)
    }

    /// Exact conversion of a finite f64.
    pub fn f(x: f64) -> Fx {
        assert!(x.is_finite());
        if x == 0.0 {
            return Fx::zero();
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1 } else { 1 };
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
        let m = BigInt::from(m) * sign;
        let shift = e + P as i64;
        Fx(if shift >= 0 { m << shift as usize } else { m >> (-shift) as usize })
    }

    pub fn to_f64(&self) -> f64 {
        let mag = self.0.abs();
        let bits = mag.bits() as i64;
        // keep 64 significant bits before the float conversion
        let drop = (bits - 64).max(0);
        let top = (&mag >> drop as usize).to_f64().unwrap();
        let v = top * 2f64.powi((drop - P as i64) as i32);
        if self.0.is_negative() {
            -v
        } else {
            v
        }
    }

    pub fn sqrt(&self) -> Fx {
        assert!(!self.0.is_negative(), "sqrt of a negative number");
        Fx((&self.0 << P).sqrt())
    }

    pub fn max0(self) -> Fx {
        if self.0.is_negative() {
            Fx::zero()
        } else {
            self
        }
    }

    pub fn exp(&self) -> Fx {
        // exp(x) = exp(x / 2^k)^(2^k) with |x / 2^k| < 2^-20
        let mag_bits = self.0.abs().bits() as i64 - P as i64;
        let k = (mag_bits + 20).max(0) as usize;
        let r = Fx(&self.0 >> k);
        let mut term = Fx::int(1);
        let mut sum = Fx::int(1);
        for n in 1..40 {
            term = &(&term * &r) / &Fx::int(n);
            if term.0.is_zero() {
                break;
            }
            sum = &sum + &term;
        }
        for _ in 0..k {
            sum = &sum * &sum;
        }
        sum
    }

    /// Natural log by Halley iteration on `exp`, from the f64 estimate.
    pub fn ln(&self) -> Fx {
        assert!(self.0 > BigInt::zero(), "ln of a non-positive number");
        let mut y = Fx::f(self.to_f64().ln());
        for _ in 0..4 {
            let e = y.exp();
            let num = &(self - &e) * &Fx::int(2);
            y = &y + &(&num / &(self + &e));
        }
        y
    }
}

impl<'a> Add<&'a Fx> for &'a Fx {
    type Output = Fx;
    fn add(self, o: &Fx) -> Fx {
        Fx(&self.0 + &o.0)
    }
}

impl<'a> Sub<&'a Fx> for &'a Fx {
    type Output = Fx;
    fn sub(self, o: &Fx) -> Fx {
        Fx(&self.0 - &o.0)
    }
}

impl<'a> Mul<&'a Fx> for &'a Fx {
    type Output = Fx;
    fn mul(self, o: &Fx) -> Fx {
        Fx((&self.0 * &o.0) >> P)
    }
}

impl<'a> Div<&'a Fx> for &'a Fx {
    type Output = Fx;
    fn div(self, o: &Fx) -> Fx {
        Fx((&self.0 << P) / &o.0)
    }
}

/// Bound inputs as exact reals.
#[derive(Clone, Debug)]
pub struct Exact {
    pub k: i64,
    pub k_prime: i64,
    pub n: i64,
    pub n_prime: i64,
    pub t: i64,
    pub t_p: i64,
    pub t_prime: i64,
    pub beta: f64,
    pub s: f64,
    pub l: f64,
    pub sigma: f64,
    pub delta: f64,
    pub eps_opt: f64,
    pub kl: f64,
}

pub struct ExactBounds {
    pub capacity: f64,
    pub t1_general: f64,
    pub t1_detailed: f64,
    pub t2_general: f64,
    pub t2_detailed: f64,
}

/// Straight from the closed forms: `C = (beta/2) e^{8 beta S} (1 - exp(-T' e^{-8 beta S}))`.
pub fn exact_bounds(x: &Exact) -> ExactBounds {
    let beta = Fx::f(x.beta);
    let e8 = (&(&Fx::int(8) * &beta) * &Fx::f(x.s)).exp();
    let inner = (&Fx::int(0) - &(&Fx::int(x.t_prime) / &e8)).exp();
    let c = &(&(&beta / &Fx::int(2)) * &e8) * &(&Fx::int(1) - &inner);
    let lid = (&Fx::int(1) / &Fx::f(x.delta)).ln();
    let eps = Fx::f(x.eps_opt);
    let kl = Fx::f(x.kl);

    let knt = Fx::int(x.k * x.n * x.t);
    let t1g = &(&lid / &knt).sqrt() + &(&(&(&kl + &lid) / &knt) - &eps).max0().sqrt();

    let knt_d = Fx::int(x.k * (x.n - x.n_prime) * x.t);
    let l = Fx::f(x.l);
    let proxy = &(&(&l * &l) * &c) / &Fx::int(x.n_prime);
    let t1d = &(&lid / &knt_d).sqrt() + &(&(&(&proxy + &lid) / &knt_d) - &eps).max0().sqrt();

    let t2g = &(&(&Fx::int(1) / &Fx::int(x.k * x.t_p)).sqrt() * &(&kl + &lid)) + &t1d;
    let sigma = Fx::f(x.sigma);
    let tproxy = &(&(&sigma * &sigma) * &c) / &Fx::int(x.k_prime);
    let t2d = &(&(&Fx::int(1) / &Fx::int((x.k - x.k_prime) * x.t_p)).sqrt() * &(&tproxy + &lid)) + &t1d;
    ExactBounds {
        capacity: c.to_f64(),
        t1_general: t1g.to_f64(),
        t1_detailed: t1d.to_f64(),
        t2_general: t2g.to_f64(),
        t2_detailed: t2d.to_f64(),
    }
}

/// The same point as `f64` bound inputs.
pub fn inputs(x: &Exact) -> BoundInputs {
    BoundInputs {
        k: x.k as usize,
        k_prime: x.k_prime as usize,
        n: x.n as usize,
        n_prime: x.n_prime as usize,
        t: x.t as usize,
        t_p: x.t_p as usize,
        t_prime: x.t_prime as usize,
        beta: x.beta,
        s: x.s,
        l: x.l,
        sigma: x.sigma,
        delta: x.delta,
        eps_opt: x.eps_opt,
        n_param: 1000,
        kl_posterior_prior: Some(x.kl),
        scaling: None,
    }
}

/// First axis (K, N, T or T_p, on a 4-point grid) along which some bound
/// term increases, starting from `base`.
pub fn monotonicity_violation(base: &BoundInputs) -> Option<String> {
    let axes: [(&str, &dyn Fn(&mut BoundInputs, usize), [usize; 4]); 4] = [
        ("K", &|b, v| {
            b.k = v;
            b.k_prime = 1;
        }, [2, 4, 8, 16]),
        ("N", &|b, v| {
            b.n = v;
            b.n_prime = 5;
        }, [10, 20, 40, 80]),
        ("T", &|b, v| b.t = v, [16, 32, 64, 128]),
        ("T_p", &|b, v| b.t_p = v, [8, 16, 32, 64]),
    ];
    for (name, set, grid) in axes {
        let series: Vec<[f64; 4]> = grid
            .iter()
            .map(|&g| {
                let mut b = base.clone();
                set(&mut b, g);
                let t2 = theorem2_bound(&b).unwrap();
                let nan = f64::NAN;
                [t2.first_level.general.unwrap_or(nan), t2.first_level.detailed, t2.general.unwrap_or(nan), t2.detailed]
            })
            .collect();
        for w in series.windows(2) {
            let up = w[0].iter().zip(&w[1]).any(|(a, b)| *b > a * (1.0 + 1e-12) + 1e-300);
            if up {
                return Some(format!("{name} not monotone: {series:?}"));
            }
        }
    }
    None
}
