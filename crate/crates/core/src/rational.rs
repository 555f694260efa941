//! Exact rational arithmetic helpers for cycle counts and tiling factors.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational used for cycle counts, frame rates and ideal tiles.
pub type Rational = BigRational;

pub fn rat(n: u64) -> Rational {
    BigRational::from_integer(BigInt::from(n))
}

pub fn ratio(num: u64, den: u64) -> Rational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Smallest integer not below `r`.
pub fn ceil_u64(r: &Rational) -> u64 {
    r.ceil().to_integer().to_u64().unwrap_or(u64::MAX)
}

/// Largest power of two `<= n` (`n >= 1`).
pub fn floor_pow2(n: u64) -> u64 {
    assert!(n >= 1);
    1u64 << (63 - n.leading_zeros())
}

pub fn is_pow2(n: u64) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// Powers of two in `[1, max]`, ascending.
pub fn pow2_up_to(max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut v = 1u64;
    while v <= max {
        out.push(v);
        v <<= 1;
    }
    out
}

/// Nearest power of two to a positive rational, ties rounding up.
/// Values below one map to one.
pub fn round_pow2(x: &Rational) -> u64 {
    let one = Rational::one();
    if *x <= one {
        return 1;
    }
    let floor = x.floor().to_integer().to_u64().unwrap_or(u64::MAX);
    let lo = floor_pow2(floor.max(1));
    let hi = lo << 1;
    let below = x - rat(lo);
    let above = rat(hi) - x;
    if below < above {
        lo
    } else {
        hi
    }
}

/// Decimal rendering with `sig` significant digits and no exponent.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = sig as i32 - 1 - mag;
    if decimals >= 0 {
        let s = format!("{:.*}", decimals as usize, x);
        trim_zeros(s)
    } else {
        let unit = 10f64.powi(-decimals);
        format!("{:.0}", (x / unit).round() * unit)
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

pub fn fmt_rational(r: &Rational) -> String {
    fmt_sig(to_f64(r), 6)
}

pub fn abs_diff(a: &Rational, b: &Rational) -> Rational {
    (a - b).abs()
}

pub fn is_zero(r: &Rational) -> bool {
    r.is_zero()
}
