//! Exact hexadecimal floating-point text encoding (`0x1.8p+1` style).
//!
//! Only finite values are encoded. The parser accepts the forms the
//! formatter emits: a `0x1.` normal mantissa with up to 13 hex digits and any
//! in-range exponent, or a `0x0.` subnormal mantissa with exponent `-1022`.

const MANTISSA_BITS: u32 = 52;
const MANTISSA_MASK: u64 = (1 << MANTISSA_BITS) - 1;
const EXP_BIAS: i64 = 1023;

pub fn format(x: f64) -> Option<String> {
    if !x.is_finite() {
        return None;
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let biased = ((bits >> MANTISSA_BITS) & 0x7ff) as i64;
    let mantissa = bits & MANTISSA_MASK;
    if biased == 0 && mantissa == 0 {
        return Some(format!("{sign}0x0p+0"));
    }
    let (lead, exp) = if biased == 0 {
        (0, -1022)
    } else {
        (1, biased - EXP_BIAS)
    };
    let mut digits = format!("{mantissa:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    let frac = if digits.is_empty() {
        String::new()
    } else {
        format!(".{digits}")
    };
    Some(format!("{sign}0x{lead}{frac}p{exp:+}"))
}

pub fn parse(s: &str) -> Option<f64> {
    let (negative, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let rest = rest.strip_prefix("0x")?;
    let (mantissa_text, exp_text) = rest.split_once('p')?;
    let exp: i64 = exp_text.parse().ok()?;
    let (lead, frac) = match mantissa_text.split_once('.') {
        Some((l, f)) => (l, f),
        None => (mantissa_text, ""),
    };
    if frac.len() > 13 || !frac.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    let frac_bits = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len()))
    };
    let magnitude = match lead {
        "1" => {
            let biased = exp + EXP_BIAS;
            if !(1..=2046).contains(&biased) {
                return None;
            }
            ((biased as u64) << MANTISSA_BITS) | frac_bits
        }
        "0" if frac_bits == 0 => 0,
        "0" if exp == -1022 => frac_bits,
        _ => return None,
    };
    let sign = if negative { 1u64 << 63 } else { 0 };
    Some(f64::from_bits(sign | magnitude))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encodings() {
        assert_eq!(format(1.0).unwrap(), "0x1p+0");
        assert_eq!(format(3.0).unwrap(), "0x1.8p+1");
        assert_eq!(format(-0.5).unwrap(), "-0x1p-1");
        assert_eq!(format(0.0).unwrap(), "0x0p+0");
        assert_eq!(format(-0.0).unwrap(), "-0x0p+0");
        assert_eq!(format(f64::MIN_POSITIVE / 2.0).unwrap(), "0x0.8p-1022");
        assert!(format(f64::NAN).is_none());
        assert!(format(f64::INFINITY).is_none());
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "1.0", "0x", "0x2p+0", "0x1.gp+0", "0x1p+1024", "0x0.1p+3"] {
            assert!(parse(bad).is_none(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn round_trips_every_finite_value(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let text = format(x).unwrap();
            prop_assert_eq!(parse(&text).unwrap().to_bits(), bits);
        }
    }
}
