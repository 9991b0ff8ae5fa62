//! C99-style hexadecimal float literals (`0x1.8p+1`), used for bit-exact CSV
//! round trips.

/// Formats a finite `f64` as a hexadecimal literal that parses back to the
/// identical bit pattern.
pub fn format_hex(v: f64) -> String {
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 {
        (0, -1022)
    } else {
        (1, exp_bits - 1023)
    };
    let digits = format!("{mantissa:013x}");
    let digits = digits.trim_end_matches('0');
    let exp_sign = if exp < 0 { '-' } else { '+' };
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp_sign}{}", exp.abs())
    } else {
        format!("{sign}0x{lead}.{digits}p{exp_sign}{}", exp.abs())
    }
}

/// Parses either a hexadecimal float literal or an ordinary decimal number.
pub fn parse_number(s: &str) -> Option<f64> {
    let t = s.trim();
    let unsigned = t.strip_prefix(['+', '-']).unwrap_or(t);
    if unsigned.starts_with("0x") || unsigned.starts_with("0X") {
        let lower = t.to_ascii_lowercase();
        // hexf-parse rejects a leading '+'
        let lower = lower.strip_prefix('+').unwrap_or(&lower);
        hexf_parse::parse_hexf64(lower, false).ok()
    } else {
        t.parse::<f64>().ok()
    }
}
