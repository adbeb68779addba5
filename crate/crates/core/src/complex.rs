//! Parsing and formatting of complex literals of the form `a+bi`.
//!
//! Accepted forms: `3`, `-2.5`, `i`, `-i`, `4i`, `1+i`, `1-2i`, `1e-3+2.5e-1i`.
//! Whitespace is not allowed inside a literal.

use crate::error::{Error, Result};
use num_complex::Complex64;

pub fn parse_complex(text: &str) -> Result<Complex64> {
    let err = || Error::Parse(format!("invalid complex literal {text:?}"));
    if text.is_empty() || text.chars().any(char::is_whitespace) {
        return Err(err());
    }
    let Some(body) = text.strip_suffix('i') else {
        return parse_real(text).map(|re| Complex64::new(re, 0.0)).ok_or_else(err);
    };

    // Split at the last sign that is neither leading nor part of an exponent.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&j| matches!(bytes[j], b'+' | b'-') && !matches!(bytes[j - 1], b'e' | b'E'));

    let (re, im_text) = match split {
        Some(j) => (parse_real(&body[..j]).ok_or_else(err)?, &body[j..]),
        None => (0.0, body),
    };
    let im = match im_text {
        "" | "+" => 1.0,
        "-" => -1.0,
        s => parse_real(s).ok_or_else(err)?,
    };
    Ok(Complex64::new(re, im))
}

fn parse_real(text: &str) -> Option<f64> {
    // f64::from_str accepts "inf", "nan" and friends; restrict to numeric literals.
    if !text
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'))
    {
        return None;
    }
    text.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Comma-separated list of complex literals.
pub fn parse_complex_list(text: &str) -> Result<Vec<Complex64>> {
    if text.is_empty() {
        return Err(Error::Parse("empty complex list".into()));
    }
    text.split(',').map(parse_complex).collect()
}

/// Shortest representation that parses back to the same value.
pub fn format_complex(z: Complex64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else if z.re == 0.0 {
        format!("{}i", z.im)
    } else if z.im < 0.0 || z.im.is_sign_negative() {
        format!("{}{}i", z.re, z.im)
    } else {
        format!("{}+{}i", z.re, z.im)
    }
}

pub fn format_complex_list(zs: &[Complex64]) -> String {
    zs.iter().map(|z| format_complex(*z)).collect::<Vec<_>>().join(",")
}
