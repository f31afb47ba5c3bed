//! Number formatting for every CSV cell: C-style `%.12g`.

/// `%.12g`, except that every non-finite value is written as `inf`.
pub fn g12(x: f64) -> String {
    if !x.is_finite() {
        return "inf".to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..12).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa), sign, exp.abs())
    } else {
        let decimals = (11 - exp) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Joins already-formatted cells into one CSV line (no trailing newline).
pub fn row<I, S>(cells: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    cells
        .into_iter()
        .map(|c| c.as_ref().to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_printf() {
        let cases = [
            (0.0, "0"),
            (-0.0, "0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (-2.25, "-2.25"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333333"),
            (2.0f64.ln(), "0.69314718056"),
            (4.23606797749979, "4.2360679775"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (1e-20, "1e-20"),
            (1e100, "1e+100"),
            (999999999999.5, "1e+12"),
            (f64::INFINITY, "inf"),
            (f64::NEG_INFINITY, "inf"),
            (f64::NAN, "inf"),
        ];
        for (x, want) in cases {
            assert_eq!(g12(x), want, "{x:e}");
        }
    }

    #[test]
    fn row_joins() {
        assert_eq!(row(["a", "b"]), "a,b");
    }

    proptest! {
        #[test]
        fn round_trips_to_twelve_digits(x in -1e30f64..1e30) {
            let back: f64 = g12(x).parse().unwrap();
            prop_assert!((back - x).abs() <= 1e-11 * x.abs());
        }
    }
}
