//! Reads a previously written spectrum back in, so `critical-p` can reuse it.
//!
//! Accepts either `spectrum_final.csv` (`index,exponent,multiplier`) or the
//! running series `spectrum.csv` (`step,exp1,...`, last row wins).

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumCsvError {
    #[error("empty spectrum file")]
    Empty,
    #[error("unrecognized header `{0}`")]
    BadHeader(String),
    #[error("line {line}: expected {expected} fields, got {got}")]
    FieldCount {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: cannot parse `{token}`")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: index {got} out of order")]
    BadIndex { line: usize, got: String },
    #[error("no exponents in file")]
    NoRows,
}

fn number(token: &str, line: usize) -> Result<f64, SpectrumCsvError> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| SpectrumCsvError::BadNumber {
            line,
            token: token.to_string(),
        })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SpectrumCsvError::BadNumber {
            line,
            token: token.to_string(),
        })
    }
}

/// Exponents in file order.
pub fn parse_spectrum_csv(text: &str) -> Result<Vec<f64>, SpectrumCsvError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (_, header) = lines.next().ok_or(SpectrumCsvError::Empty)?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();

    if columns == ["index", "exponent", "multiplier"] {
        let mut out = Vec::new();
        for (line, l) in lines {
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() != 3 {
                return Err(SpectrumCsvError::FieldCount {
                    line,
                    expected: 3,
                    got: fields.len(),
                });
            }
            if fields[0].trim().parse::<usize>().ok() != Some(out.len() + 1) {
                return Err(SpectrumCsvError::BadIndex {
                    line,
                    got: fields[0].to_string(),
                });
            }
            number(fields[2], line)?;
            out.push(number(fields[1], line)?);
        }
        return if out.is_empty() {
            Err(SpectrumCsvError::NoRows)
        } else {
            Ok(out)
        };
    }

    let series_header = columns.len() >= 2
        && columns[0] == "step"
        && columns[1..]
            .iter()
            .enumerate()
            .all(|(i, c)| *c == format!("exp{}", i + 1));
    if !series_header {
        return Err(SpectrumCsvError::BadHeader(header.to_string()));
    }
    let mut last = None;
    for (line, l) in lines {
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != columns.len() {
            return Err(SpectrumCsvError::FieldCount {
                line,
                expected: columns.len(),
                got: fields.len(),
            });
        }
        number(fields[0], line)?;
        last = Some(
            fields[1..]
                .iter()
                .map(|f| number(f, line))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    last.ok_or(SpectrumCsvError::NoRows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_form() {
        let text = "index,exponent,multiplier\n1,0.342,1.408\n2,-0.288,0.75\n";
        assert_eq!(parse_spectrum_csv(text).unwrap(), vec![0.342, -0.288]);
    }

    #[test]
    fn series_form_takes_last_row() {
        let text = "step,exp1,exp2\n1000,0.3,-0.2\n2000,0.34,-0.29\n";
        assert_eq!(parse_spectrum_csv(text).unwrap(), vec![0.34, -0.29]);
    }

    #[test]
    fn rejects() {
        assert_eq!(parse_spectrum_csv(""), Err(SpectrumCsvError::Empty));
        assert!(matches!(
            parse_spectrum_csv("a,b\n1,2"),
            Err(SpectrumCsvError::BadHeader(_))
        ));
        assert_eq!(
            parse_spectrum_csv("index,exponent,multiplier\n"),
            Err(SpectrumCsvError::NoRows)
        );
        assert!(matches!(
            parse_spectrum_csv("index,exponent,multiplier\n2,0.1,1.1"),
            Err(SpectrumCsvError::BadIndex { .. })
        ));
        assert!(matches!(
            parse_spectrum_csv("step,exp1\n1,inf"),
            Err(SpectrumCsvError::BadNumber { .. })
        ));
        assert!(matches!(
            parse_spectrum_csv("step,exp1,exp2\n1,0.1"),
            Err(SpectrumCsvError::FieldCount { .. })
        ));
    }
}
