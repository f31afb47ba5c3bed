//! Matrix literals such as `"2 0; 0 0.5"`: rows split on `;`, entries on
//! whitespace or `,`.

use netstab_core::{Matrix, State};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("empty matrix")]
    Empty,
    #[error("row {row}: cannot parse `{token}` as a number")]
    BadNumber { row: usize, token: String },
    #[error("row {row}: entry `{token}` is not finite")]
    NotFinite { row: usize, token: String },
    #[error("row {row} has {got} entries, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("expected a vector, got a {rows}x{cols} matrix")]
    NotVector { rows: usize, cols: usize },
}

pub fn parse_matrix(text: &str) -> Result<Matrix, MatrixError> {
    let mut rows: Vec<&str> = text.split(';').collect();
    if rows.len() > 1 && rows.last().is_some_and(|r| r.trim().is_empty()) {
        rows.pop();
    }
    let mut data = Vec::new();
    let mut width = None;
    for (i, row) in rows.iter().enumerate() {
        let mut count = 0;
        for token in row
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
        {
            let v: f64 = token.parse().map_err(|_| MatrixError::BadNumber {
                row: i + 1,
                token: token.to_string(),
            })?;
            if !v.is_finite() {
                return Err(MatrixError::NotFinite {
                    row: i + 1,
                    token: token.to_string(),
                });
            }
            data.push(v);
            count += 1;
        }
        match width {
            None if count == 0 => return Err(MatrixError::Empty),
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(MatrixError::Ragged {
                    row: i + 1,
                    got: count,
                    expected: w,
                })
            }
            _ => {}
        }
    }
    let cols = width.ok_or(MatrixError::Empty)?;
    Ok(Matrix::from_row_slice(data.len() / cols, cols, &data))
}

/// A single row or single column, as a state vector.
pub fn parse_vector(text: &str) -> Result<State, MatrixError> {
    let m = parse_matrix(text)?;
    if m.nrows() != 1 && m.ncols() != 1 {
        return Err(MatrixError::NotVector {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(State::from_iterator(m.len(), m.transpose().iter().copied()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals() {
        let m = parse_matrix("2 0; 0 0.5").unwrap();
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]));
        assert_eq!(parse_matrix("2").unwrap(), Matrix::from_element(1, 1, 2.0));
        assert_eq!(
            parse_matrix("1, 2;3,4;").unwrap(),
            Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])
        );
        assert_eq!(
            parse_matrix("1;0").unwrap(),
            Matrix::from_row_slice(2, 1, &[1.0, 0.0])
        );
    }

    #[test]
    fn vectors() {
        assert_eq!(
            parse_vector("0.1 -0.2").unwrap(),
            State::from_row_slice(&[0.1, -0.2])
        );
        assert_eq!(
            parse_vector("0.1; -0.2").unwrap(),
            State::from_row_slice(&[0.1, -0.2])
        );
        assert!(matches!(
            parse_vector("1 2; 3 4"),
            Err(MatrixError::NotVector { .. })
        ));
    }

    #[test]
    fn rejects() {
        assert_eq!(parse_matrix(""), Err(MatrixError::Empty));
        assert_eq!(parse_matrix(" ; "), Err(MatrixError::Empty));
        assert!(matches!(
            parse_matrix("1 2; 3"),
            Err(MatrixError::Ragged { row: 2, .. })
        ));
        assert!(matches!(
            parse_matrix("1 x"),
            Err(MatrixError::BadNumber { .. })
        ));
        assert!(matches!(
            parse_matrix("1 inf"),
            Err(MatrixError::NotFinite { .. })
        ));
        assert!(matches!(
            parse_matrix("1;;2"),
            Err(MatrixError::Ragged { .. })
        ));
    }
}
