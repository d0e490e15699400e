//! Operand-length grids indexed by `(la, lb)` and matrices over their cells.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Operand digit lengths beyond this do not fit the u64 pair indexing.
pub const MAX_GRID_DIGITS: usize = 19;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("invalid length range {min}..={max} (lengths must satisfy 1 <= min <= max <= {MAX_GRID_DIGITS})")]
    InvalidRange { min: usize, max: usize },
    #[error("grid mismatch: expected {expected}, found {found}")]
    Mismatch { expected: String, found: String },
}

/// Rows are lengths of the first operand, columns lengths of the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LengthGrid {
    pub la_min: usize,
    pub la_max: usize,
    pub lb_min: usize,
    pub lb_max: usize,
}

impl LengthGrid {
    pub fn new(la: (usize, usize), lb: (usize, usize)) -> Result<Self, GridError> {
        for (min, max) in [la, lb] {
            if min == 0 || min > max || max > MAX_GRID_DIGITS {
                return Err(GridError::InvalidRange { min, max });
            }
        }
        Ok(Self { la_min: la.0, la_max: la.1, lb_min: lb.0, lb_max: lb.1 })
    }

    /// `la, lb ∈ [1, max]`.
    pub fn square(max: usize) -> Result<Self, GridError> {
        Self::new((1, max), (1, max))
    }

    pub fn validate(&self) -> Result<(), GridError> {
        Self::new((self.la_min, self.la_max), (self.lb_min, self.lb_max)).map(|_| ())
    }

    pub fn rows(&self) -> usize {
        self.la_max - self.la_min + 1
    }

    pub fn cols(&self) -> usize {
        self.lb_max - self.lb_min + 1
    }

    pub fn cell_count(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn max_digits(&self) -> usize {
        self.la_max.max(self.lb_max)
    }

    /// Cells in `(la, lb)` lexicographic order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.la_min..=self.la_max).flat_map(move |la| (self.lb_min..=self.lb_max).map(move |lb| (la, lb)))
    }

    pub fn cell_index(&self, la: usize, lb: usize) -> Option<usize> {
        if (self.la_min..=self.la_max).contains(&la) && (self.lb_min..=self.lb_max).contains(&lb) {
            Some((la - self.la_min) * self.cols() + (lb - self.lb_min))
        } else {
            None
        }
    }

    pub fn contains(&self, la: usize, lb: usize) -> bool {
        self.cell_index(la, lb).is_some()
    }

    pub fn describe(&self) -> String {
        format!("la {}..={} x lb {}..={}", self.la_min, self.la_max, self.lb_min, self.lb_max)
    }
}

/// Row-major values over the cells of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMatrix<T> {
    pub grid: LengthGrid,
    pub values: Vec<T>,
}

impl<T: Clone> CellMatrix<T> {
    pub fn filled(grid: LengthGrid, value: T) -> Self {
        Self { grid, values: vec![value; grid.cell_count()] }
    }
}

impl<T> CellMatrix<T> {
    pub fn get(&self, la: usize, lb: usize) -> Option<&T> {
        self.grid.cell_index(la, lb).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, la: usize, lb: usize) -> Option<&mut T> {
        self.grid.cell_index(la, lb).map(move |i| &mut self.values[i])
    }

    pub fn rows(&self) -> Vec<&[T]> {
        self.values.chunks(self.grid.cols()).collect()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> CellMatrix<U> {
        CellMatrix { grid: self.grid, values: self.values.iter().map(f).collect() }
    }

    /// Comma-separated matrix: header `la\lb,<lb...>`, one row per `la`.
    pub fn to_csv(&self, mut cell: impl FnMut(&T) -> String) -> String {
        let mut out = String::from("la\\lb");
        for lb in self.grid.lb_min..=self.grid.lb_max {
            out.push_str(&format!(",{lb}"));
        }
        out.push('\n');
        for (r, row) in self.rows().into_iter().enumerate() {
            out.push_str(&(self.grid.la_min + r).to_string());
            for v in row {
                out.push(',');
                out.push_str(&cell(v));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_grid_cells() {
        let g = LengthGrid::square(10).unwrap();
        assert_eq!(g.cell_count(), 100);
        let cells: Vec<_> = g.cells().collect();
        assert_eq!(cells[0], (1, 1));
        assert_eq!(cells[1], (1, 2));
        assert_eq!(cells[99], (10, 10));
        assert_eq!(g.cell_index(2, 1), Some(10));
        assert_eq!(g.cell_index(11, 1), None);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(LengthGrid::new((0, 3), (1, 3)).is_err());
        assert!(LengthGrid::new((4, 3), (1, 3)).is_err());
        assert!(LengthGrid::new((1, 20), (1, 3)).is_err());
    }

    #[test]
    fn csv_layout() {
        let g = LengthGrid::new((11, 12), (1, 2)).unwrap();
        let m = CellMatrix { grid: g, values: vec![1, 2, 3, 4] };
        assert_eq!(m.to_csv(|v| v.to_string()), "la\\lb,1,2\n11,1,2\n12,3,4\n");
        assert_eq!(m.get(12, 1), Some(&3));
    }
}
