//! Maximum-gain linear assignment (Hungarian method with potentials).

use ndarray::ArrayView2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row, `None` when the row was paired with a
    /// padding column.
    pub row_to_col: Vec<Option<usize>>,
    /// Sum of the gains of the real pairs, accumulated in row order.
    pub total: f64,
}

impl Assignment {
    pub fn col_to_row(&self, cols: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; cols];
        for (r, c) in self.row_to_col.iter().enumerate() {
            if let Some(c) = *c {
                out[c] = Some(r);
            }
        }
        out
    }
}

/// Pairs rows with columns so that the total gain is maximal. Rectangular
/// inputs are zero-padded to a square matrix internally.
pub fn hungarian_assign(gain: ArrayView2<'_, f64>) -> Result<Assignment> {
    let (rows, cols) = gain.dim();
    if let Some(((r, c), v)) = gain.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gain[{r}][{c}] = {v}")));
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            row_to_col: vec![None; rows],
            total: 0.0,
        });
    }

    let n = rows.max(cols);
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            -gain[[i, j]]
        } else {
            0.0
        }
    };

    // 1-based potentials; column 0 is the virtual root of each augmenting search.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![None; rows];
    for j in 1..=n {
        let i = col_owner[j];
        if i >= 1 && i <= rows && j <= cols {
            row_to_col[i - 1] = Some(j - 1);
        }
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| gain[[r, c]]))
        .sum();
    Ok(Assignment { row_to_col, total })
}
