//! Optimal linear assignment (Hungarian method with potentials, O(n^3)).

use crate::error::{Error, Result};

/// Minimum-cost perfect matching on a square cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column assigned to row `i`.
    pub row_to_col: Vec<usize>,
    pub cost: f64,
}

/// Solves `min sum_i cost[i][sigma(i)]` over permutations `sigma`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(Error::InvalidCost(format!(
            "row of length {} in a {n}-row matrix",
            row.len()
        )));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCost("non-finite entry".into()));
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            cost: 0.0,
        });
    }

    // 1-based arrays; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
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

    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    Ok(Assignment {
        row_to_col,
        cost: total,
    })
}
