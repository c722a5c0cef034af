//! Rectangular linear sum assignment (Hungarian method with potentials).

/// Minimum-cost matching of every row to a distinct column of a
/// `rows x cols` cost matrix (row-major). When `rows > cols` the roles are
/// swapped and every column is matched instead.
///
/// Returns `assignment[row] = Some(col)` and the total cost, summed in row
/// order.
pub fn linear_sum_assignment(costs: &[f64], rows: usize, cols: usize) -> (Vec<Option<usize>>, f64) {
    assert_eq!(costs.len(), rows * cols, "cost matrix shape mismatch");
    let mut assignment = vec![None; rows];
    if rows == 0 || cols == 0 {
        return (assignment, 0.0);
    }
    if rows <= cols {
        for (r, c) in hungarian(|r, c| costs[r * cols + c], rows, cols).into_iter().enumerate() {
            assignment[r] = Some(c);
        }
    } else {
        for (c, r) in hungarian(|c, r| costs[r * cols + c], cols, rows).into_iter().enumerate() {
            assignment[r] = Some(c);
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| costs[r * cols + c]))
        .sum();
    (assignment, total)
}

/// Shortest augmenting path Hungarian algorithm, O(n^2 m) for `n <= m`.
/// Returns the column matched to each row.
fn hungarian(cost: impl Fn(usize, usize) -> f64, n: usize, m: usize) -> Vec<usize> {
    debug_assert!(n <= m);
    // 1-based with index 0 as the virtual root
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut min_slack = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        min_slack.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![0usize; n];
    for j in 1..=m {
        if matched_row[j] != 0 {
            out[matched_row[j] - 1] = j - 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_textbook_instance() {
        let costs = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let (a, total) = linear_sum_assignment(&costs, 3, 3);
        assert_eq!(a, vec![Some(1), Some(0), Some(2)]);
        assert_eq!(total, 5.0);
    }

    #[test]
    fn wide_matrix_uses_cheapest_columns() {
        let costs = [9.0, 1.0, 9.0, 9.0, 9.0, 9.0, 9.0, 2.0];
        let (a, total) = linear_sum_assignment(&costs, 2, 4);
        assert_eq!(a, vec![Some(1), Some(3)]);
        assert_eq!(total, 3.0);
    }

    #[test]
    fn tall_matrix_leaves_rows_unassigned() {
        let costs = [5.0, 1.0, 2.0];
        let (a, total) = linear_sum_assignment(&costs, 3, 1);
        assert_eq!(a, vec![None, Some(0), None]);
        assert_eq!(total, 1.0);
    }

    #[test]
    fn empty_matrix() {
        let (a, total) = linear_sum_assignment(&[], 0, 5);
        assert!(a.is_empty());
        assert_eq!(total, 0.0);
    }
}
