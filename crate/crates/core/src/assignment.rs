//! Dense linear assignment (Jonker–Volgenant).
//!
//! Column reduction, two rounds of augmenting row reduction, then
//! shortest-augmenting-path completion for the rows still free. The solver
//! is exact: it returns a minimum-cost perfect matching.

/// Minimum-cost assignment for an `n × n` row-major cost matrix. Returns
/// `x` with `x[row] = column`.
pub fn lapjv(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![0];
    }
    let c = |i: usize, j: usize| cost[i * n + j];
    let mut x: Vec<isize> = vec![-1; n];
    let mut y: Vec<isize> = vec![-1; n];
    let mut v = vec![f64::INFINITY; n];
    let mut free_rows: Vec<usize> = vec![0; n];

    // Column reduction.
    let mut col_best = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            let cij = c(i, j);
            if cij < v[j] {
                v[j] = cij;
                col_best[j] = i;
            }
        }
    }
    let mut unique = vec![true; n];
    for j in (0..n).rev() {
        let i = col_best[j];
        if x[i] < 0 {
            x[i] = j as isize;
            y[j] = i as isize;
        } else {
            unique[i] = false;
        }
    }
    let mut n_free = 0;
    for i in 0..n {
        if x[i] < 0 {
            free_rows[n_free] = i;
            n_free += 1;
        } else if unique[i] {
            let j = x[i] as usize;
            let mut min = f64::INFINITY;
            for j2 in 0..n {
                if j2 != j {
                    let r = c(i, j2) - v[j2];
                    if r < min {
                        min = r;
                    }
                }
            }
            v[j] -= min;
        }
    }

    // Augmenting row reduction.
    let mut rounds = 0;
    while n_free > 0 && rounds < 2 {
        n_free = augmenting_row_reduction(n, cost, n_free, &mut free_rows, &mut x, &mut y, &mut v);
        rounds += 1;
    }

    // Shortest augmenting paths.
    if n_free > 0 {
        let mut pred = vec![0usize; n];
        let mut d = vec![0.0; n];
        let mut cols = vec![0usize; n];
        for &free_i in &free_rows[..n_free] {
            let mut j = find_path(n, cost, free_i, &y, &mut v, &mut pred, &mut d, &mut cols);
            loop {
                let i = pred[j];
                y[j] = i as isize;
                let prev = x[i];
                x[i] = j as isize;
                if i == free_i {
                    break;
                }
                j = prev as usize;
            }
        }
    }
    x.into_iter().map(|j| j as usize).collect()
}

fn augmenting_row_reduction(
    n: usize,
    cost: &[f64],
    n_free: usize,
    free_rows: &mut [usize],
    x: &mut [isize],
    y: &mut [isize],
    v: &mut [f64],
) -> usize {
    let mut current = 0;
    let mut new_free = 0;
    let mut rr_cnt = 0usize;
    while current < n_free {
        rr_cnt += 1;
        let free_i = free_rows[current];
        current += 1;
        let row = &cost[free_i * n..(free_i + 1) * n];
        let mut j1 = 0usize;
        let mut v1 = row[0] - v[0];
        let mut j2: isize = -1;
        let mut v2 = f64::INFINITY;
        for j in 1..n {
            let r = row[j] - v[j];
            if r < v2 {
                if r >= v1 {
                    v2 = r;
                    j2 = j as isize;
                } else {
                    v2 = v1;
                    v1 = r;
                    j2 = j1 as isize;
                    j1 = j;
                }
            }
        }
        let mut i0 = y[j1];
        let v1_new = v[j1] - (v2 - v1);
        let v1_lowers = v1_new < v[j1];
        if rr_cnt < current * n {
            if v1_lowers {
                v[j1] = v1_new;
            } else if i0 >= 0 && j2 >= 0 {
                j1 = j2 as usize;
                i0 = y[j1];
            }
            if i0 >= 0 {
                if v1_lowers {
                    current -= 1;
                    free_rows[current] = i0 as usize;
                } else {
                    free_rows[new_free] = i0 as usize;
                    new_free += 1;
                }
            }
        } else if i0 >= 0 {
            free_rows[new_free] = i0 as usize;
            new_free += 1;
        }
        x[free_i] = j1 as isize;
        y[j1] = free_i as isize;
    }
    new_free
}

/// Moves the columns with minimal `d` among `cols[lo..]` to the front of
/// that range and returns the end of the block.
fn find_min_block(n: usize, lo: usize, d: &[f64], cols: &mut [usize]) -> usize {
    let mut hi = lo + 1;
    let mut mind = d[cols[lo]];
    for k in hi..n {
        let j = cols[k];
        if d[j] <= mind {
            if d[j] < mind {
                hi = lo;
                mind = d[j];
            }
            cols[k] = cols[hi];
            cols[hi] = j;
            hi += 1;
        }
    }
    hi
}

#[allow(clippy::too_many_arguments)]
fn scan(
    n: usize,
    cost: &[f64],
    lo: &mut usize,
    hi: &mut usize,
    d: &mut [f64],
    cols: &mut [usize],
    pred: &mut [usize],
    y: &[isize],
    v: &[f64],
) -> Option<usize> {
    while *lo != *hi {
        let j = cols[*lo];
        *lo += 1;
        let i = y[j] as usize;
        let mind = d[j];
        let h = cost[i * n + j] - v[j] - mind;
        let mut k = *hi;
        while k < n {
            let j = cols[k];
            let red = cost[i * n + j] - v[j] - h;
            if red < d[j] {
                d[j] = red;
                pred[j] = i;
                if red == mind {
                    if y[j] < 0 {
                        return Some(j);
                    }
                    cols[k] = cols[*hi];
                    cols[*hi] = j;
                    *hi += 1;
                }
            }
            k += 1;
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn find_path(
    n: usize,
    cost: &[f64],
    start_i: usize,
    y: &[isize],
    v: &mut [f64],
    pred: &mut [usize],
    d: &mut [f64],
    cols: &mut [usize],
) -> usize {
    let mut lo = 0;
    let mut hi = 0;
    let mut n_ready = 0;
    for j in 0..n {
        cols[j] = j;
        pred[j] = start_i;
        d[j] = cost[start_i * n + j] - v[j];
    }
    let final_j = loop {
        if lo == hi {
            n_ready = lo;
            hi = find_min_block(n, lo, d, cols);
            if let Some(&j) = cols[lo..hi].iter().find(|&&j| y[j] < 0) {
                break j;
            }
        }
        if let Some(j) = scan(n, cost, &mut lo, &mut hi, d, cols, pred, y, v) {
            break j;
        }
    };
    let mind = d[final_j];
    for &j in &cols[..n_ready] {
        v[j] += d[j] - mind;
    }
    final_j
}
