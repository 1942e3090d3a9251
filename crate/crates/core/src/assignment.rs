//! Exact combinatorial solvers used by the chain transport problems.

/// Minimum-cost perfect assignment for a square cost matrix (Hungarian method
/// with potentials, `O(n^3)`). Returns `(cost, col_of_row)`.
///
/// Entries may be `f64::INFINITY` to forbid a pairing as long as some finite
/// perfect assignment exists.
pub fn hungarian(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    // forbidden entries get a finite surrogate larger than any feasible total
    let finite_sum: f64 = cost
        .iter()
        .flatten()
        .filter(|c| c.is_finite())
        .map(|c| c.abs())
        .sum();
    let big = 1.0 + 4.0 * finite_sum;
    let at = |i: usize, j: usize| {
        let c = cost[i][j];
        if c.is_finite() {
            c
        } else {
            big
        }
    };
    // 1-based arrays as in the classical formulation; row 0 / column 0 are sentinels
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i][col_of_row[i]]).sum();
    (total, col_of_row)
}

/// Largest point count accepted by [`min_cost_matching`].
pub const MATCHING_LIMIT: usize = 22;

/// Minimum-cost matching where every item is either paired (`pair(i, j)`) or
/// left single (`single(i)`, `f64::INFINITY` to forbid). Exact subset dynamic
/// programme over the lowest unresolved item. Returns `(cost, mate)` with
/// `mate[i] == None` for single items.
pub fn min_cost_matching(
    n: usize,
    pair: impl Fn(usize, usize) -> f64,
    single: impl Fn(usize) -> f64,
) -> (f64, Vec<Option<usize>>) {
    assert!(
        n <= MATCHING_LIMIT,
        "matching limited to {MATCHING_LIMIT} items"
    );
    let full = (1usize << n) - 1;
    let mut best = vec![f64::INFINITY; 1 << n];
    let mut choice = vec![(usize::MAX, usize::MAX); 1 << n];
    best[0] = 0.0;
    // best[mask] = cheapest way to resolve exactly the items in `mask`,
    // always resolving the lowest item of the mask first
    for mask in 1..=full {
        let i = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << i);
        let mut b = best[rest] + single(i);
        let mut c = (i, usize::MAX);
        let mut others = rest;
        while others != 0 {
            let j = others.trailing_zeros() as usize;
            others &= others - 1;
            let cand = best[rest & !(1 << j)] + pair(i, j);
            if cand < b {
                b = cand;
                c = (i, j);
            }
        }
        best[mask] = b;
        choice[mask] = c;
    }
    let mut mate = vec![None; n];
    let mut mask = full;
    while mask != 0 {
        let (i, j) = choice[mask];
        mask &= !(1 << i);
        if j != usize::MAX {
            mate[i] = Some(j);
            mate[j] = Some(i);
            mask &= !(1 << j);
        }
    }
    (best[full], mate)
}
