//! Minimum-cost assignment of scene classes to style images.

use crate::error::{Error, Result};

/// Row-major `rows x cols` cost matrix (classes x styles).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("cost matrix needs at least one row and one column"));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!("{} entries for a {rows}x{cols} cost matrix", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cost matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged cost matrix"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> CostMatrix {
        CostMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Comma-separated rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|e| Error::format(format!("bad cost entry {v:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }
}

/// Class index to style index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMap {
    pub mapping: Vec<usize>,
}

impl AssignmentMap {
    pub fn new(mapping: Vec<usize>, num_styles: usize) -> Result<Self> {
        if let Some((c, &s)) = mapping.iter().enumerate().find(|(_, &s)| s >= num_styles) {
            return Err(Error::invalid(format!("class {c} maps to style {s}, but only {num_styles} styles exist")));
        }
        Ok(Self { mapping })
    }

    pub fn num_classes(&self) -> usize {
        self.mapping.len()
    }

    pub fn style_of(&self, class: usize) -> usize {
        self.mapping[class]
    }

    pub fn cost(&self, q: &CostMatrix) -> f64 {
        self.mapping.iter().enumerate().map(|(r, &c)| q.get(r, c)).sum()
    }

    /// One `class_id style_id` line per class.
    pub fn to_text(&self) -> String {
        self.mapping.iter().enumerate().map(|(c, s)| format!("{c} {s}\n")).collect()
    }

    pub fn from_text(text: &str, num_classes: usize, num_styles: usize) -> Result<Self> {
        let mut mapping = vec![None; num_classes];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let mut it = line.split_whitespace();
            let parse = |v: Option<&str>| {
                v.and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::format(format!("malformed assignment line {line:?}")))
            };
            let (c, s) = (parse(it.next())?, parse(it.next())?);
            if it.next().is_some() {
                return Err(Error::format(format!("malformed assignment line {line:?}")));
            }
            if c >= num_classes {
                return Err(Error::invalid(format!("assignment names class {c}, scene has {num_classes}")));
            }
            mapping[c] = Some(s);
        }
        let mapping = mapping
            .into_iter()
            .enumerate()
            .map(|(c, s)| s.ok_or_else(|| Error::invalid(format!("class {c} missing from assignment"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(mapping, num_styles)
    }

    /// Parses a manual designation such as `"0:1,1:0"`.
    pub fn parse_manual(spec: &str, num_classes: usize, num_styles: usize) -> Result<Self> {
        let text: String = spec
            .split(',')
            .map(|pair| {
                let (c, s) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::format(format!("manual pair {pair:?} is not class:style")))?;
                Ok(format!("{} {}\n", c.trim(), s.trim()))
            })
            .collect::<Result<String>>()?;
        Self::from_text(&text, num_classes, num_styles)
    }
}

/// Shortest-augmenting-path Hungarian method for `rows <= cols`; returns the
/// column of every row and the optimal cost.
fn solve_rectangular(cost: &[f64], rows: usize, cols: usize) -> (Vec<usize>, f64) {
    debug_assert!(rows <= cols);
    let inf = f64::INFINITY;
    // 1-based potentials; column 0 is a virtual sentinel.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut row_of_col = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut min_v = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; rows];
    for j in 1..=cols {
        if row_of_col[j] != 0 {
            assignment[row_of_col[j] - 1] = j - 1;
        }
    }
    let total = assignment.iter().enumerate().map(|(r, &c)| cost[r * cols + c]).sum();
    (assignment, total)
}

/// Optimal cost of assigning `rows` (in order) to distinct columns from `free`.
fn sub_optimum(q: &CostMatrix, rows: &[usize], free: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let sub: Vec<f64> = rows.iter().flat_map(|&r| free.iter().map(move |&c| q.get(r, c))).collect();
    solve_rectangular(&sub, rows.len(), free.len()).1
}

/// Injective minimum-cost assignment for `rows <= cols`, choosing the
/// lexicographically smallest mapping among optima.
fn lexicographic_assignment(q: &CostMatrix) -> Vec<usize> {
    let (n, m) = (q.rows(), q.cols());
    let (_, optimum) = solve_rectangular(&q.data, n, m);
    let magnitude = q.data.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * magnitude * n as f64;
    let mut fixed_cost = 0.0;
    let mut free: Vec<usize> = (0..m).collect();
    let mut mapping = Vec::with_capacity(n);
    for r in 0..n {
        let rest: Vec<usize> = (r + 1..n).collect();
        let mut chosen = None;
        for (slot, &c) in free.iter().enumerate() {
            let remaining: Vec<usize> = free.iter().copied().filter(|&x| x != c).collect();
            let total = fixed_cost + q.get(r, c) + sub_optimum(q, &rest, &remaining);
            if total <= optimum + tol {
                chosen = Some(slot);
                break;
            }
        }
        // Rounding could in principle reject every column; fall back to the cheapest completion.
        let slot = chosen.unwrap_or_else(|| {
            (0..free.len())
                .min_by(|&a, &b| {
                    let cost = |s: usize| {
                        let c = free[s];
                        let remaining: Vec<usize> = free.iter().copied().filter(|&x| x != c).collect();
                        q.get(r, c) + sub_optimum(q, &rest, &remaining)
                    };
                    cost(a).total_cmp(&cost(b))
                })
                .expect("free columns remain")
        });
        let c = free.remove(slot);
        fixed_cost += q.get(r, c);
        mapping.push(c);
    }
    mapping
}

/// Class-to-style assignment minimizing the summed cost.
///
/// With at least as many styles as classes the mapping is injective. With more
/// classes than styles the style columns are tiled until every class can be
/// matched, so styles are reused.
pub fn hungarian_assign(q: &CostMatrix) -> AssignmentMap {
    let (c, m) = (q.rows(), q.cols());
    let mapping = if c <= m {
        lexicographic_assignment(q)
    } else {
        let copies = c.div_ceil(m);
        let tiled: Vec<f64> = (0..c).flat_map(|r| (0..copies).flat_map(move |_| q.row(r).iter().copied())).collect();
        let tiled = CostMatrix::new(c, m * copies, tiled).expect("tiled matrix is well formed");
        lexicographic_assignment(&tiled).into_iter().map(|col| col % m).collect()
    };
    AssignmentMap { mapping }
}
