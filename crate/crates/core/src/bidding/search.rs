//! Derivative-free minimisation over the non-negative quadrant of the
//! plane: log-grid seeding, Nelder–Mead from the best seeds, then a
//! compass search along the axes and diagonals to settle on kinks.

/// Tuning for [`minimize_quadrant`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Grid exponents: points are `scale·10^k` for `k` evenly spaced in
    /// `[grid_lo, grid_hi]`, plus zero.
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    /// Number of grid points used as Nelder–Mead starts.
    pub starts: usize,
    /// Evaluation cap for each Nelder–Mead run.
    pub max_evals: usize,
    /// Objective tolerance, relative to `1 + |f|`.
    pub ftol: f64,
    /// Smallest compass step, relative to the scale.
    pub xtol: f64,
    /// Points per coordinate line scanned through the incumbent before the
    /// final polish; zero disables the scans. The objectives handled here
    /// jump where the active set changes, and a dense scan finds the
    /// basins a simplex steps over.
    pub line_points: usize,
    /// Initial compass step, relative to `|x| + scale`.
    pub compass_step: f64,
}

impl SearchOptions {
    /// Thorough settings for standalone fits.
    pub const THOROUGH: SearchOptions = SearchOptions {
        grid_lo: -4.0,
        grid_hi: 3.0,
        grid_points: 36,
        starts: 8,
        max_evals: 400,
        ftol: 1e-12,
        xtol: 1e-12,
        line_points: 400,
        compass_step: 0.25,
    };

    /// Cheaper settings for repeated warm-started fits inside a simulation.
    pub const WARM: SearchOptions = SearchOptions {
        grid_lo: -3.0,
        grid_hi: 2.0,
        grid_points: 4,
        starts: 1,
        max_evals: 60,
        ftol: 1e-10,
        xtol: 1e-6,
        line_points: 0,
        compass_step: 0.01,
    };
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self::THOROUGH
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult {
    pub x: [f64; 2],
    pub value: f64,
    pub evals: usize,
    /// True when the final compass search shrank its step below `xtol`
    /// without finding a better point along any probe direction.
    pub converged: bool,
}

#[inline]
fn project(x: [f64; 2]) -> [f64; 2] {
    [x[0].max(0.0), x[1].max(0.0)]
}

struct Counter<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut([f64; 2]) -> f64> Counter<F> {
    fn eval(&mut self, x: [f64; 2]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimises `f` over `x ≥ 0`. `scale` sets the magnitude of each
/// coordinate; `warm` adds an extra start.
pub fn minimize_quadrant<F>(f: F, scale: [f64; 2], warm: Option<[f64; 2]>, opts: &SearchOptions) -> SearchResult
where
    F: FnMut([f64; 2]) -> f64,
{
    let mut obj = Counter { f, evals: 0 };
    let scale = [positive_or(scale[0], 1.0), positive_or(scale[1], 1.0)];

    let mut axis: Vec<f64> = vec![0.0];
    let n = opts.grid_points.max(1);
    for i in 0..n {
        let k = if n == 1 { opts.grid_lo } else { opts.grid_lo + (opts.grid_hi - opts.grid_lo) * i as f64 / (n - 1) as f64 };
        axis.push(10f64.powf(k));
    }
    let mut seeds: Vec<([f64; 2], f64)> = Vec::with_capacity(axis.len() * axis.len() + 1);
    for &a in &axis {
        for &b in &axis {
            let x = [a * scale[0], b * scale[1]];
            seeds.push((x, obj.eval(x)));
        }
    }
    seeds.sort_by(|a, b| a.1.total_cmp(&b.1));
    seeds.truncate(opts.starts.max(1));
    if let Some(w) = warm {
        let w = project(w);
        if w.iter().all(|v| v.is_finite()) {
            seeds.insert(0, (w, obj.eval(w)));
        }
    }

    if opts.line_points > 0 {
        // Linear box grid around the best log-grid point, whose cells are
        // fine enough to land in narrow basins.
        let m = (opts.line_points as f64).sqrt().ceil() as usize * 3;
        let top = seeds[0].0;
        let hi = [3.0 * (top[0] + scale[0]), 3.0 * (top[1] + scale[1])];
        let mut boxed = Vec::with_capacity((m + 1) * (m + 1));
        for i in 0..=m {
            for j in 0..=m {
                let x = [hi[0] * i as f64 / m as f64, hi[1] * j as f64 / m as f64];
                boxed.push((x, obj.eval(x)));
            }
        }
        boxed.sort_by(|a, b| a.1.total_cmp(&b.1));
        seeds.extend(boxed.into_iter().take(opts.starts.max(1)));
        seeds.sort_by(|a, b| a.1.total_cmp(&b.1));
    }

    let mut best = seeds[0];
    for &(x0, f0) in &seeds {
        let (x, v) = nelder_mead(&mut obj, x0, f0, scale, opts);
        if v < best.1 {
            best = (x, v);
        }
    }
    // One restart from the incumbent to escape a collapsed simplex.
    let (x, v) = nelder_mead(&mut obj, best.0, best.1, scale, opts);
    if v < best.1 {
        best = (x, v);
    }
    if opts.line_points > 0 {
        for _ in 0..2 {
            let before = best.1;
            for axis in 0..2 {
                best = line_scan(&mut obj, best, axis, scale, opts.line_points);
            }
            let (x, v) = nelder_mead(&mut obj, best.0, best.1, scale, opts);
            if v < best.1 {
                best = (x, v);
            }
            if best.1 >= before {
                break;
            }
        }
    }
    let (x, v, converged) = compass(&mut obj, best.0, best.1, scale, opts);
    SearchResult { x, value: v, evals: obj.evals, converged }
}

fn positive_or(v: f64, fallback: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        v
    } else {
        fallback
    }
}

fn nelder_mead<F: FnMut([f64; 2]) -> f64>(
    obj: &mut Counter<F>,
    x0: [f64; 2],
    f0: f64,
    scale: [f64; 2],
    opts: &SearchOptions,
) -> ([f64; 2], f64) {
    let step = |i: usize| (0.1 * x0[i].abs()).max(0.05 * scale[i]);
    let mut simplex: [([f64; 2], f64); 3] = [(x0, f0), (x0, 0.0), (x0, 0.0)];
    for i in 0..2 {
        let mut x = x0;
        x[i] += step(i);
        simplex[i + 1] = (x, obj.eval(x));
    }
    let start = obj.evals;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (lo, hi) = (simplex[0].1, simplex[2].1);
        let spread = (hi - lo).abs();
        let size = (0..2)
            .map(|i| {
                let m = simplex.iter().map(|s| s.0[i]).fold(f64::NEG_INFINITY, f64::max);
                let n = simplex.iter().map(|s| s.0[i]).fold(f64::INFINITY, f64::min);
                (m - n) / scale[i]
            })
            .fold(0.0, f64::max);
        if (spread <= opts.ftol * (1.0 + lo.abs()) && size <= 1e-6) || size <= opts.xtol {
            return (simplex[0].0, simplex[0].1);
        }
        if obj.evals - start >= opts.max_evals {
            return (simplex[0].0, simplex[0].1);
        }
        let c = [(simplex[0].0[0] + simplex[1].0[0]) / 2.0, (simplex[0].0[1] + simplex[1].0[1]) / 2.0];
        let w = simplex[2].0;
        let along = |k: f64| project([c[0] + k * (w[0] - c[0]), c[1] + k * (w[1] - c[1])]);

        let xr = along(-1.0);
        let fr = obj.eval(xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = obj.eval(xe);
            simplex[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[2].1 {
                let x = along(-0.5);
                (x, obj.eval(x))
            } else {
                let x = along(0.5);
                (x, obj.eval(x))
            };
            if fc < simplex[2].1.min(fr) {
                simplex[2] = (xc, fc);
            } else {
                let b = simplex[0].0;
                for s in simplex.iter_mut().skip(1) {
                    let x = project([(b[0] + s.0[0]) / 2.0, (b[1] + s.0[1]) / 2.0]);
                    *s = (x, obj.eval(x));
                }
            }
        }
    }
}

/// Scans coordinate `axis` over `[0, 4·(|x| + scale)]` with the other
/// coordinate held at the incumbent.
fn line_scan<F: FnMut([f64; 2]) -> f64>(
    obj: &mut Counter<F>,
    best: ([f64; 2], f64),
    axis: usize,
    scale: [f64; 2],
    points: usize,
) -> ([f64; 2], f64) {
    let hi = 4.0 * (best.0[axis].abs() + scale[axis]);
    let mut out = best;
    for i in 0..=points {
        let mut x = best.0;
        x[axis] = hi * i as f64 / points as f64;
        let v = obj.eval(x);
        if v < out.1 {
            out = (x, v);
        }
    }
    out
}

const DIRECTIONS: [[f64; 2]; 4] = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]];

fn compass<F: FnMut([f64; 2]) -> f64>(
    obj: &mut Counter<F>,
    mut x: [f64; 2],
    mut fx: f64,
    scale: [f64; 2],
    opts: &SearchOptions,
) -> ([f64; 2], f64, bool) {
    let mut step = opts.compass_step;
    let mut budget = 40 * opts.max_evals;
    while step > opts.xtol && budget > 0 {
        let mut improved = false;
        for d in DIRECTIONS {
            for sign in [1.0, -1.0] {
                let y = project([x[0] + sign * step * d[0] * (x[0].abs() + scale[0]), x[1] + sign * step * d[1] * (x[1].abs() + scale[1])]);
                budget = budget.saturating_sub(1);
                let fy = obj.eval(y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if improved {
            step *= 2.0;
            step = step.min(1.0);
        } else {
            step /= 2.0;
        }
    }
    (x, fx, step <= opts.xtol)
}
