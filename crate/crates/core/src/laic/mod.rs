//! Locally adaptive illumination compensation.
//!
//! Brightening is posed as a linear program over the enhanced value channel:
//! minimize the total variation of the per-pixel illumination gain minus a
//! weighted local-contrast term, subject to `[0, 1]` bounds and constraints
//! that preserve each pixel's rank against its neighborhood mean. The gain
//! field comes out piecewise constant, which suppresses halos and double
//! edges.

mod simplex;

use crate::raster::{recombine_luma, split_luma, Raster, RasterError};
use crate::scalar::{eps_guard, Scalar};

pub use simplex::{solve_lp, LpSolution, LpStatus};

#[derive(Debug, thiserror::Error)]
pub enum LaicError {
    #[error("solver hit the pivot cap after {pivots} pivots")]
    IterationLimit { pivots: usize },
    #[error("solver returned an infeasible/unverified point: {0}")]
    Numerics(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// How the gain field is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainGrid {
    /// Full resolution for small images, a reduced grid otherwise.
    Auto,
    /// Always solve one variable per pixel.
    FullResolution,
    /// Solve on an `h x w` grid and bilinearly upsample the gain field.
    Grid { h: usize, w: usize },
}

/// Images up to this many pixels solve at full resolution under
/// [`GainGrid::Auto`]; larger ones use the reduced grid below.
pub const FULL_RES_PIXEL_LIMIT: usize = 1024;
pub const AUTO_GRID: (usize, usize) = (32, 32);

#[derive(Debug, Clone, Copy)]
pub struct LaicOptions<S> {
    /// Local-contrast weight.
    pub lambda2: S,
    /// Neighborhood half-width of the box window.
    pub radius: usize,
    /// Divide guard for the gain denominator.
    pub eps: S,
    pub gain_grid: GainGrid,
    pub solver_tol: S,
}

impl<S: Scalar> Default for LaicOptions<S> {
    fn default() -> Self {
        Self {
            lambda2: S::of(0.05),
            radius: 7,
            eps: eps_guard(),
            gain_grid: GainGrid::Auto,
            solver_tol: S::of(1e-7),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// One sparse constraint row `sum coeffs . x  <sense>  rhs`.
#[derive(Debug, Clone)]
pub struct Row<S> {
    pub coeffs: Vec<(usize, S)>,
    pub sense: Sense,
    pub rhs: S,
}

/// The assembled LP. Variables `0..n_pixels` are the enhanced value channel;
/// the rest are total-variation auxiliaries, one per horizontal and per
/// vertical gain difference.
#[derive(Debug, Clone)]
pub struct LaicProblem<S> {
    pub n_vars: usize,
    pub n_pixels: usize,
    pub objective: Vec<S>,
    pub rows: Vec<Row<S>>,
    /// Per-variable `[lo, hi]`; auxiliaries have `hi = +inf`.
    pub bounds: Vec<(S, S)>,
    /// Per-pixel sign of (input - local input mean).
    pub sign_map: Vec<i8>,
    /// The constant input value channel.
    pub input: Raster<S>,
    /// Its precomputed local means.
    pub input_mean: Raster<S>,
    pub radius: usize,
    pub eps: S,
    pub lambda2: S,
}

/// Box mean over the `(2 radius + 1)^2` window, clipped at borders; the
/// divisor is the clipped window size.
pub fn local_mean<S: Scalar>(r: &Raster<S>, radius: usize) -> Raster<S> {
    assert_eq!(r.channels(), 1, "local_mean expects a single channel");
    let (h, w) = (r.height(), r.width());
    // summed-area table with one pad row/col of zeros
    let mut sat = vec![0.0f64; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut run = 0.0;
        for x in 0..w {
            run += r.get(y, x, 0).to_f64_lossy();
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + run;
        }
    }
    let out = Raster::from_fn(h, w, 1, |y, x, _| {
        let y0 = y.saturating_sub(radius);
        let x0 = x.saturating_sub(radius);
        let y1 = (y + radius + 1).min(h);
        let x1 = (x + radius + 1).min(w);
        let sum = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
            + sat[y0 * (w + 1) + x0];
        S::of(sum / ((y1 - y0) * (x1 - x0)) as f64)
    });
    out
}

fn window(center: usize, radius: usize, len: usize) -> (usize, usize) {
    (
        center.saturating_sub(radius),
        (center + radius + 1).min(len),
    )
}

/// Assembles the LP for one value-channel raster. `input_mean` must have been
/// computed with the same radius (see [`local_mean`]).
pub fn build_lp<S: Scalar>(input: &Raster<S>, opts: &LaicOptions<S>) -> LaicProblem<S> {
    assert_eq!(input.channels(), 1, "build_lp expects a single channel");
    assert!(opts.radius >= 1);
    let (h, w) = (input.height(), input.width());
    let n_pix = h * w;
    let input_mean = local_mean(input, opts.radius);

    // ties get a small band so summation roundoff in the box means cannot
    // turn a constant region into spurious strict-rank rows
    let tie = S::of(1e-12).max(S::epsilon() * S::of(8.0));
    let sign_map: Vec<i8> = input
        .data()
        .iter()
        .zip(input_mean.data())
        .map(|(&a, &m)| {
            let d = a - m;
            if d > tie {
                1
            } else if d < -tie {
                -1
            } else {
                0
            }
        })
        .collect();

    // gain(p) = x_p / max(input_p, eps)
    let inv_denom: Vec<S> = input
        .data()
        .iter()
        .map(|&v| S::one() / v.max(opts.eps))
        .collect();

    let n_aux = h * w.saturating_sub(1) + h.saturating_sub(1) * w;
    let n_vars = n_pix + n_aux;

    // objective: sum of auxiliaries, minus lambda2 * sum_i s_i (x_i - mean_i)
    // with the mean expanded in the pixel variables
    let mut objective = vec![S::zero(); n_vars];
    for t in &mut objective[n_pix..] {
        *t = S::one();
    }
    if opts.lambda2 > S::zero() {
        for i in 0..n_pix {
            if sign_map[i] == 0 {
                continue;
            }
            let s = S::of(sign_map[i] as f64) * opts.lambda2;
            let (y, x) = (i / w, i % w);
            objective[i] -= s;
            let (y0, y1) = window(y, opts.radius, h);
            let (x0, x1) = window(x, opts.radius, w);
            let inv = S::one() / S::of(((y1 - y0) * (x1 - x0)) as f64);
            for yy in y0..y1 {
                for xx in x0..x1 {
                    objective[yy * w + xx] += s * inv;
                }
            }
        }
    }

    let mut rows = Vec::with_capacity(2 * n_aux + n_pix);

    // t_k >= +-(gain(b) - gain(a)) for each horizontal then vertical pair
    let mut aux = n_pix;
    let push_aux = |a: usize, b: usize, aux: usize, rows: &mut Vec<Row<S>>| {
        let (da, db) = (inv_denom[a], inv_denom[b]);
        rows.push(Row {
            coeffs: vec![(aux, S::one()), (b, -db), (a, da)],
            sense: Sense::Ge,
            rhs: S::zero(),
        });
        rows.push(Row {
            coeffs: vec![(aux, S::one()), (b, db), (a, -da)],
            sense: Sense::Ge,
            rhs: S::zero(),
        });
    };
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            push_aux(y * w + x, y * w + x + 1, aux, &mut rows);
            aux += 1;
        }
    }
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            push_aux(y * w + x, (y + 1) * w + x, aux, &mut rows);
            aux += 1;
        }
    }
    debug_assert_eq!(aux, n_vars);

    // rank rows: x_i - mean_i keeps the sign of the input; ties force equality
    for i in 0..n_pix {
        let (y, x) = (i / w, i % w);
        let (y0, y1) = window(y, opts.radius, h);
        let (x0, x1) = window(x, opts.radius, w);
        let inv = S::one() / S::of(((y1 - y0) * (x1 - x0)) as f64);
        let mut coeffs = Vec::with_capacity((y1 - y0) * (x1 - x0) + 1);
        for yy in y0..y1 {
            for xx in x0..x1 {
                let j = yy * w + xx;
                if j == i {
                    coeffs.push((j, S::one() - inv));
                } else {
                    coeffs.push((j, -inv));
                }
            }
        }
        let sense = match sign_map[i] {
            1 => Sense::Ge,
            -1 => Sense::Le,
            _ => Sense::Eq,
        };
        rows.push(Row {
            coeffs,
            sense,
            rhs: S::zero(),
        });
    }

    let mut bounds = vec![(S::zero(), S::one()); n_pix];
    bounds.extend(std::iter::repeat((S::zero(), S::infinity())).take(n_aux));

    LaicProblem {
        n_vars,
        n_pixels: n_pix,
        objective,
        rows,
        bounds,
        sign_map,
        input: input.clone(),
        input_mean,
        radius: opts.radius,
        eps: opts.eps,
        lambda2: opts.lambda2,
    }
}

/// Verifies a candidate point against every bound and row of the problem.
pub fn check_solution<S: Scalar>(
    p: &LaicProblem<S>,
    values: &[S],
    tol: S,
) -> Result<(), String> {
    if values.len() != p.n_vars {
        return Err(format!(
            "solution length {} != n_vars {}",
            values.len(),
            p.n_vars
        ));
    }
    for (j, (&v, &(lo, hi))) in values.iter().zip(&p.bounds).enumerate() {
        if v < lo - tol || v > hi + tol {
            return Err(format!("variable {j} = {v} violates [{lo}, {hi}]"));
        }
    }
    for (k, row) in p.rows.iter().enumerate() {
        let lhs: S = row.coeffs.iter().map(|&(j, c)| c * values[j]).sum();
        let ok = match row.sense {
            Sense::Le => lhs <= row.rhs + tol,
            Sense::Ge => lhs >= row.rhs - tol,
            Sense::Eq => (lhs - row.rhs).abs() <= tol,
        };
        if !ok {
            return Err(format!(
                "row {k} ({:?}) violated: lhs = {lhs}, rhs = {}",
                row.sense, row.rhs
            ));
        }
    }
    Ok(())
}

/// Objective value of a candidate point.
pub fn objective_value<S: Scalar>(p: &LaicProblem<S>, values: &[S]) -> S {
    p.objective
        .iter()
        .zip(values)
        .map(|(&c, &v)| c * v)
        .sum()
}

/// Enhances one value-channel raster: solve the LP (at full resolution or on
/// a reduced grid) and apply the resulting gain field.
pub fn enhance_luma<S: Scalar>(
    luma: &Raster<S>,
    opts: &LaicOptions<S>,
) -> Result<Raster<S>, LaicError> {
    assert_eq!(luma.channels(), 1);
    let full = match opts.gain_grid {
        GainGrid::FullResolution => true,
        GainGrid::Auto => luma.pixels() <= FULL_RES_PIXEL_LIMIT,
        GainGrid::Grid { .. } => false,
    };
    if full {
        let problem = build_lp(luma, opts);
        let solution = solve_and_select(&problem, opts)?;
        return Ok(Raster::from_clamped(
            luma.height(),
            luma.width(),
            1,
            solution[..problem.n_pixels]
                .iter()
                .map(|v| v.clamp01())
                .collect(),
        ));
    }

    let (gh, gw) = match opts.gain_grid {
        GainGrid::Grid { h, w } => (h.min(luma.height()), w.min(luma.width())),
        _ => (AUTO_GRID.0.min(luma.height()), AUTO_GRID.1.min(luma.width())),
    };
    let coarse = box_downsample(luma, gh, gw);
    // the window radius shrinks with the image
    let scale = (luma.height() as f64 / gh as f64).max(luma.width() as f64 / gw as f64);
    let coarse_opts = LaicOptions {
        radius: ((opts.radius as f64 / scale).round() as usize).max(1),
        ..*opts
    };
    let problem = build_lp(&coarse, &coarse_opts);
    let solution = solve_and_select(&problem, &coarse_opts)?;
    let gain_coarse: Vec<S> = solution[..problem.n_pixels]
        .iter()
        .zip(coarse.data())
        .map(|(&v, &a)| v / a.max(opts.eps))
        .collect();
    let gain = bilinear_upsample(&gain_coarse, gh, gw, luma.height(), luma.width());
    Ok(Raster::from_clamped(
        luma.height(),
        luma.width(),
        1,
        luma.data()
            .iter()
            .zip(&gain)
            .map(|(&v, &g)| (v * g).clamp01())
            .collect(),
    ))
}

/// Solve, audit, and at `lambda2 = 0` replace the degenerate optimum with the
/// brightest feasible uniform gain (the zero image is also optimal there, so
/// the LP alone is indifferent).
fn solve_and_select<S: Scalar>(
    problem: &LaicProblem<S>,
    opts: &LaicOptions<S>,
) -> Result<Vec<S>, LaicError> {
    let sol = solve_lp(problem, opts.solver_tol)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::IterationLimit => {
            return Err(LaicError::IterationLimit { pivots: sol.pivots })
        }
        LpStatus::Infeasible => {
            return Err(LaicError::Numerics("problem reported infeasible".into()))
        }
    }
    if opts.lambda2 > S::zero() {
        return Ok(sol.values);
    }
    let max_in = problem
        .input
        .data()
        .iter()
        .cloned()
        .fold(S::zero(), S::max);
    let gain = S::one() / max_in.max(opts.eps);
    let mut values: Vec<S> = problem
        .input
        .data()
        .iter()
        .map(|&v| (v * gain).clamp01())
        .collect();
    values.resize(problem.n_vars, S::zero());
    // fill auxiliaries with the actual gain differences so the point stays
    // audit-clean
    set_aux_from_pixels(problem, &mut values);
    check_solution(problem, &values, opts.solver_tol).map_err(LaicError::Numerics)?;
    Ok(values)
}

/// Sets each auxiliary to |gain difference| for the current pixel values.
fn set_aux_from_pixels<S: Scalar>(p: &LaicProblem<S>, values: &mut [S]) {
    let (h, w) = (p.input.height(), p.input.width());
    let gain = |values: &[S], i: usize| values[i] / p.input.data()[i].max(p.eps);
    let mut aux = p.n_pixels;
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            values[aux] = (gain(values, y * w + x + 1) - gain(values, y * w + x)).abs();
            aux += 1;
        }
    }
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            values[aux] = (gain(values, (y + 1) * w + x) - gain(values, y * w + x)).abs();
            aux += 1;
        }
    }
}

/// Full-color enhancement: split the value channel, enhance it, recombine.
pub fn laic_enhance<S: Scalar>(
    r: &Raster<S>,
    opts: &LaicOptions<S>,
) -> Result<Raster<S>, LaicError> {
    if r.channels() == 1 {
        return enhance_luma(r, opts);
    }
    let (luma, chroma) = split_luma(r)?;
    let enhanced = enhance_luma(&luma, opts)?;
    Ok(recombine_luma(&enhanced, &chroma)?)
}

/// Writes the problem in LP interchange text for cross-checking with
/// third-party solvers.
pub fn write_lp_format<S: Scalar>(
    p: &LaicProblem<S>,
    out: &mut impl std::io::Write,
) -> std::io::Result<()> {
    let name = |j: usize| {
        if j < p.n_pixels {
            format!("x{j}")
        } else {
            format!("t{}", j - p.n_pixels)
        }
    };
    writeln!(out, "Minimize")?;
    write!(out, " obj:")?;
    let mut first = true;
    for (j, &c) in p.objective.iter().enumerate() {
        if c != S::zero() {
            let cf = c.to_f64_lossy();
            if first {
                write!(out, " {cf} {}", name(j))?;
                first = false;
            } else if cf >= 0.0 {
                write!(out, " + {cf} {}", name(j))?;
            } else {
                write!(out, " - {} {}", -cf, name(j))?;
            }
        }
    }
    writeln!(out)?;
    writeln!(out, "Subject To")?;
    for (k, row) in p.rows.iter().enumerate() {
        write!(out, " r{k}:")?;
        for (idx, &(j, c)) in row.coeffs.iter().enumerate() {
            let cf = c.to_f64_lossy();
            if idx == 0 {
                write!(out, " {cf} {}", name(j))?;
            } else if cf >= 0.0 {
                write!(out, " + {cf} {}", name(j))?;
            } else {
                write!(out, " - {} {}", -cf, name(j))?;
            }
        }
        let sense = match row.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        writeln!(out, " {sense} {}", row.rhs.to_f64_lossy())?;
    }
    writeln!(out, "Bounds")?;
    for (j, &(lo, hi)) in p.bounds.iter().enumerate() {
        if hi == S::infinity() {
            writeln!(out, " {} <= {}", lo.to_f64_lossy(), name(j))?;
        } else {
            writeln!(
                out,
                " {} <= {} <= {}",
                lo.to_f64_lossy(),
                name(j),
                hi.to_f64_lossy()
            )?;
        }
    }
    writeln!(out, "End")
}

fn box_downsample<S: Scalar>(r: &Raster<S>, gh: usize, gw: usize) -> Raster<S> {
    let (h, w) = (r.height(), r.width());
    Raster::from_fn(gh, gw, 1, |gy, gx, _| {
        let y0 = gy * h / gh;
        let y1 = ((gy + 1) * h / gh).max(y0 + 1);
        let x0 = gx * w / gw;
        let x1 = ((gx + 1) * w / gw).max(x0 + 1);
        let mut acc = 0.0f64;
        for y in y0..y1 {
            for x in x0..x1 {
                acc += r.get(y, x, 0).to_f64_lossy();
            }
        }
        S::of(acc / ((y1 - y0) * (x1 - x0)) as f64)
    })
}

fn bilinear_upsample<S: Scalar>(
    grid: &[S],
    gh: usize,
    gw: usize,
    h: usize,
    w: usize,
) -> Vec<S> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        // align cell centers
        let fy = ((y as f64 + 0.5) * gh as f64 / h as f64 - 0.5).clamp(0.0, gh as f64 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(gh - 1);
        let wy = fy - y0 as f64;
        for x in 0..w {
            let fx = ((x as f64 + 0.5) * gw as f64 / w as f64 - 0.5).clamp(0.0, gw as f64 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(gw - 1);
            let wx = fx - x0 as f64;
            let g00 = grid[y0 * gw + x0].to_f64_lossy();
            let g01 = grid[y0 * gw + x1].to_f64_lossy();
            let g10 = grid[y1 * gw + x0].to_f64_lossy();
            let g11 = grid[y1 * gw + x1].to_f64_lossy();
            let top = g00 + (g01 - g00) * wx;
            let bot = g10 + (g11 - g10) * wx;
            out.push(S::of(top + (bot - top) * wy));
        }
    }
    out
}

#[cfg(test)]
mod tests;
