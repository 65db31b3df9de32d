use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn opts(lambda2: f64, radius: usize) -> LaicOptions<f64> {
    LaicOptions {
        lambda2,
        radius,
        ..LaicOptions::default()
    }
}

fn luma_1xn(values: &[f64]) -> Raster<f64> {
    Raster::new(1, values.len(), 1, values.to_vec()).unwrap()
}

// independent oracle: O(n w^2) double loop
fn local_mean_naive(r: &Raster<f64>, radius: usize) -> Vec<f64> {
    let (h, w) = (r.height(), r.width());
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut count = 0usize;
            for yy in y.saturating_sub(radius)..(y + radius + 1).min(h) {
                for xx in x.saturating_sub(radius)..(x + radius + 1).min(w) {
                    acc += r.get(yy, xx, 0);
                    count += 1;
                }
            }
            out.push(acc / count as f64);
        }
    }
    out
}

#[test]
fn local_mean_constant_and_hand_example() {
    let c = Raster::constant(5, 4, 1, 0.3f64);
    for &v in local_mean(&c, 2).data() {
        assert!((v - 0.3).abs() < 1e-12);
    }
    let r = luma_1xn(&[0.0, 1.0, 0.0]);
    let m = local_mean(&r, 1);
    assert!((m.data()[0] - 0.5).abs() < 1e-12);
    assert!((m.data()[1] - 1.0 / 3.0).abs() < 1e-12);
    assert!((m.data()[2] - 0.5).abs() < 1e-12);
}

#[test]
fn local_mean_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = Raster::from_fn(5, 5, 1, |_, _, _| rng.gen_range(0.0..1.0));
    for radius in 1..=3 {
        let fast = local_mean(&r, radius);
        let slow = local_mean_naive(&r, radius);
        for (&a, &b) in fast.data().iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "radius {radius}");
        }
    }
}

#[test]
fn build_lp_counts_for_1x2() {
    let r = luma_1xn(&[0.2, 0.6]);
    let p = build_lp(&r, &opts(0.1, 1));
    assert_eq!(p.n_pixels, 2);
    assert_eq!(p.n_vars, 3); // 2 pixels + 1 auxiliary
    let aux_rows = p
        .rows
        .iter()
        .filter(|r| r.coeffs.iter().any(|&(j, _)| j >= 2))
        .count();
    assert_eq!(aux_rows, 2);
    assert_eq!(p.rows.len(), 4); // 2 aux rows + 2 rank rows
    assert_eq!(p.bounds[0], (0.0, 1.0));
    assert_eq!(p.bounds[1], (0.0, 1.0));
    assert_eq!(p.bounds[2].0, 0.0);
    assert!(p.bounds[2].1.is_infinite());
}

#[test]
fn sign_map_constant_input_is_all_zero() {
    let r = Raster::constant(3, 3, 1, 0.4);
    let p = build_lp(&r, &opts(0.1, 1));
    assert!(p.sign_map.iter().all(|&s| s == 0));
    assert!(p.rows.iter().filter(|r| r.sense == Sense::Eq).count() >= 9);
}

#[test]
fn sign_map_matches_brute_force() {
    let r = luma_1xn(&[0.1, 0.2, 0.2, 0.4]);
    let p = build_lp(&r, &opts(0.1, 1));
    let means = local_mean_naive(&r, 1);
    let expect: Vec<i8> = r
        .data()
        .iter()
        .zip(&means)
        .map(|(&a, &m)| {
            if a > m {
                1
            } else if a < m {
                -1
            } else {
                0
            }
        })
        .collect();
    assert_eq!(p.sign_map, expect);
    assert_eq!(p.sign_map, vec![-1, 1, -1, 1]);
}

/// Exhaustive feasible grid search over 65 levels per pixel for 1xN images:
/// the independent optimum oracle.
fn grid_search_1xn(input: &Raster<f64>, lambda2: f64, radius: usize) -> f64 {
    let n = input.width();
    assert!(n <= 4);
    let means = local_mean_naive(input, radius);
    let sign: Vec<i8> = input
        .data()
        .iter()
        .zip(&means)
        .map(|(&a, &m)| (a - m).partial_cmp(&0.0).unwrap() as i8)
        .collect();
    let eps = eps_guard::<f64>();
    let denom: Vec<f64> = input.data().iter().map(|&v| v.max(eps)).collect();
    let levels: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
    let mut idx = vec![0usize; n];
    let mut best = f64::INFINITY;
    let tol = 1e-12;
    loop {
        let x: Vec<f64> = idx.iter().map(|&i| levels[i]).collect();
        let mut feasible = true;
        let mut contrast = 0.0;
        for i in 0..n {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(n);
            let mean = x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            let d = x[i] - mean;
            match sign[i] {
                1 if d < -tol => feasible = false,
                -1 if d > tol => feasible = false,
                0 if d.abs() > tol => feasible = false,
                _ => {}
            }
            contrast += sign[i] as f64 * d;
        }
        if feasible {
            let tv: f64 = (1..n)
                .map(|i| (x[i] / denom[i] - x[i - 1] / denom[i - 1]).abs())
                .sum();
            best = best.min(tv - lambda2 * contrast);
        }
        // odometer
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            idx[k] += 1;
            if idx[k] < levels.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[test]
fn solve_lp_matches_grid_search_on_worked_example() {
    let input = luma_1xn(&[0.1, 0.2, 0.2, 0.4]);
    let o = opts(0.1, 1);
    let p = build_lp(&input, &o);
    let sol = solve_lp(&p, o.solver_tol).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    let oracle = grid_search_1xn(&input, 0.1, 1);
    // scipy/highs agrees: optimum -0.0625 at x = [0.25, 0.5, 0.5, 1.0]
    assert!((oracle - -0.0625).abs() < 1e-12);
    assert!(sol.objective_value <= oracle + 2.0 / 64.0);
    assert!((sol.objective_value - -0.0625).abs() < 1e-7);
    check_solution(&p, &sol.values, o.solver_tol).unwrap();
}

#[test]
fn solve_lp_lambda_zero_objective_is_zero() {
    let input = luma_1xn(&[0.1, 0.2, 0.2, 0.4]);
    let o = opts(0.0, 1);
    let p = build_lp(&input, &o);
    let sol = solve_lp(&p, o.solver_tol).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!(sol.objective_value.abs() <= o.solver_tol);
    // TV of gain at the returned point is the sum of auxiliaries
    let tv: f64 = sol.values[p.n_pixels..].iter().sum();
    assert!(tv <= o.solver_tol);
}

#[test]
fn input_itself_is_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let input = Raster::from_fn(4, 4, 1, |_, _, _| rng.gen_range(0.0..1.0));
    let o = opts(0.3, 1);
    let p = build_lp(&input, &o);
    let mut values: Vec<f64> = input.data().to_vec();
    values.resize(p.n_vars, 0.0);
    set_aux_from_pixels(&p, &mut values);
    check_solution(&p, &values, 1e-9).unwrap();
    assert!(objective_value(&p, &values).is_finite());
}

#[test]
fn objective_decomposes_into_tv_minus_contrast() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let input = Raster::from_fn(4, 5, 1, |_, _, _| rng.gen_range(0.0..1.0));
    let o = opts(0.2, 1);
    let p = build_lp(&input, &o);
    let sol = solve_lp(&p, o.solver_tol).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);

    let x = &sol.values[..p.n_pixels];
    let pix = Raster::new(4, 5, 1, x.iter().map(|v| v.clamp(0.0, 1.0)).collect()).unwrap();
    let means = local_mean_naive(&pix, 1);
    let contrast: f64 = (0..p.n_pixels)
        .map(|i| p.sign_map[i] as f64 * (x[i] - means[i]))
        .sum();
    let eps = eps_guard::<f64>();
    let gain = |i: usize| x[i] / p.input.data()[i].max(eps);
    let mut tv = 0.0;
    for y in 0..4 {
        for xx in 0..4 {
            tv += (gain(y * 5 + xx + 1) - gain(y * 5 + xx)).abs();
        }
    }
    for y in 0..3 {
        for xx in 0..5 {
            tv += (gain((y + 1) * 5 + xx) - gain(y * 5 + xx)).abs();
        }
    }
    assert!(
        (sol.objective_value - (tv - 0.2 * contrast)).abs() < 1e-8,
        "objective {} vs decomposition {}",
        sol.objective_value,
        tv - 0.2 * contrast
    );
}

#[test]
fn enhance_constant_image_lambda_zero_gives_uniform_bright_output() {
    let r = Raster::constant(6, 6, 1, 0.25);
    let out = enhance_luma(&r, &opts(0.0, 1)).unwrap();
    for &v in out.data() {
        assert!((v - 1.0).abs() < 1e-9, "largest uniform gain saturates at 1");
    }
}

#[test]
fn enhance_two_region_image_gain_piecewise_constant() {
    let r = Raster::from_fn(8, 8, 1, |_, x, _| if x < 4 { 0.05 } else { 0.5 });
    let out = enhance_luma(&r, &opts(0.0, 2)).unwrap();
    // uniform gain 1/0.5 = 2 on both regions
    for y in 0..8 {
        for x in 0..8 {
            let expect = if x < 4 { 0.1 } else { 1.0 };
            assert!((out.get(y, x, 0) - expect).abs() < 1e-7);
        }
    }
}

#[test]
fn enhance_output_stays_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let r = Raster::from_fn(10, 10, 1, |_, _, _| rng.gen_range(0.0..0.3));
    let out = enhance_luma(&r, &opts(0.1, 2)).unwrap();
    for &v in out.data() {
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn enhance_rank_preservation_small_random() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let r = Raster::from_fn(8, 8, 1, |_, _, _| rng.gen_range(0.0..1.0));
    let o = opts(0.1, 2);
    let out = enhance_luma(&r, &o).unwrap();
    let mean_in = local_mean_naive(&r, 2);
    let mean_out = local_mean_naive(&out, 2);
    for i in 0..64 {
        let din = r.data()[i] - mean_in[i];
        let dout = out.data()[i] - mean_out[i];
        if din > 0.0 {
            assert!(dout >= -o.solver_tol, "pixel {i}: {din} vs {dout}");
        } else if din < 0.0 {
            assert!(dout <= o.solver_tol, "pixel {i}: {din} vs {dout}");
        } else {
            assert!(dout.abs() <= o.solver_tol);
        }
    }
}

#[test]
fn enhance_color_recombines_chroma() {
    let r = Raster::from_fn(6, 6, 3, |_, x, c| 0.1 + 0.02 * x as f64 + 0.01 * c as f64);
    let out = laic_enhance(&r, &opts(0.05, 1)).unwrap();
    assert_eq!(out.channels(), 3);
    assert_eq!((out.height(), out.width()), (6, 6));
    for &v in out.data() {
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn grid_path_matches_full_res_on_smooth_ramp() {
    // piecewise-constant gain survives the grid round trip on smooth content
    let r = Raster::from_fn(40, 40, 1, |y, _, _| 0.1 + 0.002 * y as f64);
    let full = enhance_luma(
        &r,
        &LaicOptions {
            gain_grid: GainGrid::FullResolution,
            ..opts(0.0, 3)
        },
    )
    .unwrap();
    let grid = enhance_luma(
        &r,
        &LaicOptions {
            gain_grid: GainGrid::Grid { h: 10, w: 10 },
            ..opts(0.0, 3)
        },
    )
    .unwrap();
    for (&a, &b) in full.data().iter().zip(grid.data()) {
        assert!((a - b).abs() < 0.05);
    }
}

#[test]
fn lp_format_dump_mentions_all_sections() {
    let r = luma_1xn(&[0.1, 0.4]);
    let p = build_lp(&r, &opts(0.1, 1));
    let mut buf = Vec::new();
    write_lp_format(&p, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    for section in ["Minimize", "Subject To", "Bounds", "End"] {
        assert!(text.contains(section), "missing {section}:\n{text}");
    }
    assert!(text.contains("x0") && text.contains("t0"));
}
