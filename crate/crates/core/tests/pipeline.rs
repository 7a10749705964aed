use spikewalk::par::ExecMode;
use spikewalk::pipeline::{estimate_start, run_start, Engine};
use spikewalk::platform::Platform;
use spikewalk::problems::{boltzmann_oracle, boltzmann_problem, torus_center, torus_diffusion_problem, torus_displacement};

fn squared_radius(n: usize, counts: &[u64]) -> f64 {
    counts
        .iter()
        .enumerate()
        .map(|(s, &c)| {
            let (dx, dy) = torus_displacement(n, s as u32);
            c as f64 * (dx * dx + dy * dy) as f64
        })
        .sum()
}

#[test]
fn torus_spread_grows_one_cell_squared_per_step() {
    let n = 21;
    let p = torus_diffusion_problem(n).unwrap();
    let mut initial = vec![0.0; n * n];
    initial[torus_center(n) as usize] = 1.0;
    // before anything wraps, E|r|² = k exactly
    for (k, mass) in p.model.propagate(&initial, 10).iter().enumerate() {
        let r2: f64 = mass.iter().enumerate().map(|(s, m)| {
            let (dx, dy) = torus_displacement(n, s as u32);
            m * (dx * dx + dy * dy) as f64
        }).sum();
        assert!((r2 - k as f64).abs() < 1e-12, "step {k}: {r2}");
    }
    let engine = Engine::new(&p, Platform::Loihi, false).unwrap();
    let run = run_start(&p, &engine, torus_center(n), 1000, 10, 21, ExecMode::Parallel).unwrap();
    let mean = squared_radius(n, &run.density.snapshots[10]) / 1000.0;
    // |r|² has standard deviation about k, so the mean's is k/√1000
    assert!((mean - 10.0).abs() < 5.0 * 10.0 / 1000f64.sqrt(), "{mean}");
}

#[test]
fn schedule_does_not_change_results() {
    let p = torus_diffusion_problem(9).unwrap();
    for engine in [Engine::new(&p, Platform::Loihi, true).unwrap(), Engine::new(&p, Platform::Reference, false).unwrap()] {
        let a = run_start(&p, &engine, 40, 1500, 25, 3, ExecMode::Parallel).unwrap();
        let b = run_start(&p, &engine, 40, 1500, 25, 3, ExecMode::Sequential).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn full_precision_sampler_tracks_the_closed_form() {
    let p = boltzmann_problem().unwrap();
    let engine = Engine::new(&p, Platform::Reference, false).unwrap();
    for start in [0, 1] {
        let run = run_start(&p, &engine, start, 20_000, 100, 12, ExecMode::Parallel).unwrap();
        let est = estimate_start(&p, &run).unwrap();
        for r in est.iter().step_by(20) {
            let exact = boltzmann_oracle(r.t, if start == 1 { 1.0 } else { -1.0 });
            // g is at most 5, so the per-walker spread is below 2.5
            assert!((r.value - exact).abs() < 5.0 * 2.5 / 20_000f64.sqrt(), "t={} {} vs {exact}", r.t, r.value);
        }
    }
}
