use cascadebo::grid::parse_case;
use cascadebo::powerflow::simplex::{solve, LinearProgram, LpOutcome, Sense};
use cascadebo::powerflow::solve_equilibrium;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Best objective over all basic feasible points, or None when no vertex is feasible.
fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    // Candidate active sets: any n of the rows plus the bounds x_i >= 0.
    let mut planes: Vec<(Vec<f64>, f64)> = lp.rows.iter().map(|r| (r.coeffs.clone(), r.rhs)).collect();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        planes.push((e, 0.0));
    }
    let k = planes.len();
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let a = DMatrix::from_fn(n, n, |r, c| planes[idx[r]].0[c]);
        let b = DVector::from_fn(n, |r, _| planes[idx[r]].1);
        if let Some(x) = a.lu().solve(&b) {
            let feasible = x.iter().all(|v| *v >= -1e-9)
                && lp.rows.iter().all(|r| {
                    let lhs: f64 = r.coeffs.iter().zip(x.iter()).map(|(c, v)| c * v).sum();
                    match r.sense {
                        Sense::Le => lhs <= r.rhs + 1e-9,
                        Sense::Ge => lhs >= r.rhs - 1e-9,
                        Sense::Eq => (lhs - r.rhs).abs() <= 1e-9,
                    }
                });
            if feasible {
                let obj: f64 = lp.objective.iter().zip(x.iter()).map(|(c, v)| c * v).sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        // Next combination.
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < k - n + i {
                idx[i] += 1;
                for j in i + 1..n {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[test]
fn simplex_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut optimal = 0;
    for _ in 0..300 {
        let n = rng.gen_range(2..=4);
        let mut lp = LinearProgram::new(n);
        lp.objective = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            lp.push(e, Sense::Le, rng.gen_range(1.0..5.0));
        }
        for _ in 0..rng.gen_range(1..=4) {
            let coeffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let sense = match rng.gen_range(0..5) {
                0 => Sense::Ge,
                1 => Sense::Eq,
                _ => Sense::Le,
            };
            lp.push(coeffs, sense, rng.gen_range(-2.0..4.0));
        }
        let oracle = vertex_enumeration(&lp);
        match (solve(&lp), oracle) {
            (LpOutcome::Optimal { objective, .. }, Some(o)) => {
                optimal += 1;
                assert!((objective - o).abs() <= 1e-8 * (1.0 + o.abs()), "{objective} vs {o}");
            }
            (LpOutcome::Infeasible, None) => {}
            (out, o) => panic!("simplex {out:?} but oracle {o:?}"),
        }
    }
    assert!(optimal > 100);
}

const THREE_BUS: &str = "
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0   0 0 0 1 1 0 135 1 1.05 0.95;
  2 1 150 0 0 0 1 1 0 135 1 1.05 0.95;
  3 2 0   0 0 0 1 1 0 135 1 1.05 0.95;
];
mpc.gen = [
  1 0 0 0 0 1 100 1 200 0;
  3 0 0 0 0 1 100 1 200 0;
];
mpc.branch = [
  1 2 0 1 0 60  60  60  0 0 1 -360 360;
  1 3 0 1 0 100 100 100 0 0 1 -360 360;
  3 2 0 1 0 100 100 100 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 2 10 0;
  2 0 0 2 20 0;
];
";

#[test]
fn three_bus_dispatch_matches_interval_oracle() {
    let net = parse_case(THREE_BUS).unwrap();
    let eq = solve_equilibrium(&net).unwrap();
    // With bus 2 as reference and unit reactances the flows are affine in
    // the bus-1 output a (bus-3 output 1.5 - a).
    let flows = |a: f64| {
        let b = 1.5 - a;
        [(2.0 * a + b) / 3.0, (a - b) / 3.0, (a + 2.0 * b) / 3.0]
    };
    let limits = [0.6, 1.0, 1.0];
    // Each |a0 + a1 * a| <= lim gives an interval on a.
    let (mut lo, mut hi) = (0.0f64, 1.5f64);
    for (l, lim) in limits.iter().enumerate() {
        let a0 = flows(0.0)[l];
        let a1 = flows(1.0)[l] - a0;
        let (p, q) = ((-lim - a0) / a1, (lim - a0) / a1);
        lo = lo.max(p.min(q));
        hi = hi.min(p.max(q));
    }
    // Bus 1 is cheaper, so it runs at the top of its feasible interval.
    let a = hi;
    assert!(lo <= hi);
    let cost = a * 1000.0 + (1.5 - a) * 2000.0;
    assert!((eq.objective_cost - cost).abs() < 1e-9 * cost, "{} vs {cost}", eq.objective_cost);
    assert!((eq.generation[0] - a).abs() < 1e-9);
    for (f, o) in eq.flows.iter().zip(flows(a)) {
        assert!((f - o).abs() < 1e-9, "{f} vs {o}");
    }
}
