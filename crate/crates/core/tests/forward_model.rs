use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use mrdino_core::forward_model::{build_source_basis, JacobianRoute, NewtonOptions, SemilinearProblem};
use mrdino_core::linalg_fem::{assemble_mass, build_mesh};
use mrdino_core::randfield::{build_kle, sample_field, KleBasis, MaternSpec};
use mrdino_core::reduction::{compute_pod, PodBasis};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Setup {
    problem: SemilinearProblem,
    kle: KleBasis,
    target: DVector<f64>,
}

fn desk() -> &'static Setup {
    static CELL: OnceLock<Setup> = OnceLock::new();
    CELL.get_or_init(|| {
        let mesh = build_mesh(32, 32).unwrap();
        let kle = build_kle(&mesh, &MaternSpec::new(0.1, 5.0, -1.0).unwrap(), 50).unwrap();
        let sources = build_source_basis(&mesh, 5, 0.08).unwrap();
        let target = mesh.interpolate(|x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
        let newton = NewtonOptions {
            rtol: 1e-12,
            ..NewtonOptions::default()
        };
        Setup {
            problem: SemilinearProblem::new(mesh, 0.1, sources, newton).unwrap(),
            kle,
            target,
        }
    })
}

fn random_control(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-4.0..4.0))
}

fn tracking(s: &Setup, u: &DVector<f64>) -> (f64, DVector<f64>) {
    let w = s.problem.lumped_mass();
    let diff = u - &s.target;
    let mdiff = diff.component_mul(w);
    (diff.dot(&mdiff), mdiff * 2.0)
}

fn fd_step(z: f64) -> f64 {
    1e-5 * z.abs().max(1.0)
}

#[test]
fn adjoint_gradient_matches_central_differences() {
    let s = desk();
    let p = &s.problem;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..20 {
        let m = sample_field(&s.kle, 101, 1, i).values;
        let z = random_control(&mut rng, p.num_controls());
        let state = p.solve_state(&m, &z).unwrap();
        let (_, qgrad) = tracking(s, &state.u);
        let g = p.performance_gradient(&state, &qgrad).unwrap();

        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        let mut worst: f64 = 0.0;
        for &k in order.iter().take(5) {
            let h = fd_step(z[k]);
            let mut zp = z.clone();
            zp[k] += h;
            let mut zm = z.clone();
            zm[k] -= h;
            let qp = tracking(s, &p.solve_state(&m, &zp).unwrap().u).0;
            let qm = tracking(s, &p.solve_state(&m, &zm).unwrap().u).0;
            let fd = (qp - qm) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs() / g[k].abs());
        }
        assert!(worst <= 1e-5, "sample {i}: relative error {worst:e}");
    }
}

fn desk_pod(s: &Setup, n: u64, rank: usize) -> PodBasis {
    let p = &s.problem;
    let d = p.mesh().num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut snaps = DMatrix::zeros(n as usize, d);
    for i in 0..n {
        let m = sample_field(&s.kle, 3, 1, i).values;
        let z = random_control(&mut rng, p.num_controls());
        snaps.set_row(i as usize, &p.solve_state(&m, &z).unwrap().u.transpose());
    }
    compute_pod(&snaps, &assemble_mass(p.mesh(), true), rank).unwrap()
}

#[test]
fn reduced_jacobian_matches_finite_differences_and_routes_agree() {
    let s = desk();
    let p = &s.problem;
    let pod = desk_pod(s, 60, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for i in 0..10 {
        let m = sample_field(&s.kle, 202, 1, i).values;
        let z = random_control(&mut rng, p.num_controls());
        let state = p.solve_state(&m, &z).unwrap();
        let fwd = p
            .reduced_control_jacobian(&state, &pod, JacobianRoute::Forward)
            .unwrap();
        let adj = p
            .reduced_control_jacobian(&state, &pod, JacobianRoute::Adjoint)
            .unwrap();
        assert!((&fwd - &adj).norm() <= 1e-9 * fwd.norm());

        let mut fd = DMatrix::zeros(pod.rank(), p.num_controls());
        for k in 0..p.num_controls() {
            let h = fd_step(z[k]);
            let mut zp = z.clone();
            zp[k] += h;
            let mut zm = z.clone();
            zm[k] -= h;
            let up = pod.reduce(&p.solve_state(&m, &zp).unwrap().u);
            let um = pod.reduce(&p.solve_state(&m, &zm).unwrap().u);
            fd.set_column(k, &((up - um) / (2.0 * h)));
        }
        let rel = (&fd - &fwd).norm() / fwd.norm();
        assert!(rel <= 1e-5, "sample {i}: Frobenius relative error {rel:e}");
    }
}

fn mms_error(n: usize) -> f64 {
    let mesh = build_mesh(n, n).unwrap();
    let sources = build_source_basis(&mesh, 1, 0.08).unwrap();
    let p = SemilinearProblem::new(mesh.clone(), 0.0, sources, NewtonOptions::default()).unwrap();
    let exact = mesh.interpolate(|x, y| (PI * x).sin() * (PI * y).sin());
    let load = (&exact * (2.0 * PI * PI)).component_mul(p.lumped_mass());
    let u = p.solve_with_load(&DVector::zeros(mesh.num_nodes()), &load).unwrap().u;
    let e = u - exact;
    assemble_mass(&mesh, false).bilinear(&e, &e).sqrt()
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let e: Vec<f64> = [16, 32, 64].iter().map(|&n| mms_error(n)).collect();
    for w in e.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.0..=5.0).contains(&ratio), "errors {e:?}");
    }
}

#[test]
fn linear_gradient_matches_dense_oracle() {
    let mesh = build_mesh(8, 8).unwrap();
    let sources = build_source_basis(&mesh, 3, 0.08).unwrap();
    let p = SemilinearProblem::new(mesh.clone(), 0.0, sources, NewtonOptions::default()).unwrap();
    let m = mesh.interpolate(|x, y| 0.5 * (x - y) - 1.0);
    let z = DVector::from_fn(9, |i, _| (i as f64) - 4.0);
    let state = p.solve_state(&m, &z).unwrap();
    let w = p.lumped_mass();
    let g = p.performance_gradient(&state, &state.u.component_mul(w)).unwrap();

    let k = p.state_operator(&m).unwrap().to_dense();
    let f = p.control_loads();
    let u = k.clone().lu().solve(&(f * &z)).unwrap();
    assert!((&u - &state.u).amax() < 1e-12 * u.amax().max(1.0));
    let mu = u.component_mul(w);
    let oracle = f.transpose() * k.transpose().lu().solve(&mu).unwrap();
    assert_eq!(oracle.len(), 9);
    assert!((&g - &oracle).norm() <= 1e-10 * oracle.norm(), "{g} vs {oracle}");
}

#[test]
fn jacobian_increment_is_cheaper_than_state_solve() {
    let s = desk();
    let p = &s.problem;
    let pod = desk_pod(s, 120, 100);
    let m = sample_field(&s.kle, 9, 1, 0).values;
    let z = DVector::from_element(p.num_controls(), 2.0);
    let mut best_state = f64::INFINITY;
    let mut best_jac = f64::INFINITY;
    for _ in 0..7 {
        let t = Instant::now();
        let state = p.solve_state(&m, &z).unwrap();
        best_state = best_state.min(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let j = p.reduced_control_jacobian(&state, &pod, JacobianRoute::Auto).unwrap();
        best_jac = best_jac.min(t.elapsed().as_secs_f64());
        assert_eq!(j.shape(), (100, 25));
    }
    eprintln!("jacobian/state time ratio {:.3}", best_jac / best_state);
    assert!(
        best_jac <= 0.6 * best_state,
        "jacobian {best_jac:e}s vs state {best_state:e}s"
    );
}
