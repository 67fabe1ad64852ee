//! Module invariants shared by the property suite and the acceptance run.
#![allow(dead_code)]

use bno_core::geometry::{make_boundary_grid, parse_msh, triangulate_square, Domain, FourierTerm, PolarCurve};
use bno_core::kernels::KernelSpec;
use bno_core::operator::{loss_and_gradients, train_adam, Layout, LinearBoundaryOperator, TrainingConfig, TrainingSet};
use bno_core::synthesis::{build_dataset, sample_terms, synthesize_trace_pair, Dataset, DatasetSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn kernels() -> [KernelSpec; 4] {
    [
        KernelSpec::Laplace2d,
        KernelSpec::Helmholtz2d { k: 1.0 },
        KernelSpec::Helmholtz2d { k: 10.0 },
        KernelSpec::Helmholtz3d { k: 1.0 },
    ]
}

/// Synthesized sums satisfy `Δu + k²u = 0` at interior points (finite differences).
pub fn pde_residual(kernel: KernelSpec, seed: u64) -> Check {
    let domain = if kernel.dim() == 3 {
        Domain::unit_sphere()
    } else {
        Domain::UnitSquare
    };
    let spec = DatasetSpec::new(kernel, domain);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms = sample_terms(&spec, &mut rng).map_err(|e| e.to_string())?;
    let k2 = kernel.wavenumber().unwrap_or(0.0).powi(2);
    let u = |x: &[f64]| terms.iter().map(|t| t.eval(&kernel, x).0).sum::<f64>();
    let h = 1e-3;
    for _ in 0..5 {
        let p: Vec<f64> = (0..kernel.dim())
            .map(|_| {
                if kernel.dim() == 3 {
                    rng.random_range(-0.5..0.5)
                } else {
                    rng.random_range(0.2..0.8)
                }
            })
            .collect();
        let center = u(&p);
        let mut lap = 0.0;
        for a in 0..p.len() {
            let mut q = p.clone();
            q[a] += h;
            lap += u(&q);
            q[a] -= 2.0 * h;
            lap += u(&q);
            lap -= 2.0 * center;
        }
        lap /= h * h;
        let scale = terms.iter().map(|t| t.eval(&kernel, &p).0.abs()).sum::<f64>().max(1.0) * k2.max(1.0);
        ensure((lap + k2 * center).abs() < 1e-4 * scale, || {
            format!("{kernel:?}: residual {} at {p:?}", lap + k2 * center)
        })?;
    }
    Ok(())
}

/// Synthesized Neumann data match a centered difference of the value along the normal.
pub fn trace_consistency(kernel: KernelSpec, seed: u64) -> Check {
    if kernel.dim() != 2 {
        return Ok(());
    }
    let spec = DatasetSpec::new(kernel, Domain::UnitSquare);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms = sample_terms(&spec, &mut rng).map_err(|e| e.to_string())?;
    let grid = make_boundary_grid(&Domain::UnitSquare, 40).map_err(|e| e.to_string())?;
    let pair = synthesize_trace_pair(&kernel, &grid, &terms).map_err(|e| e.to_string())?;
    let eps = 1e-6;
    for (i, (p, n)) in grid.points().iter().zip(grid.normals()).enumerate() {
        let f = |s: f64| {
            terms
                .iter()
                .map(|t| t.eval(&kernel, &[p[0] + s * n[0], p[1] + s * n[1]]).0)
                .sum::<f64>()
        };
        let fd = (f(eps) - f(-eps)) / (2.0 * eps);
        ensure((fd - pair.h[i]).abs() < 1e-5 * pair.h[i].abs().max(1.0), || {
            format!("point {i}: {fd} vs {}", pair.h[i])
        })?;
    }
    Ok(())
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// `W(a x + b y) = a W x + b W y`, including stacked layers.
pub fn operator_linearity(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 12;
    let layers = vec![random_matrix(&mut rng, 7, n), random_matrix(&mut rng, n, 7)];
    let op = LinearBoundaryOperator::new(layers, Layout::dirichlet(n)).map_err(|e| e.to_string())?;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
    let (wx, wy, wm) = (op.apply(&x).unwrap(), op.apply(&y).unwrap(), op.apply(&mix).unwrap());
    let zero = op.apply(&vec![0.0; n]).unwrap();
    ensure(zero.iter().all(|v| *v == 0.0), || "operator has a bias".into())?;
    for i in 0..n {
        let expect = a * wx[i] + b * wy[i];
        ensure((wm[i] - expect).abs() < 1e-12 * (1.0 + expect.abs()), || {
            format!("row {i}: {} vs {expect}", wm[i])
        })?;
    }
    Ok(())
}

/// Analytic gradient against central differences of the loss.
pub fn gradient_matches_fd(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![random_matrix(&mut rng, 4, 5), random_matrix(&mut rng, 3, 4)];
    let x = random_matrix(&mut rng, 5, 6);
    let t = random_matrix(&mut rng, 3, 6);
    let lambda: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
    let (_, grads) = loss_and_gradients(&layers, &x, &t, &lambda);
    let eps = 1e-6;
    for l in 0..layers.len() {
        for i in 0..layers[l].len() {
            let mut plus = layers.clone();
            plus[l].as_mut_slice()[i] += eps;
            let mut minus = layers.clone();
            minus[l].as_mut_slice()[i] -= eps;
            let fd = (loss_and_gradients(&plus, &x, &t, &lambda).0 - loss_and_gradients(&minus, &x, &t, &lambda).0)
                / (2.0 * eps);
            let g = grads[l].as_slice()[i];
            ensure((fd - g).abs() < 1e-7 * (1.0 + g.abs()), || {
                format!("layer {l} entry {i}: {g} vs {fd}")
            })?;
        }
    }
    Ok(())
}

/// Same seed, same dataset and same trained weights.
pub fn determinism(seed: u64) -> Check {
    let spec = DatasetSpec {
        n_points: 16,
        n_samples: 24,
        seed,
        ..DatasetSpec::new(KernelSpec::Helmholtz2d { k: 2.0 }, Domain::UnitSquare)
    };
    let a = build_dataset(&spec).map_err(|e| e.to_string())?;
    let b = build_dataset(&spec).map_err(|e| e.to_string())?;
    ensure(a == b, || "datasets differ".into())?;
    let grid = spec.grid::<2>().unwrap();
    let set = TrainingSet::from_dataset(&a, &grid, &Layout::dirichlet(16)).map_err(|e| e.to_string())?;
    let cfg = TrainingConfig {
        epochs: 5,
        batch_size: 8,
        learning_rate: 1e-3,
        seed,
        ..Default::default()
    };
    let (w1, _) = train_adam(&set, &cfg).map_err(|e| e.to_string())?;
    let (w2, _) = train_adam(&set, &cfg).map_err(|e| e.to_string())?;
    ensure(w1.layers == w2.layers, || "trained weights differ".into())
}

/// MSH, operator JSON and dataset CSV survive a write/read cycle.
pub fn round_trips(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(0.08..0.3);
    let mesh = triangulate_square(h).map_err(|e| e.to_string())?;
    let back = parse_msh(&mesh.to_msh()).map_err(|e| e.to_string())?;
    ensure(
        back.vertices == mesh.vertices && back.triangles == mesh.triangles,
        || "mesh changed".into(),
    )?;

    let op = LinearBoundaryOperator::new(vec![random_matrix(&mut rng, 9, 9)], Layout::dirichlet(9))
        .unwrap()
        .for_problem(
            KernelSpec::Helmholtz2d {
                k: rng.random_range(0.5..20.0),
            },
            Domain::UnitSquare,
        );
    let op2 = LinearBoundaryOperator::from_json(&op.to_json().unwrap()).map_err(|e| e.to_string())?;
    ensure(op2 == op, || "operator changed".into())?;

    let spec = DatasetSpec {
        n_points: 8,
        n_samples: 5,
        seed,
        ..DatasetSpec::new(KernelSpec::Laplace2d, Domain::UnitSquare)
    };
    let ds = build_dataset(&spec).map_err(|e| e.to_string())?;
    let mut csv = Vec::new();
    ds.write_csv(&mut csv).map_err(|e| e.to_string())?;
    let ds2 = Dataset::read(csv.as_slice(), &ds.sidecar_json().unwrap()).map_err(|e| e.to_string())?;
    ensure(ds2 == ds, || "dataset changed".into())
}

/// Unit normals orthogonal to the local tangent, on the square and a perturbed curve.
pub fn normal_orthogonality(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curve = PolarCurve::new(
        1.0,
        vec![
            FourierTerm::cos(rng.random_range(2..6), rng.random_range(0.0..0.15)),
            FourierTerm::sin(3, rng.random_range(0.0..0.1)),
        ],
    );
    for domain in [Domain::UnitSquare, Domain::PolarCurve(curve)] {
        let n = 2 * rng.random_range(100..300);
        let grid = make_boundary_grid(&domain, n).map_err(|e| e.to_string())?;
        let pts = grid.points();
        for i in 0..n {
            let nv = grid.normals()[i];
            ensure(((nv[0] * nv[0] + nv[1] * nv[1]).sqrt() - 1.0).abs() < 1e-12, || {
                format!("normal {i} not unit")
            })?;
            let (prev, next) = (pts[(i + n - 1) % n], pts[(i + 1) % n]);
            let t = [next[0] - prev[0], next[1] - prev[1]];
            let tl = (t[0] * t[0] + t[1] * t[1]).sqrt();
            let dot = (t[0] * nv[0] + t[1] * nv[1]) / tl;
            // corners of the square are excluded
            let corner = grid.segments()[(i + n - 1) % n] != grid.segments()[(i + 1) % n];
            ensure(corner || dot.abs() < 0.05, || {
                format!("{}: point {i} normal·tangent = {dot}", domain.name())
            })?;
            let outward = [pts[i][0] + 1e-3 * nv[0], pts[i][1] + 1e-3 * nv[1]];
            ensure(!domain.contains(&outward), || {
                format!("{}: normal {i} points inward", domain.name())
            })?;
        }
    }
    Ok(())
}

/// Triangle areas sum to the domain area and survive a parse.
pub fn mesh_area(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(0.02..0.5);
    let mesh = triangulate_square(h).map_err(|e| e.to_string())?;
    ensure((mesh.total_area() - 1.0).abs() < 1e-12, || {
        format!("h = {h}: area {}", mesh.total_area())
    })?;
    ensure((0..mesh.len()).all(|t| mesh.signed_area(t) > 0.0), || {
        "clockwise triangle".into()
    })?;
    let back = parse_msh(&mesh.to_msh()).map_err(|e| e.to_string())?;
    ensure((back.total_area() - 1.0).abs() < 1e-12, || "parsed area differs".into())
}
