//! Subcommand implementations.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use bno_core::geometry::{make_boundary_grid, make_surface_grid, parse_msh, triangulate_square, Domain, TriMesh};
use bno_core::kernels::KernelSpec;
use bno_core::operator::{fit_least_squares, train_adam, Layout, LinearBoundaryOperator, TrainingConfig, TrainingSet};
use bno_core::quadrature::{log_square_benchmark, QuadBenchRow, SingularIntegralConfig, BENCH_INTEGRANDS};
use bno_core::solvers::{
    make_test_suite, mixed_input, predict_neumann, run_dirichlet_case, run_mixed_case, run_poisson_case,
    solve_dirichlet, solve_helmholtz, solve_mixed, solve_poisson, summarize, CaseReport, EvalGrid, MixedPartition,
    SolutionField, TestCase, TestFamily,
};
use bno_core::synthesis::{build_dataset, Dataset, DatasetSpec};
use serde_json::json;

use crate::interp::MeshField;
use crate::provenance::{sidecar_path, Provenance};
use crate::{Equation, EvalArgs, GenArgs, Method, QuadbenchArgs, SolveArgs, TrainArgs};

const DATASET_CSV: &str = "dataset.csv";
const SPEC_JSON: &str = "spec.json";
const PROVENANCE_JSON: &str = "provenance.json";

fn parse_domain(s: &str) -> Result<Domain> {
    let domain = match s {
        "square" | "unit_square" => Domain::UnitSquare,
        "disk" => Domain::unit_disk(),
        "sphere" => Domain::unit_sphere(),
        path if path.ends_with(".json") => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading domain file {path}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing domain file {path}"))?
        }
        other => bail!("unknown domain `{other}`; use square, disk, sphere or a .json file"),
    };
    domain.validate()?;
    Ok(domain)
}

fn kernel_for(eq: Equation, k: Option<f64>) -> Result<KernelSpec> {
    let kernel = match eq {
        Equation::Laplace => {
            ensure!(k.is_none(), "--k applies to Helmholtz equations only");
            KernelSpec::Laplace2d
        }
        Equation::Helmholtz => KernelSpec::Helmholtz2d {
            k: k.context("--k is required for helmholtz")?,
        },
        Equation::Helmholtz3d => KernelSpec::Helmholtz3d {
            k: k.context("--k is required for helmholtz3d")?,
        },
    };
    kernel.validate()?;
    Ok(kernel)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// One number per line; a non-numeric first line is taken as a header.
fn read_column(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        ensure!(
            !t.contains(','),
            "{}:{}: expected a single column",
            path.display(),
            i + 1
        );
        match t.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => {}
            Err(_) => bail!("{}:{}: `{t}` is not a number", path.display(), i + 1),
        }
    }
    Ok(out)
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let kernel = kernel_for(a.equation, a.k)?;
    let domain = parse_domain(&a.domain)?;
    ensure!(
        domain.dim() == kernel.dim(),
        "{} is a {}D domain but {} is {}D",
        domain.name(),
        domain.dim(),
        kernel.name(),
        kernel.dim()
    );
    let spec = DatasetSpec {
        n_points: a.n,
        n_samples: a.samples,
        n_kernels_per_sample: a.kernels_per_sample,
        source_box: vec![(-a.source_half_width, a.source_half_width); kernel.dim()],
        min_boundary_distance: a.min_distance,
        seed: a.seed,
        ..DatasetSpec::new(kernel, domain)
    };
    spec.validate()?;
    let ds = build_dataset(&spec)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let csv = a.out.join(DATASET_CSV);
    let mut w = create(&csv)?;
    ds.write_csv(&mut w)?;
    w.flush()?;
    let sidecar = a.out.join(SPEC_JSON);
    std::fs::write(&sidecar, ds.sidecar_json()? + "\n")?;
    let prov = Provenance::new("gen", Some(a.seed), a).outputs(&[csv.clone(), sidecar])?;
    prov.write(&a.out.join(PROVENANCE_JSON))?;
    println!(
        "{} samples x {} points ({:?} normalization) -> {}, sha256 {}",
        ds.len(),
        ds.n_points(),
        spec.norm_mode(),
        csv.display(),
        prov.outputs[0].sha256
    );
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<(Dataset, PathBuf, PathBuf)> {
    let csv = dir.join(DATASET_CSV);
    let sidecar = dir.join(SPEC_JSON);
    let text = std::fs::read_to_string(&sidecar).with_context(|| format!("reading {}", sidecar.display()))?;
    let file = File::open(&csv).with_context(|| format!("opening {}", csv.display()))?;
    let ds = Dataset::read(BufReader::new(file), &text).with_context(|| format!("reading {}", csv.display()))?;
    Ok((ds, csv, sidecar))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let (ds, csv, sidecar) = load_dataset(&a.data)?;
    let kernel = ds.spec.kernel;
    let domain = ds.spec.domain.clone();
    let set = if kernel.dim() == 3 {
        ensure!(a.dirichlet_segments.is_empty(), "mixed layouts need a planar domain");
        let grid = ds.spec.grid::<3>()?;
        TrainingSet::from_dataset(&ds, &grid, &Layout::dirichlet(grid.len()))?
    } else {
        let grid = ds.spec.grid::<2>()?;
        let layout = if a.dirichlet_segments.is_empty() {
            Layout::dirichlet(grid.len())
        } else {
            Layout::mixed(&grid, &a.dirichlet_segments)?
        };
        TrainingSet::from_dataset(&ds, &grid, &layout)?
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut name = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".log.csv");
        a.out.with_file_name(name)
    });
    let op = match a.method {
        Method::Ls => {
            let fit = fit_least_squares(&set)?;
            let mut w = create(&log_path)?;
            writeln!(w, "epoch,mean_loss,best_loss")?;
            writeln!(w, "0,{},{}", fit.residual_loss, fit.residual_loss)?;
            w.flush()?;
            println!(
                "least-squares fit: residual loss {:.3e} (ridge {:.1e})",
                fit.residual_loss, fit.ridge
            );
            fit.operator
        }
        Method::Adam => {
            let cfg = TrainingConfig {
                learning_rate: a.lr,
                batch_size: a.batch,
                epochs: a.epochs,
                adam_beta1: a.beta1,
                adam_beta2: a.beta2,
                lambda1: a.lambda1,
                lambda2: a.lambda2,
                seed: a.seed,
                checkpoint_on_best: !a.no_checkpoint,
                hidden: a.hidden.clone(),
                ..TrainingConfig::default()
            };
            let (op, rep) = train_adam(&set, &cfg)?;
            let mut w = create(&log_path)?;
            rep.write_log(&mut w)?;
            w.flush()?;
            println!(
                "adam: best loss {:.3e} at epoch {} of {} ({:.1}s)",
                rep.best_loss, rep.best_epoch, cfg.epochs, rep.wall_time
            );
            op
        }
    };
    let op = op.for_problem(kernel, domain);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    op.save(&a.out)?;
    Provenance::new("train", Some(a.seed), a)
        .input(&csv)?
        .input(&sidecar)?
        .outputs(&[a.out.clone(), log_path])?
        .write(&sidecar_path(&a.out))?;
    println!("model -> {}", a.out.display());
    Ok(())
}

fn parse_suite(suite: Option<&str>, kernel: &KernelSpec, mixed: bool) -> Result<Vec<TestFamily>> {
    let default = match kernel {
        KernelSpec::Laplace2d => "laplace",
        KernelSpec::Helmholtz2d { .. } => "helmholtz",
        KernelSpec::Helmholtz3d { .. } => "plane-wave-3d",
    };
    let mut out = Vec::new();
    for token in suite
        .unwrap_or(default)
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
    {
        let fams: Vec<TestFamily> = match token {
            "laplace" | "laplace-u1..u5" => TestFamily::LAPLACE.to_vec(),
            "helmholtz" => TestFamily::HELMHOLTZ.to_vec(),
            "poisson" => TestFamily::POISSON.to_vec(),
            t => vec![TestFamily::parse(&t.replace('-', "_")).with_context(|| format!("unknown test family `{t}`"))?],
        };
        for f in fams {
            let ok = match kernel {
                KernelSpec::Laplace2d if mixed => TestFamily::LAPLACE.contains(&f),
                KernelSpec::Laplace2d => TestFamily::LAPLACE.contains(&f) || TestFamily::POISSON.contains(&f),
                KernelSpec::Helmholtz2d { .. } => TestFamily::HELMHOLTZ.contains(&f),
                KernelSpec::Helmholtz3d { k } => f == TestFamily::PlaneWave3d && *k == 1.0,
            };
            ensure!(
                ok,
                "family {} does not fit a {} model{}",
                f.name(),
                kernel.name(),
                if mixed { " with mixed layout" } else { "" }
            );
            if !out.contains(&f) {
                out.push(f);
            }
        }
    }
    ensure!(!out.is_empty(), "empty test suite");
    Ok(out)
}

fn load_model(path: &Path) -> Result<(LinearBoundaryOperator, KernelSpec, Domain)> {
    let op = LinearBoundaryOperator::load(path).with_context(|| format!("loading model {}", path.display()))?;
    let kernel = op.kernel.context("model does not record its kernel")?;
    let domain = op.domain.clone().context("model does not record its domain")?;
    Ok((op, kernel, domain))
}

fn partition_of(op: &LinearBoundaryOperator) -> Result<MixedPartition> {
    let segs: Option<Vec<u8>> = op.layout.dirichlet_segments().into_iter().collect();
    Ok(MixedPartition::from_dirichlet(
        &segs.context("mixed layout without edge labels")?,
    )?)
}

fn poisson_mesh(mesh: Option<&Path>, h: f64, domain: &Domain) -> Result<TriMesh> {
    match mesh {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(parse_msh(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None if *domain == Domain::UnitSquare => Ok(triangulate_square(h)?),
        None => bail!("{} domains need a --mesh file for source terms", domain.name()),
    }
}

fn write_field(path: &Path, field: &SolutionField) -> Result<()> {
    let mut w = create(path)?;
    field.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (op, kernel, domain) = load_model(&a.model)?;
    let mixed = !op.layout.is_dirichlet();
    let families = parse_suite(a.suite.as_deref(), &kernel, mixed)?;
    std::fs::create_dir_all(&a.out)?;
    let summary_path = a.out.join("summary.json");
    let mut outputs = vec![summary_path.clone()];
    let names: Vec<&str> = families.iter().map(|f| f.name()).collect();

    if kernel.dim() == 3 {
        let grid = make_surface_grid(&domain, op.layout.n_points)?;
        let case = TestCase::new(TestFamily::PlaneWave3d, vec![]);
        let (g, h) = case.traces(&grid);
        let pred = predict_neumann(&op, &grid, &g)?;
        let err = bno_core::solvers::relative_l2(&pred, &h)?;
        let summary = json!({
            "kernel": kernel, "domain": domain, "suite": names, "seed": a.seed,
            "cases": [{ "family": case.family, "params": case.params, "dn_error": err }],
        });
        std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
        println!("{}: dn error {err:.3e}", case.family.name());
    } else {
        let grid = make_boundary_grid(&domain, op.layout.n_points)?;
        let eval = EvalGrid::new(&domain, a.grid_n, a.margin);
        let cfg = SingularIntegralConfig {
            r0: a.r0,
            ..SingularIntegralConfig::default()
        };
        let partition = if mixed { Some(partition_of(&op)?) } else { None };
        let mesh = if families.iter().any(|f| TestFamily::POISSON.contains(f)) {
            Some(poisson_mesh(a.mesh.as_deref(), a.mesh_h, &domain)?)
        } else {
            None
        };
        let mut reports: Vec<CaseReport> = Vec::new();
        for &family in &families {
            let mut cases = make_test_suite(family, kernel.wavenumber(), &domain, a.cases, a.seed)?;
            // families without parameters repeat one function
            if cases.first().is_some_and(|c| c.params.is_empty()) {
                cases.truncate(1);
            }
            for (i, case) in cases.iter().enumerate() {
                let (report, field) = if TestFamily::POISSON.contains(&family) {
                    run_poisson_case(&op, &grid, mesh.as_ref().expect("mesh built"), case, &eval, cfg)?
                } else if let Some(p) = &partition {
                    let (r, sol) = run_mixed_case(&op, &grid, p, case, &eval)?;
                    (r, sol.field)
                } else {
                    run_dirichlet_case(&op, &kernel, &grid, case, &eval)?
                };
                if !a.no_fields {
                    let path = a.out.join("fields").join(format!("{}_{i:02}.csv", family.name()));
                    write_field(&path, &field)?;
                    outputs.push(path);
                }
                reports.push(report);
            }
        }
        let fams = summarize(&reports);
        for f in &fams {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
            println!(
                "{:<18} cases {:>3}  total {:.3e}  dn {}  dirichlet {}  neumann {}  imag {:.1e}",
                f.family.name(),
                f.cases,
                f.mean_total_error,
                opt(f.mean_dn_error),
                opt(f.mean_dirichlet_error),
                opt(f.mean_neumann_error),
                f.mean_imaginary_ratio
            );
        }
        let summary = json!({
            "kernel": kernel, "domain": domain, "suite": names, "seed": a.seed,
            "grid_n": a.grid_n, "margin": a.margin, "families": fams, "cases": reports,
        });
        std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Provenance::new("eval", Some(a.seed), a)
        .input(&a.model)?
        .outputs(&outputs)?
        .write(&a.out.join(PROVENANCE_JSON))?;
    println!("summary -> {}", summary_path.display());
    Ok(())
}

/// `square400` → (`square`, 400).
fn parse_grid_name(s: &str) -> Result<(String, usize)> {
    let split = s
        .find(|c: char| c.is_ascii_digit())
        .with_context(|| format!("grid `{s}` has no point count"))?;
    let n = s[split..]
        .parse()
        .with_context(|| format!("grid `{s}`: bad point count"))?;
    Ok((s[..split].to_string(), n))
}

fn grid_matches(name: &str, domain: &Domain) -> bool {
    matches!(
        (name, domain),
        ("square", Domain::UnitSquare)
            | ("disk" | "polar", Domain::PolarCurve(_))
            | ("multiloop", Domain::MultiLoop { .. })
            | ("sphere", Domain::Sphere { .. })
    )
}

pub fn solve(a: &SolveArgs) -> Result<()> {
    let (op, kernel, domain) = load_model(&a.model)?;
    let n = op.layout.n_points;
    if let Some(spec) = &a.grid {
        let (name, count) = parse_grid_name(spec)?;
        ensure!(
            grid_matches(&name, &domain) && count == n,
            "grid {spec} does not match the model ({} with {n} points)",
            domain.name()
        );
    }
    let g = read_column(&a.g)?;
    ensure!(
        g.len() == n,
        "{} has {} values, the model expects {n}",
        a.g.display(),
        g.len()
    );
    let mut prov = Provenance::new("solve", None, a).input(&a.model)?.input(&a.g)?;
    let mut outputs = vec![a.out.clone()];

    if kernel.dim() == 3 {
        ensure!(
            a.source.is_none() && a.h.is_none(),
            "surface models take Dirichlet data only"
        );
        let grid = make_surface_grid(&domain, n)?;
        let h = predict_neumann(&op, &grid, &g)?;
        let mut w = create(&a.out)?;
        writeln!(w, "x,y,z,g,h")?;
        for ((p, gv), hv) in grid.points().iter().zip(&g).zip(&h) {
            writeln!(w, "{},{},{},{gv},{hv}", p[0], p[1], p[2])?;
        }
        w.flush()?;
        prov.outputs(&outputs)?.write(&sidecar_path(&a.out))?;
        println!("{n} Neumann values -> {}", a.out.display());
        return Ok(());
    }

    let grid = make_boundary_grid(&domain, n)?;
    let eval = EvalGrid::new(&domain, a.grid_n, a.margin);
    let (field, traces) = if !op.layout.is_dirichlet() {
        ensure!(a.source.is_none(), "source terms need a Dirichlet model");
        let h_path = a.h.as_ref().context("mixed models need --h with Neumann data")?;
        prov = prov.input(h_path)?;
        let h = read_column(h_path)?;
        ensure!(
            h.len() == n,
            "{} has {} values, the model expects {n}",
            h_path.display(),
            h.len()
        );
        let known = mixed_input(&op, &grid, &g, &h)?;
        let sol = solve_mixed(&op, &kernel, &grid, &partition_of(&op)?, &known, &eval)?;
        (sol.field, Some((sol.g, sol.h)))
    } else if let Some(src) = &a.source {
        ensure!(
            kernel == KernelSpec::Laplace2d,
            "source terms are supported for Laplace models"
        );
        ensure!(
            a.traces_out.is_none(),
            "--traces-out is not available with a source term"
        );
        prov = prov.input(src)?;
        if let Some(m) = &a.mesh {
            prov = prov.input(m)?;
        }
        let mesh = poisson_mesh(a.mesh.as_deref(), a.mesh_h, &domain)?;
        let f = MeshField::new(&mesh, read_column(src)?)?;
        let cfg = SingularIntegralConfig {
            r0: a.r0,
            ..SingularIntegralConfig::default()
        };
        (solve_poisson(&op, |p| f.eval(p), &g, &mesh, &grid, &eval, cfg)?, None)
    } else {
        ensure!(a.h.is_none(), "--h applies to mixed models");
        let (field, h) = match kernel {
            KernelSpec::Helmholtz2d { k } => solve_helmholtz(&op, k, &grid, &g, &eval)?,
            _ => solve_dirichlet(&op, &kernel, &grid, &g, &eval)?,
        };
        (field, Some((g.clone(), h)))
    };
    write_field(&a.out, &field)?;
    if let (Some(path), Some((g, h))) = (&a.traces_out, traces) {
        let mut w = create(path)?;
        writeln!(w, "x,y,g,h")?;
        for ((p, gv), hv) in grid.points().iter().zip(&g).zip(&h) {
            writeln!(w, "{},{},{gv},{hv}", p[0], p[1])?;
        }
        w.flush()?;
        outputs.push(path.clone());
    }
    prov.outputs(&outputs)?.write(&sidecar_path(&a.out))?;
    let scored = (0..field.points.len())
        .filter(|&i| field.inside[i] && !field.excluded[i])
        .count();
    println!(
        "field on {} points ({scored} away from the boundary) -> {}",
        field.points.len(),
        a.out.display()
    );
    Ok(())
}

pub fn quadbench(a: &QuadbenchArgs) -> Result<()> {
    let cfg = SingularIntegralConfig {
        r0: a.r0,
        angles: a.angles,
        ..SingularIntegralConfig::default()
    };
    let names: Vec<&str> = match &a.kernel {
        Some(k) => vec![k.as_str()],
        None => BENCH_INTEGRANDS.iter().map(|(n, _)| *n).collect(),
    };
    ensure!(!a.h.is_empty(), "no mesh sizes given");
    let mut rows: Vec<QuadBenchRow> = Vec::new();
    for name in names {
        for &h in &a.h {
            rows.push(log_square_benchmark(name, h, cfg)?);
        }
    }
    let mut text = format!("{}\n", QuadBenchRow::CSV_HEADER);
    for r in &rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
            Provenance::new("quadbench", None, a)
                .outputs(std::slice::from_ref(path))?
                .write(&sidecar_path(path))?;
            print!("{text}");
        }
        None => print!("{text}"),
    }
    Ok(())
}
