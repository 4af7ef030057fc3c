//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! before asserting, so `cargo test --test acceptance -- --nocapture`
//! doubles as a report.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use lsvd_core::analysis::verify_corpus;
use lsvd_core::avi::{edit_latent, AviConfig, AviPlan, SourceSpectrum};
use lsvd_core::latent::{synth_latent, GenSpec, LatentTensor, Shape, DEFAULT_SHAPE};
use lsvd_core::linalg::{geodesic_distance, reconstruct, reverse_columns, reverse_rows, svd, Matrix, Norm, SvdTriple};
use lsvd_core::phi::{PhiDims, PhiModel, SHARED_LAYERS};
use lsvd_core::trainer::{batch_objective, evaluate, train_on, Dataset, TrainConfig, TrainHistory};
use lsvd_core::{Lambdas, Rng};
use nalgebra::DMatrix;

fn report(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
}

fn orthonormality(m: &Matrix, columns: bool) -> f64 {
    let g = if columns { m.transpose().matmul(m).unwrap() } else { m.matmul(&m.transpose()).unwrap() };
    let mut worst = 0.0f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            worst = worst.max((g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

#[test]
fn svd_contract() {
    let mut rng = Rng::new(2024);
    let start = Instant::now();
    let (mut recon, mut ortho, mut ordered) = (0.0f64, 0.0f64, true);
    for _ in 0..500 {
        let (r, c) = (2 + rng.index(63), 2 + rng.index(63));
        let m = gaussian(r, c, &mut rng);
        let t = svd(&m).unwrap();
        recon = recon.max(rel_err(&t.reconstruct(), &m));
        ortho = ortho.max(orthonormality(&t.u, true)).max(orthonormality(&t.v, false));
        ordered &= t.s.windows(2).all(|w| w[0] >= w[1]);
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "svd contract",
        recon <= 1e-5 && ortho <= 1e-5 && ordered && secs < 30.0,
        format!("500 matrices, max recon {recon:.2e}, max ortho {ortho:.2e}, ordered {ordered}, {secs:.2}s"),
    );
}

#[test]
fn reversal_identity() {
    let mut rng = Rng::new(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t = svd(&gaussian(64, 64, &mut rng)).unwrap();
        let mut s = t.s.clone();
        s.reverse();
        let rev = reconstruct(&reverse_columns(&t.u), &s, &reverse_rows(&t.v)).unwrap();
        worst = worst.max(rel_err(&rev, &t.reconstruct()));
    }
    report("reversal identity", worst <= 1e-10, format!("100 64x64 matrices, max rel {worst:.2e}"));
}

fn oracle_bases(x: &SvdTriple, z: &SvdTriple, k: usize, rho: f64) -> (Matrix, Matrix) {
    let n = x.u.rows();
    let blend = |own: f64, other: f64| (1.0 - rho) * own + rho * other;
    let u = Matrix::from_fn(n, n, |i, j| match j {
        j if j < k => x.u[(i, j)],
        j if j - k < k => blend(x.u[(i, j)], z.u[(i, n - 1 - (j - k))]),
        j => blend(x.u[(i, j)], 0.0),
    });
    let v = Matrix::from_fn(n, n, |i, j| match i {
        i if i < k => x.v[(i, j)],
        i if i - k < k => blend(x.v[(i, j)], z.v[(n - 1 - (i - k), j)]),
        i => blend(x.v[(i, j)], 0.0),
    });
    (u, v)
}

fn dense_triple(a: &Matrix, d: &[f64], b: &Matrix, reversed: bool) -> Matrix {
    let n = d.len();
    Matrix::from_fn(a.rows(), b.cols(), |i, j| {
        (0..n)
            .map(|t| {
                let c = if reversed { n - 1 - t } else { t };
                a[(i, c)] * d[t] * b[(c, j)]
            })
            .sum()
    })
}

#[test]
fn composition_oracle_equivalence() {
    let mut rng = Rng::new(99);
    let (mut worst, mut cases) = (0.0f64, 0);
    for n in 2..=16 {
        for k in 1..=n / 2 {
            for rho in [0.0, 0.5, 1.0, 1.5] {
                let (x, z) = (gaussian(n, n, &mut rng), gaussian(n, n, &mut rng));
                let s: Vec<f64> = (0..n).map(|_| 4.0 * rng.uniform()).collect();
                let ds: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
                let (u, v) = oracle_bases(&svd(&x).unwrap(), &svd(&z).unwrap(), k, rho);
                let plan = AviPlan::new(&x, &z, k, rho).unwrap();
                let tr = plan.training(&s, &ds).unwrap();
                let inf = plan.inference(&s, &ds).unwrap();
                let sum: Vec<f64> = s.iter().zip(&ds).map(|(a, b)| a + b).collect();
                worst = worst
                    .max(rel_err(&tr.y_hat, &dense_triple(&u, &s, &v, false)))
                    .max(rel_err(&tr.y_tilde, &dense_triple(&u, &sum, &v, true)))
                    .max(rel_err(&inf.y_pred, &dense_triple(&u, &s, &v, false)));
                cases += 1;
            }
        }
    }
    report(
        "composition oracle equivalence",
        worst <= 1e-10,
        format!("{cases} cases, sizes 2..=16, max rel {worst:.2e}"),
    );
}

#[test]
fn identity_configuration() {
    let x = synth_latent(&GenSpec::new(DEFAULT_SHAPE, 1)).unwrap();
    let z = synth_latent(&GenSpec::new(DEFAULT_SHAPE, 2)).unwrap();
    let y = edit_latent(&x, &z, &SourceSpectrum, &AviConfig { rho: 0.0, ..Default::default() }).unwrap();
    let worst = (0..4).map(|c| rel_err(&y.channel(c), &x.channel(c))).fold(0.0, f64::max);
    report("identity configuration", worst <= 1e-4, format!("4x64x64, max per-channel rel {worst:.2e}"));
}

fn relu_pattern(model: &PhiModel, inputs: &[&Matrix]) -> Vec<bool> {
    inputs
        .iter()
        .flat_map(|x| {
            let (_, _, cache) = model.forward(x.as_slice()).unwrap();
            (0..SHARED_LAYERS).flat_map(move |l| cache.hidden(l).iter().map(|v| *v > 0.0).collect::<Vec<_>>())
        })
        .collect()
}

#[test]
fn gradient_check() {
    let mut rng = Rng::new(5);
    let plans: Vec<AviPlan> =
        (0..2).map(|_| AviPlan::new(&gaussian(8, 8, &mut rng), &gaussian(8, 8, &mut rng), 4, 1.0).unwrap()).collect();
    let entries: Vec<(&AviPlan, f64)> = plans.iter().map(|p| (p, 0.5)).collect();
    let inputs: Vec<&Matrix> = plans.iter().map(|p| &p.x).collect();
    let lambdas = Lambdas::default();
    let model = PhiModel::init(PhiDims { input: 64, hidden: 8, output: 8 }, 3).unwrap();
    let analytic = batch_objective(&model, &entries, &lambdas).unwrap().grads;

    let h = 1e-4f32;
    let (mut agree, mut checked, mut kinks) = (0, 0, 0);
    for idx in 0..model.param_count() {
        let p = model.param(idx);
        let (mut plus, mut minus) = (model.clone(), model.clone());
        plus.set_param(idx, p + h);
        minus.set_param(idx, p - h);
        if relu_pattern(&plus, &inputs) != relu_pattern(&minus, &inputs) {
            kinks += 1;
            continue;
        }
        let fp = batch_objective(&plus, &entries, &lambdas).unwrap().total;
        let fm = batch_objective(&minus, &entries, &lambdas).unwrap().total;
        let fd = (fp - fm) / (plus.param(idx) - minus.param(idx)) as f64;
        let g = analytic.get(idx);
        let scale = g.abs().max(fd.abs());
        checked += 1;
        if scale == 0.0 || (g - fd).abs() / scale <= 1e-3 {
            agree += 1;
        }
    }
    let frac = agree as f64 / checked as f64;
    report(
        "gradient check",
        frac >= 0.95,
        format!(
            "{agree}/{checked} parameters within 1e-3 ({:.1}%), {kinks} excluded at ReLU kinks, {} total",
            100.0 * frac,
            model.param_count()
        ),
    );
}

struct Fixture {
    x: LatentTensor,
    z: LatentTensor,
    model: PhiModel,
    history: TrainHistory,
    elapsed: Duration,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let x = synth_latent(&GenSpec::new(DEFAULT_SHAPE, 42)).unwrap();
        let z = synth_latent(&GenSpec::new(DEFAULT_SHAPE, 43)).unwrap();
        let cfg = TrainConfig { samples_per_pair: Some(512), sigma: 0.0, seed: 42, ..Default::default() };
        let ds = Dataset::new(vec![(x.clone(), z.clone())], 512, 0.0, 42).unwrap();
        let start = Instant::now();
        let (model, history) = train_on(&ds, &cfg).unwrap();
        Fixture { x, z, model, history, elapsed: start.elapsed() }
    })
}

#[test]
fn training_fixture() {
    let f = fixture();
    let means = f.history.epoch_totals();
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let ratio = means.last().unwrap() / means[0];
    let step_ratio = means.last().unwrap() / f.history.steps[0].total;
    let secs = f.elapsed.as_secs_f64();
    report(
        "training fixture",
        decreasing && ratio <= 0.1 && secs <= 600.0,
        format!(
            "epoch means {}, final/first-epoch {ratio:.4}, final/first-step {step_ratio:.4}, {} steps in {secs:.1}s",
            means.iter().map(|m| format!("{m:.4e}")).collect::<Vec<_>>().join(" > "),
            f.history.steps.len()
        ),
    );
}

#[test]
fn interpolation_monotonicity() {
    let f = fixture();
    let rhos = [0.0, 0.25, 0.5, 0.75, 1.0];
    let edits: Vec<LatentTensor> = rhos
        .iter()
        .map(|&rho| edit_latent(&f.x, &f.z, &f.model, &AviConfig { rho, ..Default::default() }).unwrap())
        .collect();
    let dist: Vec<f64> = edits
        .iter()
        .map(|e| e.data().iter().zip(edits[0].data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt())
        .collect();
    let monotone = dist.windows(2).all(|w| w[1] >= w[0]);
    report(
        "interpolation monotonicity",
        monotone,
        format!("|y(rho) - y(0)| = {}", dist.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>().join(", ")),
    );
}

#[test]
fn fixture_identity_fidelity() {
    let f = fixture();
    let r = evaluate(&f.model, &f.x, &f.z, &AviConfig::default()).unwrap();
    let ratios: Vec<f64> = r.channels.iter().map(|c| c.fidelity_ratio).collect();
    println!("INFO fixture identity fidelity ratios {ratios:?}, mean {:.4}", r.mean_ratio);
    report(
        "fixture identity fidelity (supplementary)",
        ratios.iter().all(|r| *r <= 1.0),
        format!("per-channel |y_pred - x| / |y_pred - z| = {ratios:.4?}"),
    );
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Pinned from the first oracle-checked run.
const THEOREM_RATE: f64 = 1.0;

#[test]
fn theorem_harness() {
    let shape = Shape::new(1, 64, 64);
    let pairs: Vec<(LatentTensor, LatentTensor)> = (0..100)
        .map(|i| {
            (
                synth_latent(&GenSpec::new(shape, 10_000 + 2 * i)).unwrap(),
                synth_latent(&GenSpec::new(shape, 10_001 + 2 * i)).unwrap(),
            )
        })
        .collect();
    let corpus = verify_corpus(&pairs, 32, Norm::Frobenius).unwrap();
    let mut worst = 0.0f64;
    for ((x, z), r) in pairs.iter().zip(&corpus.reports) {
        let (sx, sz) = (svd(&x.channel(0)).unwrap(), svd(&z.channel(0)).unwrap());
        let (u_hat, _) = oracle_bases(&sx, &sz, 32, 1.0);
        let (mut fx, mut fz) = (0.0, 0.0);
        for i in 0..64 {
            for j in 0..64 {
                fx += (u_hat[(i, j)] - sx.u[(i, j)]).powi(2);
                fz += (u_hat[(i, j)] - sz.u[(i, j)]).powi(2);
            }
        }
        let spec_x = (to_na(&u_hat) - to_na(&sx.u)).singular_values().max();
        let spec_z = (to_na(&u_hat) - to_na(&sz.u)).singular_values().max();
        let c = &r.channels[0];
        worst = worst
            .max((c.frobenius_to_x - fx.sqrt()).abs())
            .max((c.frobenius_to_z - fz.sqrt()).abs())
            .max((c.spectral_to_x - spec_x).abs())
            .max((c.spectral_to_z - spec_z).abs());
    }
    let pre = corpus.rate_given_precondition.map_or("n/a".into(), |r| format!("{r:.2}"));
    let spectral =
        corpus.reports.iter().flat_map(|r| &r.channels).filter(|c| c.spectral_to_x <= c.spectral_to_z).count() as f64
            / 100.0;
    report(
        "theorem harness",
        worst <= 1e-12 && corpus.rate == THEOREM_RATE,
        format!(
            "100 pairs, k=32, max oracle deviation {worst:.2e}, frobenius rate {:.2} (pinned {THEOREM_RATE}), rate given precondition {pre}, spectral rate {spectral:.2}",
            corpus.rate
        ),
    );
}

#[test]
fn geodesic_metric() {
    let mut rng = Rng::new(77);
    let mut identical = 0.0f64;
    let mut orthogonal = 0.0f64;
    let mut symmetry = 0.0f64;
    for p in 1..=4 {
        let a = svd(&gaussian(16, 16, &mut rng)).unwrap().u;
        identical = identical.max(geodesic_distance(&a, &a, p).unwrap());
        // Columns 0..p against columns p..2p of the same orthonormal basis.
        let b = Matrix::from_fn(16, p, |i, j| a[(i, p + j)]);
        let expected = (p as f64).sqrt() * std::f64::consts::FRAC_PI_2;
        orthogonal = orthogonal.max((geodesic_distance(&a, &b, p).unwrap() - expected).abs());
        for _ in 0..25 {
            let (x, y) = (gaussian(16, p + 1, &mut rng), gaussian(16, p + 2, &mut rng));
            let d = (geodesic_distance(&x, &y, p).unwrap() - geodesic_distance(&y, &x, p).unwrap()).abs();
            symmetry = symmetry.max(d);
        }
    }
    report(
        "geodesic metric",
        identical <= 1e-6 && orthogonal <= 1e-6 && symmetry <= 1e-12,
        format!("identical {identical:.2e}, orthogonal error {orthogonal:.2e}, asymmetry {symmetry:.2e}"),
    );
}

fn lsvd(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_lsvd")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "lsvd {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut stdout = Vec::new();
    let shape = ["--shape", "2", "16", "16"];
    lsvd(dir, &[&["gen", "--out", "x.lat", "--seed", "5", "--time-step", "800"][..], &shape].concat());
    lsvd(dir, &[&["gen", "--out", "z.lat", "--seed", "6", "--time-step", "500"][..], &shape].concat());
    lsvd(dir, &[&["gen", "--out", "w.lat", "--seed", "7", "--std", "0.5"][..], &shape].concat());
    lsvd(
        dir,
        &[
            "train",
            "--x",
            "x.lat",
            "--z",
            "z.lat",
            "--out-model",
            "m.phi",
            "--n",
            "8",
            "--batch",
            "4",
            "--k",
            "4",
            "--hidden",
            "16",
            "--epochs",
            "2",
            "--seed",
            "11",
            "--history",
            "hist.csv",
        ],
    );
    lsvd(dir, &["edit", "--x", "x.lat", "--z", "z.lat", "--model", "m.phi", "--k", "4", "--out", "e.lat"]);
    stdout.extend(lsvd(
        dir,
        &[
            "interpolate",
            "--x",
            "x.lat",
            "--z",
            "z.lat",
            "--model",
            "m.phi",
            "--k",
            "4",
            "--steps",
            "3",
            "--out-dir",
            "interp",
        ],
    ));
    for (name, args) in [
        ("geodesic.csv", vec!["analyze", "geodesic", "x.lat", "z.lat", "w.lat"]),
        ("mobility.json", vec!["--format", "json", "analyze", "mobility", "x.lat", "z.lat", "w.lat"]),
        ("svtrace.csv", vec!["analyze", "svtrace", "x.lat", "e.lat"]),
        ("theorem.csv", vec!["analyze", "theorem", "--x", "x.lat", "--z", "z.lat"]),
    ] {
        let mut a = args.clone();
        a.extend(["--out", name]);
        lsvd(dir, &a);
    }
    let mut files = snapshot(dir);
    files.push(("<stdout>".into(), stdout));
    files
}

#[test]
fn cli_reproducibility() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (pipeline(a.path()), pipeline(b.path()));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    report(
        "cli reproducibility",
        fa.len() == fb.len() && differing.is_empty() && fa.len() >= 15,
        format!("{} outputs compared ({}), differing: {differing:?}", fa.len(), names.join(" ")),
    );
}
