//! Acceptance checks, one line per criterion. Exits non-zero if any fail.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use sfcdcl::fap::{self, Grid};
use sfcdcl::fusion::{uncertainty_weight, ProbVector};
use sfcdcl::klda::{ClassId, CovarianceRule, KldaConfig, KldaModel, MeanMode, WeightedBatch};
use sfcdcl::pipeline::{self, Domain, RunConfig, Samples, TaskSpec};
use sfcdcl::rff::{RffMap, RffParams};
use sfcdcl::rng;
use sfcdcl::storage::golden;
use sfcdcl::storage::report::RunReport;
use sfcdcl::synth::{self, Shift, SynthSpec};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_frob(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    diff / b.mapv(|v| v * v).sum().sqrt().max(f64::MIN_POSITIVE)
}

fn rel_vec(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    diff / b.mapv(|v| v * v).sum().sqrt().max(f64::MIN_POSITIVE)
}

fn unit_vector(r: &mut rng::StreamRng, d: usize) -> Array1<f64> {
    let v = Array1::from_shape_simple_fn(d, || r.sample::<f64, _>(StandardNormal));
    let n = v.dot(&v).sqrt();
    v / n
}

fn rff_errors(pairs: &[(Array1<f64>, Array1<f64>)], feature_dim: usize, seed: u64) -> Result<(f64, f64), String> {
    let map = RffMap::sample(RffParams::new(feature_dim, 1.0).with_seed(seed), 16).map_err(|e| e.to_string())?;
    let mut sum = 0.0;
    let mut worst: f64 = 0.0;
    for (x, y) in pairs {
        let approx = map.map(x.view()).unwrap().dot(&map.map(y.view()).unwrap());
        let d2 = (x - y).mapv(|v| v * v).sum();
        let exact = (-d2 / 2.0).exp();
        let err = (approx - exact).abs();
        sum += err;
        worst = worst.max(err);
    }
    Ok((sum / pairs.len() as f64, worst))
}

fn rff_fidelity() -> Check {
    let start = Instant::now();
    let mut r = rng::stream(2024, 0);
    let pairs: Vec<_> = (0..1000).map(|_| (unit_vector(&mut r, 16), unit_vector(&mut r, 16))).collect();
    let (mean, max) = rff_errors(&pairs, 2000, 1)?;
    let (mean_500, _) = rff_errors(&pairs, 500, 1)?;
    let (mean_8000, _) = rff_errors(&pairs, 8000, 1)?;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        mean <= 0.02 && max <= 0.08 && mean_8000 < mean_500 && secs < 10.0,
        format!(
            "D=2000 mean {mean:.4} (<= 0.02), max {max:.4} (<= 0.08); D=500 {mean_500:.4} > D=8000 {mean_8000:.4}; {secs:.2}s (< 10s)"
        ),
    )
}

fn fit_split(z: &Array2<f64>, labels: &[ClassId], weights: &[f64], config: KldaConfig, parts: usize) -> KldaModel {
    let mut model = KldaModel::new(z.ncols(), config).unwrap();
    let n = z.nrows();
    let step = n.div_ceil(parts);
    for s in (0..n).step_by(step) {
        let e = (s + step).min(n);
        let batch = WeightedBatch::new(
            z.slice(ndarray::s![s..e, ..]).to_owned(),
            labels[s..e].to_vec(),
            weights[s..e].to_vec(),
        )
        .unwrap();
        model.update(&batch).unwrap();
    }
    model
}

fn streaming_equals_batch() -> Check {
    let (n, d) = (900, 64);
    let mut r = rng::stream(99, 0);
    let z = Array2::from_shape_simple_fn((n, d), || r.sample::<f64, _>(StandardNormal));
    let mut labels: Vec<ClassId> = (0..n).map(|i| (i % 3) as ClassId).collect();
    labels.shuffle(&mut r);
    let ones = vec![1.0; n];
    let random: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
    let mut worst: f64 = 0.0;
    let modes = [
        ("unweighted", KldaConfig::unweighted(), &ones),
        ("weighted", KldaConfig::weighted(MeanMode::Literal), &random),
        ("weighted-normalized", KldaConfig::weighted(MeanMode::Normalized), &random),
    ];
    let mut detail = Vec::new();
    for (name, config, weights) in modes {
        let reference = fit_split(&z, &labels, weights, config, 1);
        let a_ref = reference.covariance().unwrap();
        let mut mode_worst: f64 = 0.0;
        for parts in [3, 9] {
            let m = fit_split(&z, &labels, weights, config, parts);
            mode_worst = mode_worst.max(rel_frob(&m.covariance().unwrap(), &a_ref));
            for c in 0..3 {
                mode_worst = mode_worst.max(rel_vec(&m.class(c).unwrap().mean, &reference.class(c).unwrap().mean));
            }
        }
        worst = worst.max(mode_worst);
        detail.push(format!("{name} {mode_worst:.1e}"));
    }
    ensure(worst <= 1e-8, format!("max relative gap over 1/3/9 batches: {} (<= 1e-8)", detail.join(", ")))
}

fn unit_weight_consistency() -> Check {
    let mut detail = Vec::new();
    let mut ok = true;
    for n in [10usize, 100, 1000] {
        let mut r = rng::stream(n as u64, 5);
        let z = Array2::from_shape_simple_fn((n, 6), || r.sample::<f64, _>(StandardNormal));
        let labels: Vec<ClassId> = (0..n).map(|i| (i % 3) as ClassId).collect();
        let ones = vec![1.0; n];
        let bound = 2.0 / n as f64;
        let mut gaps = Vec::new();
        for rule in [CovarianceRule::Pooled, CovarianceRule::Recursive] {
            let plain = fit_split(&z, &labels, &ones, KldaConfig::unweighted().with_rule(rule), 1);
            let weighted = fit_split(&z, &labels, &ones, KldaConfig::weighted(MeanMode::Literal).with_rule(rule), 1);
            let means_equal = (0..3).all(|c| plain.class(c).unwrap().mean == weighted.class(c).unwrap().mean);
            ok &= means_equal;
            gaps.push(rel_frob(&weighted.covariance().unwrap(), &plain.covariance().unwrap()));
        }
        // The per-class recursive form is reported but not gated: its gap
        // depends on class arrival order (first class of size n1 adds ~1/(n1-1)).
        ok &= gaps[0] <= bound;
        detail.push(format!("N={n}: gap {:.2e} (<= {bound:.0e}), recursive form {:.2e}", gaps[0], gaps[1]));
    }
    ensure(ok, format!("means identical; {}", detail.join("; ")))
}

fn kernel_benefit() -> Check {
    let start = Instant::now();
    let (x, y) = synth::circles(500, 0.1, 11);
    let (xt, yt) = synth::circles(500, 0.1, 12);
    let rff = RffMap::sample(RffParams::new(1000, 1.0).with_seed(3), 2).unwrap();
    let mut klda = KldaModel::new(1000, KldaConfig::unweighted()).unwrap();
    klda.update(&WeightedBatch::unit(rff.map_batch(x.view()).unwrap(), y.clone()).unwrap())
        .unwrap();
    klda.finalize().unwrap();
    let pred = klda.predict_batch(rff.map_batch(xt.view()).unwrap().view()).unwrap();
    let acc = pred.iter().zip(&yt).filter(|(p, l)| p == l).count() as f64 / yt.len() as f64;

    let mut lda = KldaModel::new(2, KldaConfig::unweighted()).unwrap();
    lda.update(&WeightedBatch::unit(x, y).unwrap()).unwrap();
    lda.finalize().unwrap();
    let pred = lda.predict_batch(xt.view()).unwrap();
    let lin = pred.iter().zip(&yt).filter(|(p, l)| p == l).count() as f64 / yt.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        acc >= 0.95 && lin <= 0.60 && secs < 30.0,
        format!("kernel {:.1}% (>= 95%), identity-map LDA {:.1}% (<= 60%), {secs:.2}s (< 30s)", 100.0 * acc, 100.0 * lin),
    )
}

fn entropy_endpoints() -> Check {
    let uniform = uncertainty_weight(&ProbVector::uniform(4).unwrap(), 4).unwrap();
    let one_hot = uncertainty_weight(&ProbVector::new(vec![0.0, 1.0, 0.0, 0.0]).unwrap(), 4).unwrap();
    let half = uncertainty_weight(&ProbVector::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap(), 4).unwrap();
    ensure(
        uniform.abs() <= 1e-9 && (one_hot - 1.0).abs() <= 1e-9 && (half - 0.5).abs() <= 1e-9,
        format!("uniform {uniform:.3e}, one-hot {one_hot}, (0.5,0.5,0,0) {half:.12}"),
    )
}

/// Separable orthonormal Haar analysis, written out independently of the crate.
fn haar_oracle(x: &Array2<f64>) -> [Array2<f64>; 4] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (h, w) = x.dim();
    let (bh, bw) = (h / 2, w / 2);
    let mut lo = Array2::zeros((h, bw));
    let mut hi = Array2::zeros((h, bw));
    for i in 0..h {
        for k in 0..bw {
            lo[(i, k)] = s * (x[(i, 2 * k)] + x[(i, 2 * k + 1)]);
            hi[(i, k)] = s * (x[(i, 2 * k)] - x[(i, 2 * k + 1)]);
        }
    }
    let column = |m: &Array2<f64>, sign: f64| {
        Array2::from_shape_fn((bh, bw), |(k, j)| s * (m[(2 * k, j)] + sign * m[(2 * k + 1, j)]))
    };
    [column(&lo, 1.0), column(&lo, -1.0), column(&hi, 1.0), column(&hi, -1.0)]
}

fn wavelet_conformance() -> Check {
    let mut worst_rt: f64 = 0.0;
    let mut worst_energy: f64 = 0.0;
    let mut r = rng::stream(5, 0);
    for _ in 0..5 {
        let grid = Grid::new(Array3::from_shape_simple_fn((1, 64, 64), || r.sample::<f64, _>(StandardNormal)));
        let bands = fap::dwt2(&grid).unwrap();
        let back = fap::idwt2(&bands).unwrap();
        let rt = (&back.data - &grid.data).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        worst_rt = worst_rt.max(rt);
        worst_energy = worst_energy.max((bands.energy() - grid.energy()).abs());
    }
    let constant = Grid::new(Array3::from_elem((3, 16, 16), 0.7));
    let aug = fap::augment(&constant, 1, 0.5).unwrap();
    let fixed = aug.zeros == constant;

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/haar_golden_8x8.bin");
    let shipped = golden::read_golden(&path).map_err(|e| format!("golden file: {e}"))?;
    let fresh = golden::Golden::compute(&fap::golden_grid()).unwrap();
    let vs_impl = golden::max_abs_diff(&shipped, &fresh).unwrap_or(f64::INFINITY);
    let grid2 = shipped.grid.data.index_axis(ndarray::Axis(0), 0).to_owned();
    let oracle = haar_oracle(&grid2);
    let bands = [&shipped.bands.ll, &shipped.bands.lh, &shipped.bands.hl, &shipped.bands.hh];
    let vs_oracle = bands
        .iter()
        .zip(&oracle)
        .map(|(b, o)| (&b.index_axis(ndarray::Axis(0), 0) - o).mapv(f64::abs).fold(0.0f64, |a, &v| a.max(v)))
        .fold(0.0f64, f64::max);
    ensure(
        worst_rt <= 1e-9 && worst_energy <= 1e-9 && fixed && vs_impl <= 1e-9 && vs_oracle <= 1e-9,
        format!(
            "round trip {worst_rt:.1e}, energy {worst_energy:.1e}, constant fixed point {fixed}, golden vs implementation {vs_impl:.1e}, golden vs oracle {vs_oracle:.1e}"
        ),
    )
}

/// Per-stage class means and the accuracy matrix for a 12-class/4-task stream.
fn forgetting_run(separation: f64) -> Result<(Vec<Vec<Array1<f64>>>, pipeline::AccuracyMatrix), String> {
    let spec = SynthSpec {
        separation,
        seed: 3,
        ..SynthSpec::default()
    };
    let streams = synth::gen_synthetic_sfcdcl(&spec).unwrap();
    let config = RunConfig {
        rff: RffParams::new(1000, 3.0).with_seed(1),
        ..RunConfig::default()
    };
    let mut eval = pipeline::Evaluator::new(&streams.source_test);
    let mut means: Vec<Vec<Array1<f64>>> = Vec::new();
    pipeline::pretrain_source_with(&streams.source_train, &config, |_, model, rff| {
        means.push(model.classes().map(|c| c.mean.clone()).collect());
        eval.record(model, rff).map(|_| ())
    })
    .map_err(|e| e.to_string())?;
    Ok((means, eval.finish()))
}

fn zero_forgetting() -> Check {
    // Old means are frozen by construction; whether old-task accuracy is
    // unchanged also depends on the shared covariance, so classes are kept
    // well separated here and the default separation is reported alongside.
    let (means, matrix) = forgetting_run(6.0)?;
    let frozen = means.windows(2).all(|w| w[1][..w[0].len()] == w[0][..]);
    let mut stable = true;
    for k in 0..matrix.num_tasks() {
        for j in 0..=k {
            stable &= matrix.get(k, j) == matrix.get(j, j);
        }
    }
    let bwt = matrix.backward_transfer().unwrap();
    let (_, default_matrix) = forgetting_run(SynthSpec::default().separation)?;
    let default_bwt = default_matrix.backward_transfer().unwrap();
    ensure(
        frozen && stable && bwt == 0.0,
        format!(
            "separation 6: old means bit-identical {frozen}, a[k][j] = a[j][j] {stable}, BWT {bwt}; default separation BWT {default_bwt:.4}"
        ),
    )
}

fn adaptation_gain() -> Check {
    let mut gains = Vec::new();
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let spec = SynthSpec {
            num_classes: 12,
            num_tasks: 3,
            train_per_class: 150,
            test_per_class: 100,
            dim: 8,
            separation: 3.0,
            spread: 1.0,
            shift: Shift {
                rotation_deg: 30.0,
                scale: 1.0,
                translation: 1.0,
                noise: 0.1,
            },
            seed,
        };
        let s = synth::gen_synthetic_sfcdcl(&spec).unwrap();
        let config = RunConfig {
            rff: RffParams::new(1000, 3.0).with_seed(seed),
            ..RunConfig::default()
        };
        let trained = pipeline::pretrain_source(&s.source_train, &config).map_err(|e| e.to_string())?;
        let oracle = synth::oracle_scores(&s.target_train, &s.target_train_labels, 0.85, 0.7, 100 + seed).unwrap();
        let (target, _) = pipeline::adapt_target(&s.target_train, &trained.model, &trained.rff, &oracle, &config)
            .map_err(|e| e.to_string())?;
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let before = mean(pipeline::final_accuracies(&trained.model, &trained.rff, &s.target_test).unwrap());
        let after = mean(pipeline::final_accuracies(&target, &trained.rff, &s.target_test).unwrap());
        gains.push(100.0 * (after - before));
        detail.push(format!("{:.1}->{:.1}", 100.0 * before, 100.0 * after));
    }
    let gain = gains.iter().sum::<f64>() / gains.len() as f64;
    ensure(
        gain >= 5.0,
        format!("mean gain {gain:.2} points (>= 5) over 5 seeds [{}]", detail.join(", ")),
    )
}

fn linear_scaling() -> Check {
    let d = 8;
    let classes: Vec<ClassId> = (0..4).collect();
    let mut r = rng::stream(7, 0);
    let source_x = Array2::from_shape_fn((400, d), |(i, j)| {
        r.sample::<f64, _>(StandardNormal) + if j == i % 4 { 4.0 } else { 0.0 }
    });
    let source_y: Vec<ClassId> = (0..400).map(|i| (i % 4) as ClassId).collect();
    let source = TaskSpec::new(0, classes.clone(), Domain::Source, Samples::Embeddings(source_x), Some(source_y)).unwrap();
    let config = RunConfig {
        rff: RffParams::new(2000, 3.0).with_seed(2),
        ..RunConfig::default()
    };
    let trained = pipeline::pretrain_source(std::slice::from_ref(&source), &config).map_err(|e| e.to_string())?;
    let n = 4000;
    let target = |rows: usize| {
        let mut r = rng::stream(8, rows as u64);
        let x = Array2::from_shape_fn((rows, d), |(i, j)| {
            r.sample::<f64, _>(StandardNormal) + if j == i % 4 { 4.0 } else { 0.0 }
        });
        TaskSpec::new(0, classes.clone(), Domain::Target, Samples::Embeddings(x), None).unwrap()
    };
    let (small, large) = (target(n), target(2 * n));
    let time = |task: &TaskSpec| {
        let start = Instant::now();
        pipeline::adapt_target(
            std::slice::from_ref(task),
            &trained.model,
            &trained.rff,
            &pipeline::UniformZeroShot,
            &config,
        )
        .unwrap();
        start.elapsed().as_secs_f64()
    };
    time(&small);
    let mut ratios = Vec::new();
    for _ in 0..3 {
        let a = time(&small);
        let b = time(&large);
        ratios.push(b / a);
    }
    let ratio = ratios.iter().sum::<f64>() / 3.0;
    ensure(
        (1.6..=2.6).contains(&ratio),
        format!(
            "N={n} vs {} at D=2000: ratio {ratio:.2} in [1.6, 2.6] (runs {})",
            2 * n,
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn sfcdcl(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sfcdcl"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn source_free_cli() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let out = sfcdcl(&["gen-synth", "--out-dir", ".", "--classes", "6", "--tasks", "2", "--train-per-class", "30"], root);
    if !out.status.success() {
        return Err(format!("gen-synth failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    std::fs::write(root.join("run.cfg"), "d_rff = 200\nsigma = 3\n").unwrap();
    let out = sfcdcl(
        &["pretrain-source", "--config", "run.cfg", "--source", "source_train_0.emb1", "--source", "source_train_1.emb1", "--out", "src.klda"],
        root,
    );
    if !out.status.success() {
        return Err(format!("pretrain-source failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let base = ["adapt-target", "--config", "run.cfg", "--source-model", "src.klda", "--out", "tgt.klda"];
    let with = |extra: &[&str]| {
        let mut v: Vec<&str> = base.to_vec();
        v.extend_from_slice(extra);
        sfcdcl(&v, root)
    };
    let protocol = |o: &std::process::Output| o.status.code() == Some(1) && String::from_utf8_lossy(&o.stderr).contains("protocol error");

    let as_target = with(&["--target", "source_train_0.emb1", "--classes", "0,1,2"]);
    let extra_flag = with(&["--target", "target_train_0.emb1", "--classes", "0,1,2", "--source", "source_train_0.emb1"]);
    let labeled = with(&["--target", "target_test_0.emb1", "--classes", "0,1,2"]);
    let ok = with(&[
        "--target", "target_train_0.emb1", "--classes", "0,1,2", "--scores", "target_scores_0.emb1",
        "--target", "target_train_1.emb1", "--classes", "3,4,5", "--scores", "target_scores_1.emb1",
        "--report", "report.json",
    ]);
    if !ok.status.success() {
        return Err(format!("valid adapt-target failed: {}", String::from_utf8_lossy(&ok.stderr)));
    }
    let report = RunReport::from_json(&std::fs::read_to_string(root.join("report.json")).unwrap()).map_err(|e| e.to_string())?;
    let audit_clean = !report.inputs.is_empty()
        && report.inputs.iter().all(|p| PathBuf::from(p).file_name().unwrap().to_string_lossy().starts_with("target_"));
    ensure(
        protocol(&as_target) && protocol(&extra_flag) && protocol(&labeled) && audit_clean,
        format!(
            "source file as target -> {:?}, --source path -> {:?}, labeled target -> {:?}; audit {:?}",
            as_target.status.code(),
            extra_flag.status.code(),
            labeled.status.code(),
            report.inputs
        ),
    )
}

fn main() {
    let checks: [(&str, fn() -> Check); 10] = [
        ("rff fidelity", rff_fidelity),
        ("streaming = batch", streaming_equals_batch),
        ("unit-weight consistency", unit_weight_consistency),
        ("kernel benefit", kernel_benefit),
        ("entropy weighting endpoints", entropy_endpoints),
        ("wavelet conformance", wavelet_conformance),
        ("zero forgetting", zero_forgetting),
        ("end-to-end adaptation gain", adaptation_gain),
        ("linear scaling", linear_scaling),
        ("source-free enforcement", source_free_cli),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> = checks
        .into_iter()
        .filter(|(name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())))
        .collect();
    let mut failed = 0;
    for &(name, check) in &selected {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", selected.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
