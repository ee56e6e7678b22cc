//! Acceptance suite. Runs every criterion in order, prints one
//! `[PASS]`/`[FAIL]` line each, and fails at the end if any criterion did.
//!
//! Run with `cargo test -p gradstyle --test acceptance -- --nocapture` to
//! see the report. The whole suite takes several minutes; the identity
//! training run dominates.

mod common;

use std::time::{Duration, Instant};

use common::{gradient_suite, rng, uniform};
use gradstyle::gradient::{diff_h, diff_h_adjoint, diff_v, diff_v_adjoint, forward_gradients};
use gradstyle::reconstruct::{color_residual, dense_oracle_solve, gradient_residual, solve};
use gradstyle::synthetic::{synthetic_image, translating_frames};
use gradstyle::train::LossRecord;
use gradstyle::video::{interframe_mse, stylize_sequence, FrameSequence};
use gradstyle::{
    stylize, PairDataset, ReconstructionProblem, StyleNet, StylizeOptions, Tensor, TrainConfig, Trainer,
    VggTrunk,
};
use rand::Rng;

/// Reported for context only: the original implementation's per-image time
/// at 512×512 on a GPU.
const REFERENCE_SECONDS_512: f64 = 0.05;

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, id: usize, name: &str, pass: bool, detail: String, took: Duration) {
        let line = format!(
            "[{}] C{id} {name}: {detail} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn gradient_correctness(report: &mut Report, trunk: &VggTrunk<f64>) {
    let start = Instant::now();
    let checks = gradient_suite(trunk);
    let took = start.elapsed();
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{} {:.2e} >= {:.0e}", c.name, c.worst, c.tol))
        .collect();
    let worst = checks
        .iter()
        .map(|c| format!("{} {:.1e}", c.name, c.worst))
        .collect::<Vec<_>>()
        .join(", ");
    let redrawn: usize = checks.iter().map(|c| c.redrawn).sum();
    let pass = failed.is_empty() && took < Duration::from_secs(60);
    let detail = if failed.is_empty() {
        format!(
            "{} checks x {} instances; worst rel. err.: {worst}; {redrawn} kink-crossing draws replaced",
            checks.len(),
            checks[0].instances
        )
    } else {
        format!("failed: {}", failed.join("; "))
    };
    report.record(1, "gradient correctness", pass, detail, took);
}

fn adjointness(report: &mut Report) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let mut g = rng(2000 + i);
        let (h, w) = (g.gen_range(1..24), g.gen_range(1..24));
        let u: Vec<f32> = (0..h * w).map(|_| g.gen_range(-1.0..1.0)).collect();
        let v: Vec<f32> = (0..h * w).map(|_| g.gen_range(-1.0..1.0)).collect();
        let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>();
        type Op = fn(&[f32], usize, usize, &mut [f32]);
        for (fwd, adj) in [(diff_h as Op, diff_h_adjoint as Op), (diff_v as Op, diff_v_adjoint as Op)] {
            let (mut du, mut dtv) = (vec![0.0; h * w], vec![0.0; h * w]);
            fwd(&u, h, w, &mut du);
            adj(&v, h, w, &mut dtv);
            let (a, b) = (dot(&du, &v), dot(&u, &dtv));
            let scale = a.abs().max(b.abs());
            if scale > 0.0 {
                worst = worst.max((a - b).abs() / scale);
            }
        }
    }
    let pass = worst < 1e-5;
    report.record(
        2,
        "operator adjointness",
        pass,
        format!("20 random pairs (f32) for Dx and Dy; worst rel. err. {worst:.2e} (< 1e-5)"),
        start.elapsed(),
    );
}

fn random_problem(seed: u64, h: usize, w: usize, lambda: f64) -> ReconstructionProblem<f64> {
    let mut g = rng(seed);
    let image = uniform(&mut g, [1, 3, h, w], 0.0, 1.0);
    let sx = uniform(&mut g, [1, 3, h, w], -0.5, 0.5);
    let sy = uniform(&mut g, [1, 3, h, w], -0.5, 0.5);
    ReconstructionProblem::new(image, sx, sy, lambda).unwrap()
}

fn reconstruction_oracle(report: &mut Report) {
    let start = Instant::now();
    let lambdas = [0.0, 1.0, 10.0, 100.0];
    let (mut cg_vs_dense, mut consistent): (f64, f64) = (0.0, 0.0);
    let mut lambda0_exact = true;
    for i in 0..30u64 {
        for &lambda in &lambdas {
            let p = random_problem(3000 + i, 8, 8, lambda);
            let cg = solve(&p).unwrap().image;
            let dense = dense_oracle_solve(&p).unwrap();
            cg_vs_dense = cg_vs_dense.max(cg.max_abs_diff(&dense).unwrap());
            if lambda == 0.0 {
                lambda0_exact &= cg == p.image;
            }
            let field = forward_gradients(&p.image).unwrap();
            let q = ReconstructionProblem::from_field(p.image.clone(), &field, lambda).unwrap();
            consistent = consistent.max(solve(&q).unwrap().image.max_abs_diff(&p.image).unwrap());
        }
    }
    let pass = cg_vs_dense <= 1e-5 && lambda0_exact && consistent <= 1e-6;
    report.record(
        3,
        "reconstruction oracle equivalence",
        pass,
        format!(
            "30 problems x lambda {{0,1,10,100}} at 8x8: CG vs dense max diff {cg_vs_dense:.1e} (<= 1e-5); \
             lambda=0 returns input exactly: {lambda0_exact}; consistent targets max diff {consistent:.1e} (<= 1e-6)"
        ),
        start.elapsed(),
    );
}

fn lambda_monotonicity(report: &mut Report) {
    const SLACK: f64 = 1e-7;
    let start = Instant::now();
    let mut violations = 0;
    let mut checked = 0;
    for i in 0..10u64 {
        let residuals: Vec<(f64, f64)> = [1.0, 10.0, 100.0]
            .iter()
            .map(|&lambda| {
                let p = random_problem(4000 + i, 16, 12, lambda);
                let s = solve(&p).unwrap().image;
                (gradient_residual(&p, &s).unwrap(), color_residual(&p, &s).unwrap())
            })
            .collect();
        for w in residuals.windows(2) {
            let ((g0, c0), (g1, c1)) = (w[0], w[1]);
            checked += 1;
            if g1 > g0 + SLACK * g0.max(1.0) || c1 < c0 - SLACK * c0.max(1.0) {
                violations += 1;
            }
        }
    }
    report.record(
        4,
        "lambda monotonicity",
        violations == 0,
        format!("10 problems, lambda 1 -> 10 -> 100: {violations} violations in {checked} steps (slack 1e-7)"),
        start.elapsed(),
    );
}

fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    -10.0 * a.mse(b).unwrap().log10()
}

fn identity_training(report: &mut Report) -> StyleNet<f32> {
    let start = Instant::now();
    let images: Vec<Tensor<f32>> = (0..16).map(|i| synthetic_image(i, 128, 128)).collect();
    let ds = PairDataset::identity(images).unwrap();
    // Single stage at 1e-3: the best of 1e-4 .. 3e-3 on this task.
    let cfg = TrainConfig::parse("iterations = 2000\nbeta = 0\nseed = 1\nlr_stage1 = 1e-3\n").unwrap();
    assert_eq!((cfg.patch_size, cfg.batch_size), (64, 10));
    let mut trainer = Trainer::new(cfg, StyleNet::build(1), None).unwrap();
    trainer.run(&ds, |_| {}).unwrap();
    let hist = trainer.history();
    let initial = hist[0].pixel;
    let last: Vec<f64> = hist[hist.len() - 100..].iter().map(|r| r.pixel).collect();
    let smoothed = last.iter().sum::<f64>() / last.len() as f64;
    let net = trainer.net().clone();

    let held_out: Tensor<f32> = synthetic_image(1000, 128, 128);
    let out = stylize(&net, &held_out, &StylizeOptions::default()).unwrap();
    let quality = psnr(&out.image, &held_out);
    let took = start.elapsed();
    let ratio = smoothed / initial;
    let pass = ratio <= 0.1 && quality >= 30.0 && took < Duration::from_secs(15 * 60);
    report.record(
        5,
        "identity-training convergence",
        pass,
        format!(
            "16 images 128x128, 2000 its, batch 10, patch 64, beta 0, lr 1e-3: pixel loss {initial:.3e} -> {smoothed:.3e} \
             (last-100 mean, {:.1}% of iteration 1, <= 10%); held-out PSNR {quality:.2} dB at lambda 10 (>= 30); \
             runtime < 15 min",
            100.0 * ratio
        ),
        took,
    );
    net
}

fn block_means(hist: &[LossRecord], block: usize) -> Vec<f64> {
    hist.chunks(block)
        .map(|c| c.iter().map(|r| r.total).sum::<f64>() / c.len() as f64)
        .collect()
}

fn full_loss_overfit(report: &mut Report, trunk: &VggTrunk<f32>) {
    let start = Instant::now();
    let images: Vec<(Tensor<f32>, Tensor<f32>)> = (0..4)
        .map(|i| {
            let img: Tensor<f32> = synthetic_image(200 + i, 64, 64);
            let styled = gradstyle::styles::StyleOp::Smooth.apply(&img).unwrap();
            (img, styled)
        })
        .collect();
    let ds = PairDataset::from_pairs(images).unwrap();
    let cfg = TrainConfig::parse(
        "iterations = 1000\nalpha = 10000\nbeta = 10\npatch_size = 32\nbatch_size = 2\nfixed_batch = true\nseed = 3\n",
    )
    .unwrap();
    let mut trainer = Trainer::new(cfg, StyleNet::build(3), Some(trunk.clone())).unwrap();
    trainer.run(&ds, |_| {}).unwrap();
    let hist = trainer.history();
    let blocks = block_means(hist, 100);
    let strictly = blocks.windows(2).all(|w| w[1] < w[0]);
    // Trailing 100-iteration means, compared 500 iterations apart.
    let trailing: Vec<f64> = (100..=hist.len())
        .map(|end| hist[end - 100..end].iter().map(|r| r.total).sum::<f64>() / 100.0)
        .collect();
    let windows_ok = trailing.iter().zip(&trailing[500..]).all(|(a, b)| b < a);
    let shown: Vec<String> = blocks.iter().map(|b| format!("{b:.3e}")).collect();
    report.record(
        6,
        "full-loss training sanity",
        strictly && windows_ok,
        format!(
            "alpha 10000, beta 10, fixed batch (2 x 32x32), 1000 its: 100-it block means [{}] strictly decreasing: \
             {strictly}; every 500-it window decreases: {windows_ok}",
            shown.join(", ")
        ),
        start.elapsed(),
    );
}

fn consistency(report: &mut Report, net: &StyleNet<f32>) {
    let start = Instant::now();
    let (size, margin) = (96, 16);
    let opts = StylizeOptions::default();
    let frames = FrameSequence::new(translating_frames::<f32>(300, 60, size, size, 4)).unwrap();
    let styled = stylize_sequence(net, &frames, &opts).unwrap();
    let inner = size - 2 * margin;
    let mse_in = interframe_mse(&frames.crop(margin, margin, inner, inner).unwrap()).unwrap();
    let mse_out = interframe_mse(&styled.crop(margin, margin, inner, inner).unwrap()).unwrap();
    let worst = mse_in
        .iter()
        .zip(&mse_out)
        .map(|(i, o)| o / i)
        .fold(0.0f64, f64::max);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let still = FrameSequence::new(vec![frames.frames()[0].clone(); 5]).unwrap();
    let still_mse = interframe_mse(&stylize_sequence(net, &still, &opts).unwrap()).unwrap();
    let still_zero = still_mse.iter().all(|&m| m == 0.0);
    report.record(
        7,
        "translation consistency",
        worst <= 2.0 && still_zero,
        format!(
            "60 frames {size}x{size} moving 4 px/frame, interior {inner}x{inner}: mean inter-frame MSE input {:.3e}, \
             stylized {:.3e}; worst per-pair ratio {worst:.3} (<= 2); identical frames give exactly 0: {still_zero}",
            mean(&mse_in),
            mean(&mse_out)
        ),
        start.elapsed(),
    );
}

fn throughput(report: &mut Report, net: &StyleNet<f32>) {
    let start = Instant::now();
    let img: Tensor<f32> = synthetic_image(400, 512, 512);
    let mut runs: Vec<(f64, f64, f64)> = pool(1).install(|| {
        (0..3)
            .map(|_| {
                let t = stylize(net, &img, &StylizeOptions::default()).unwrap().timing;
                (t.total.as_secs_f64(), t.network.as_secs_f64(), t.reconstruction.as_secs_f64())
            })
            .collect()
    });
    runs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (total, network, recon) = runs[1];
    report.record(
        8,
        "throughput",
        total < 2.0,
        format!(
            "512x512 single-threaded, median of 3: {total:.3}s (network {network:.3}s, reconstruction {recon:.3}s; \
             < 2 s); reference implementation reported {REFERENCE_SECONDS_512}s on different hardware"
        ),
        start.elapsed(),
    );
}

fn determinism(report: &mut Report, trunk: &VggTrunk<f32>) {
    let start = Instant::now();
    let ds = PairDataset::from_pairs(
        (0..3)
            .map(|i| {
                let img: Tensor<f32> = synthetic_image(500 + i, 48, 48);
                let styled = gradstyle::styles::StyleOp::Posterize(4).apply(&img).unwrap();
                (img, styled)
            })
            .collect(),
    )
    .unwrap();
    let cfg = TrainConfig::parse("iterations = 20\npatch_size = 32\nbatch_size = 3\nseed = 9\n").unwrap();
    let test_img: Tensor<f32> = synthetic_image(501, 40, 44);
    let run = |threads: usize| {
        pool(threads).install(|| {
            let mut t = Trainer::new(cfg.clone(), StyleNet::build(cfg.seed), Some(trunk.clone())).unwrap();
            t.run(&ds, |_| {}).unwrap();
            let out = stylize(t.net(), &test_img, &StylizeOptions::default()).unwrap().image;
            (t.history().to_vec(), out)
        })
    };
    let (h1, o1) = run(1);
    let (h2, o2) = run(3);
    let same_history = h1.len() == h2.len()
        && h1.iter().zip(&h2).all(|(a, b)| {
            a.total.to_bits() == b.total.to_bits()
                && a.pixel.to_bits() == b.pixel.to_bits()
                && a.feat.to_bits() == b.feat.to_bits()
        });
    let same_image = o1.data().iter().zip(o2.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        && gradstyle::imageio::to_rgb8(&o1, 0).unwrap() == gradstyle::imageio::to_rgb8(&o2, 0).unwrap();
    report.record(
        9,
        "determinism",
        same_history && same_image,
        format!(
            "seed 9, 20 its with beta 10, run on 1 and 3 threads: loss history bit-identical: {same_history}; \
             output image bit-identical: {same_image}"
        ),
        start.elapsed(),
    );
}

#[test]
fn acceptance() {
    let mut report = Report { lines: Vec::new() };
    // The perceptual loss uses a random frozen trunk, stored and reloaded
    // through the weight-file format like a pretrained one would be.
    let dir = tempfile::tempdir().unwrap();
    let trunk_path = dir.path().join("vgg_random.gstw");
    VggTrunk::<f32>::random(7).save(&trunk_path).unwrap();
    let trunk32 = VggTrunk::<f32>::load(&trunk_path).unwrap();
    let trunk64 = VggTrunk::<f64>::load(&trunk_path).unwrap();

    gradient_correctness(&mut report, &trunk64);
    adjointness(&mut report);
    reconstruction_oracle(&mut report);
    lambda_monotonicity(&mut report);
    let net = identity_training(&mut report);
    full_loss_overfit(&mut report, &trunk32);
    consistency(&mut report, &net);
    throughput(&mut report, &net);
    determinism(&mut report, &trunk32);

    let failed: Vec<&String> = report.lines.iter().filter(|(p, _)| !p).map(|(_, l)| l).collect();
    println!("acceptance: {} of {} criteria passed", report.lines.len() - failed.len(), report.lines.len());
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"));
}
