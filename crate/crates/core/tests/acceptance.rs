//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use msgs_core::gradcheck::{check_gradients, LOSS_IDS};
use msgs_core::math::{sigmoid, sigmoid_grad};
use msgs_core::render::{render, render_backward, Channels, RenderConfig, Upstream};
use msgs_core::scene::{write_scene, ClassHead, Gaussian, Scene};
use msgs_core::semantic::{binary_mask, entropy_of_logits, negative_entropy_loss, MaskThresholds};
use msgs_core::style::{hungarian_assign, AssignmentMap, CostMatrix, StyleEngine, StyleSet, ToyExtractor};
use msgs_core::synthetic;
use msgs_core::train::{reconstruct, stylize, LossReport, TrainConfig};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

fn compositing_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = RenderConfig::default();
    let params = common::RefParams::default();
    let (mut worst, mut exits, mut failures) = (0.0f64, 0, 0);
    for seed in 0..1000u64 {
        let mut rng = synthetic::rng(seed);
        let n = rng.random_range(0..=32);
        let scene = synthetic::random_scene(&mut rng, n, 4, 3);
        let cam = synthetic::front_camera(16, 16);
        let out = render(&scene, &cam, Channels::Both, &cfg);
        let r = common::reference_render(&scene, &cam, &params);
        let err = common::max_abs_diff(&out.color_image().data, &r.color)
            .max(common::max_abs_diff(&out.feature_image().data, &r.feature))
            .max(common::max_abs_diff(&out.alpha.data, &r.alpha));
        exits += out.alpha.data.iter().filter(|&&a| 1.0 - a < cfg.min_transmittance).count();
        failures += usize::from(err >= 1e-6);
        worst = worst.max(err);
    }
    let t = start.elapsed();
    outcome(
        failures == 0 && within(t, 60),
        format!("1000 scenes, max |diff| {worst:.2e}, {failures} over 1e-6, {exits} early-exit pixels, {:.1}s", t.as_secs_f64()),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for id in LOSS_IDS.iter().filter(|id| !matches!(**id, "linear" | "empty")) {
        let mut worst = 0.0f64;
        for seed in 0..20 {
            match check_gradients(id, seed) {
                Ok(r) => worst = worst.max(r.max_rel_error),
                Err(_) => worst = f64::INFINITY,
            }
        }
        pass &= worst < 1e-4;
        parts.push(format!("{id} {worst:.1e}"));
    }
    let t = start.elapsed();
    outcome(pass && within(t, 300), format!("20 seeds each: {}; {:.1}s", parts.join(", "), t.as_secs_f64()))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn hungarian_optimality() -> Outcome {
    let mut rng = synthetic::rng(2024);
    let (mut cost_mismatch, mut invariance_breaks) = (0, 0);
    for case in 0..1000 {
        let n = rng.random_range(1..=6);
        let integer = case % 2 == 0;
        let data: Vec<f64> = (0..n * n)
            .map(|_| if integer { rng.random_range(0..8) as f64 } else { rng.random_range(0.0..1.0) })
            .collect();
        let q = CostMatrix::new(n, n, data).unwrap();
        let a = hungarian_assign(&q);
        let best = permutations(n)
            .into_iter()
            .map(|p| AssignmentMap::new(p, n).unwrap().cost(&q))
            .fold(f64::INFINITY, f64::min);
        cost_mismatch += usize::from(a.cost(&q) != best);
        let (scale, shift) = if integer { (2.5, -3.0) } else { (rng.random_range(0.1..10.0), rng.random_range(-5.0..5.0)) };
        for transformed in [q.map(|v| v * scale), q.map(|v| v + shift), q.map(|v| v * scale + shift)] {
            invariance_breaks += usize::from(hungarian_assign(&transformed) != a);
        }
    }
    outcome(
        cost_mismatch == 0 && invariance_breaks == 0,
        format!("1000 cases C=M<=6: {cost_mismatch} cost mismatches, {invariance_breaks} scale/shift changes"),
    )
}

fn straight_through() -> Outcome {
    let th = MaskThresholds::default();
    let mut bad = Vec::new();
    let probs_sets: [&[f64]; 4] = [&[0.95, 0.05], &[0.5, 0.5], &[0.2, 0.8], &[0.91, 0.09]];
    for i in 0..=200 {
        let m = -12.0 + 0.12 * i as f64;
        for probs in probs_sets {
            let b = binary_mask(m, probs, &th);
            if b.value != 0.0 && b.value != 1.0 {
                bad.push(format!("non-binary at m={m}"));
            }
            let confident = probs.iter().cloned().fold(0.0, f64::max) > th.eps1;
            if confident && b.value != 1.0 {
                bad.push(format!("confident Gaussian removed at m={m}"));
            }
            let s = 1.0 / (1.0 + (-m).exp());
            if (b.grad - s * (1.0 - s)).abs() > 1e-15 {
                bad.push(format!("gradient {} != {} at m={m}", b.grad, s * (1.0 - s)));
            }
        }
    }
    // Through the renderer: one splat at a pixel centre, loss = red channel there.
    // dL/dô = c_red, so dL/dm must be c_red · σ(ℓ) · σ'(m) in every branch.
    let w = vec![5.0, 0.0, -5.0, 0.0];
    let head = ClassHead::new(2, 1, w).unwrap();
    for (m, e) in [(3.0, 1.0), (3.0, 0.0), (-8.0, 1.0), (-8.0, 0.0)] {
        let g = Gaussian {
            position: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.2f64.ln(); 3],
            opacity_logit: 0.4,
            color: [0.7, 0.2, 0.1],
            sem_feature: vec![e],
            mask_logit: m,
        };
        let scene = Scene::new(vec![g], head.clone(), [0.0; 3]).unwrap();
        let cam = synthetic::front_camera(5, 5);
        let cfg = RenderConfig::default();
        let out = render(&scene, &cam, Channels::Color, &cfg);
        let mut up = vec![0.0; 75];
        up[(2 * 5 + 2) * 3] = 1.0;
        let grads = render_backward(&scene, &cfg, &out, Upstream { color: Some(&up), feature: None }).unwrap();
        let want = 0.7 * sigmoid(0.4) * sigmoid_grad(m);
        if (grads.mask_logit[0] - want).abs() > 1e-12 {
            bad.push(format!("render mask gradient {} != {want} (m={m}, e={e})", grads.mask_logit[0]));
        }
    }
    let n = bad.len();
    outcome(n == 0, if n == 0 { "forward binary, semantic rescue holds, dm = σ'(m) in all branches".into() } else { bad.join("; ") })
}

fn entropy_bounds() -> Outcome {
    let mut rng = synthetic::rng(77);
    let mut range_ok = true;
    for _ in 0..2000 {
        let c = rng.random_range(2..=8);
        let z: Vec<f64> = (0..c).map(|_| rng.random_range(-20.0..20.0)).collect();
        let (h, _) = entropy_of_logits(&z);
        range_ok &= (0.0..=(c as f64).ln() + 1e-12).contains(&h);
    }
    let uniform_err = (entropy_of_logits(&[0.3; 4]).0 - 4f64.ln()).abs();
    let mut worst_ratio = 0.0f64;
    for start in 0..50 {
        let c = 2 + start % 5;
        let identity: Vec<f64> =
            (0..c).flat_map(|r| (0..=c).map(move |k| if k == r { 1.0 } else { 0.0 })).collect();
        let head = ClassHead::new(c, c, identity).unwrap();
        let mut z: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..200 {
            let l = negative_entropy_loss(&z, &head).unwrap();
            for (v, g) in z.iter_mut().zip(&l.d_features) {
                *v -= 2.0 * g;
            }
        }
        let h = negative_entropy_loss(&z, &head).unwrap().value;
        worst_ratio = worst_ratio.max(h / (c as f64).ln());
    }
    outcome(
        range_ok && uniform_err < 1e-9 && worst_ratio < 0.1,
        format!("range ok: {range_ok}; uniform error {uniform_err:.1e}; worst final H/ln C over 50 starts {worst_ratio:.4}"),
    )
}

fn memory_analog() -> Outcome {
    let blob = synthetic::blob_scene(5, 200, 4, 2);
    let scene = blob.scene;
    let cam = synthetic::front_camera(32, 32);
    let ex = ToyExtractor::default();
    let styles = StyleSet::from_images(
        &[("stripes".into(), synthetic::stripe_style(32, 32)), ("checker".into(), synthetic::checker_style(32, 32))],
        &ex,
    )
    .unwrap();
    let loss = StyleEngine::default()
        .multi_style_loss(&scene, &cam, &styles, &AssignmentMap::new(vec![0, 1], 2).unwrap())
        .unwrap();
    let mut active = [0usize; 2];
    for c in scene.classes() {
        active[c] += 1;
    }
    let processed: Vec<usize> = loss.terms.iter().map(|t| t.processed).collect();
    let pass = processed == active
        && processed.iter().all(|&p| p < scene.len())
        && processed.iter().sum::<usize>() == scene.len();
    outcome(pass, format!("processed {processed:?}, per-class active {active:?}, total {}", scene.len()))
}

struct DeskRun {
    recon_scene: Vec<u8>,
    recon_csv: String,
    styled_scene: Vec<u8>,
    styled_csv: String,
    summary: String,
    pass: bool,
}

fn scene_bytes(scene: &Scene) -> Vec<u8> {
    let mut buf = Vec::new();
    write_scene(scene, &mut buf).unwrap();
    buf
}

fn window_mean(report: &LossReport, from_end: bool, n: usize) -> f64 {
    let rows = &report.rows;
    let slice = if from_end { &rows[rows.len() - n..] } else { &rows[..n] };
    slice.iter().map(|r| r.style).sum::<f64>() / n as f64
}

fn frozen_fields_equal(a: &Scene, b: &Scene) -> bool {
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    a.len() == b.len()
        && a.class_head == b.class_head
        && a.gaussians.iter().zip(&b.gaussians).all(|(x, y)| {
            bits(&x.position) == bits(&y.position)
                && bits(&x.rotation) == bits(&y.rotation)
                && bits(&x.log_scale) == bits(&y.log_scale)
                && bits(&x.sem_feature) == bits(&y.sem_feature)
                && x.mask_logit.to_bits() == y.mask_logit.to_bits()
        })
}

/// PSNR never drops more than `tol` dB below an earlier value within `window` iterations.
fn psnr_monotone(series: &[(usize, f64)], window: usize, tol: f64) -> bool {
    series.iter().enumerate().all(|(i, &(it, p))| {
        series[..i].iter().filter(|(jt, _)| it - jt <= window).all(|&(_, q)| p >= q - tol)
    })
}

fn desk_run() -> DeskRun {
    let ds = synthetic::desk_dataset(7, 500, 8, 64, 16);
    let cfg = TrainConfig::default();
    let r = reconstruct(&ds.views, ds.init.clone(), &cfg).unwrap();
    let classes = r.scene.classes();
    let recovered = r.kept.iter().enumerate().filter(|&(j, &i)| classes[j] == ds.truth.classes[i]).count();
    let recovery = recovered as f64 / r.kept.len() as f64;
    let finite = r.report.rows.iter().all(|row| row.total.is_finite());
    let monotone = psnr_monotone(&r.report.psnr_series(), 500, 0.2);

    let ex = ToyExtractor::default();
    let styles = StyleSet::from_images(
        &[("stripes".into(), synthetic::stripe_style(64, 64)), ("checker".into(), synthetic::checker_style(64, 64))],
        &ex,
    )
    .unwrap();
    let cams: Vec<_> = ds.views.iter().map(|v| v.camera.clone()).collect();
    let engine = StyleEngine::default();
    let assignment = hungarian_assign(&engine.cost_matrix(&r.scene, &cams, &styles).unwrap());
    let (styled, report) = stylize(&ds.views, r.scene.clone(), &styles, &assignment, &cfg).unwrap();
    let v = ds.views.len();
    let (first, last) = (window_mean(&report, false, v), window_mean(&report, true, v));
    let reduction = 1.0 - last / first;
    let frozen = frozen_fields_equal(&r.scene, &styled);

    let pass = r.final_psnr >= 30.0 && recovery >= 0.95 && reduction >= 0.5 && frozen && finite && monotone;
    let summary = format!(
        "PSNR {:.2} dB, class recovery {:.1}% of {} kept, style loss {first:.4} -> {last:.4} ({:.1}% lower), \
         assignment {:?}, frozen fields identical: {frozen}, finite: {finite}, PSNR windows within 0.2 dB: {monotone}",
        r.final_psnr,
        100.0 * recovery,
        r.kept.len(),
        100.0 * reduction,
        assignment.mapping,
    );
    DeskRun {
        recon_scene: scene_bytes(&r.scene),
        recon_csv: r.report.to_csv(),
        styled_scene: scene_bytes(&styled),
        styled_csv: report.to_csv(),
        summary,
        pass,
    }
}

fn main() {
    let mut all = true;
    let mut report = |name: &str, o: Outcome| {
        all &= o.pass;
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report("compositing oracle", compositing_oracle());
    report("gradient suite", gradient_suite());
    report("Hungarian optimality", hungarian_optimality());
    report("straight-through semantics", straight_through());
    report("entropy bounds", entropy_bounds());
    report("memory-claim analog", memory_analog());

    let start = Instant::now();
    let first = desk_run();
    let t = start.elapsed();
    report(
        "end-to-end desk run",
        outcome(first.pass && within(t, 600), format!("{}; {:.1}s", first.summary, t.as_secs_f64())),
    );
    let second = desk_run();
    let same = [
        first.recon_scene == second.recon_scene,
        first.recon_csv == second.recon_csv,
        first.styled_scene == second.styled_scene,
        first.styled_csv == second.styled_csv,
    ];
    report(
        "determinism",
        outcome(
            same.iter().all(|&s| s),
            format!(
                "rerun identical: recon scene {}, recon report {}, stylized scene {}, stylize report {}",
                same[0], same[1], same[2], same[3]
            ),
        ),
    );
    if !all {
        std::process::exit(1);
    }
}
