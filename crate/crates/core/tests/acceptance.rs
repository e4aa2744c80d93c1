//! End-to-end acceptance checks. Each test prints one `[PASS]`/`[FAIL]`
//! line with its measured numbers (visible with `--nocapture`); the cargo
//! test line of the same name carries the verdict.
//!
//! The ablation check trains 25 models and takes tens of minutes on one
//! core. `SOSD_THREADS` spreads its runs over more workers.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sosd_core::autodiff::gradcheck::{check, GradCheckReport, REL_TOL};
use sosd_core::autodiff::{BnMode, Graph, Padding, RunningStats, Var};
use sosd_core::checkpoint;
use sosd_core::geometry::{depth_from_areas, image_extent, CameraIntrinsics, ObjectExtent, SpacePoint};
use sosd_core::harness::{self, cmd_ablate, cmd_train, ExperimentSpec, RunVariant, TrainRequest};
use sosd_core::metrics::{depth_metrics, disparity_mae, seg_metrics, DepthMetricOptions, DEFAULT_THRESHOLDS};
use sosd_core::model::{
    backbone_forward, build_model, decoder_forward, depth_to_semantic, forward, semantic_to_depth,
    semantic_to_depth_with, FeatureBundle, Forward, Group, Heads, LatentOverride, Mode, Model, NetConfig, PathRequest,
    Variant,
};
use sosd_core::synth::{render_scene, DatasetConfig, PlanarObject, RenderOptions};
use sosd_core::train::{Phase, Schedule, TrainConfig, Trainer};
use sosd_core::{Result, Rng, Tensor};

fn verdict(name: &str, ok: bool, detail: impl std::fmt::Display) {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
}

/// `Σ y·w` with fixed random weights `w`, so every output element counts.
fn probe_loss(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = random(g.shape(y), &mut Rng::new(seed));
    let wv = g.leaf(w, false);
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

const PROBES: usize = 24;

// ---- gradient suite --------------------------------------------------------

fn operator_checks(rng: &mut Rng) -> Vec<(String, GradCheckReport)> {
    let never = |_: usize, _: usize, _: f64| false;
    let mut out = Vec::new();
    let mut run = |name: &str,
                   inputs: &[Tensor],
                   rng: &mut Rng,
                   f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
                   skip: &dyn Fn(usize, usize, f64) -> bool| {
        let r = check(inputs, PROBES, rng, f, skip).unwrap();
        out.push((name.to_string(), r));
    };

    for (stride, dil) in [(1, 1), (1, 2), (2, 1), (1, 3)] {
        let inputs = [random(&[2, 2, 7, 6], rng), random(&[3, 2, 3, 3], rng), random(&[3], rng)];
        run(
            &format!("conv2d s{stride} d{dil}"),
            &inputs,
            rng,
            &|g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, dil, Padding::Same)?;
                probe_loss(g, y, 1)
            },
            &never,
        );
    }
    let inputs = [random(&[1, 3, 5, 5], rng), random(&[2, 3, 1, 1], rng)];
    run(
        "conv2d 1x1 valid",
        &inputs,
        rng,
        &|g, v| {
            let y = g.conv2d(v[0], v[1], None, 1, 1, Padding::Valid)?;
            probe_loss(g, y, 2)
        },
        &never,
    );

    let bn_inputs = [random(&[2, 3, 4, 4], rng), random(&[3], rng), random(&[3], rng)];
    run(
        "batch_norm train",
        &bn_inputs,
        rng,
        &|g, v| {
            let y = g.batch_norm(v[0], v[1], v[2], BnMode::Train { momentum: 0.9, running: None }, 1e-5)?;
            probe_loss(g, y, 3)
        },
        &never,
    );
    let stats = RunningStats { mean: vec![0.1, -0.2, 0.3], var: vec![0.5, 1.5, 2.0] };
    run(
        "batch_norm eval",
        &bn_inputs,
        rng,
        &|g, v| {
            let y = g.batch_norm(v[0], v[1], v[2], BnMode::Eval(&stats), 1e-5)?;
            probe_loss(g, y, 4)
        },
        &never,
    );

    let a = random(&[2, 2, 3, 3], rng);
    let b = random(&[2, 2, 3, 3], rng);
    let c = random(&[2, 1, 3, 3], rng);
    run(
        "relu",
        &[a.clone()],
        rng,
        &|g, v| {
            let y = g.relu(v[0]);
            probe_loss(g, y, 5)
        },
        &|_, _, x| x.abs() < 1e-3,
    );
    run(
        "mul",
        &[a.clone(), b.clone()],
        rng,
        &|g, v| {
            let y = g.mul(v[0], v[1])?;
            probe_loss(g, y, 6)
        },
        &never,
    );
    run(
        "add",
        &[a.clone(), b.clone()],
        rng,
        &|g, v| {
            let y = g.add(v[0], v[1])?;
            probe_loss(g, y, 7)
        },
        &never,
    );
    run(
        "scale and add_scalar",
        &[a.clone()],
        rng,
        &|g, v| {
            let s = g.scale(v[0], -1.5);
            let y = g.add_scalar(s, 0.25);
            probe_loss(g, y, 8)
        },
        &never,
    );
    run(
        "grad_scale (unit factor)",
        &[a.clone()],
        rng,
        &|g, v| {
            let y = g.grad_scale(v[0], 1.0);
            probe_loss(g, y, 9)
        },
        &never,
    );
    run(
        "concat_channels",
        &[a.clone(), c.clone()],
        rng,
        &|g, v| {
            let y = g.concat_channels(&[v[0], v[1]])?;
            probe_loss(g, y, 10)
        },
        &never,
    );
    run(
        "global_avg_pool + broadcast_spatial",
        &[a.clone()],
        rng,
        &|g, v| {
            let p = g.global_avg_pool(v[0])?;
            let y = g.broadcast_spatial(p, 3, 4)?;
            probe_loss(g, y, 11)
        },
        &never,
    );
    let pos = a.map(|x| x.abs() + 0.1);
    run(
        "safe_sqrt",
        &[pos],
        rng,
        &|g, v| {
            let y = g.safe_sqrt(v[0], 1e-6);
            probe_loss(g, y, 12)
        },
        &never,
    );
    run(
        "bilinear_upsample x4",
        &[random(&[2, 2, 3, 4], rng)],
        rng,
        &|g, v| {
            let y = g.bilinear_upsample(v[0], 4)?;
            probe_loss(g, y, 13)
        },
        &never,
    );
    run(
        "sum and mean",
        &[a.clone()],
        rng,
        &|g, v| {
            let sq = g.mul(v[0], v[0])?;
            let s = g.sum(sq);
            let m = g.mean(v[0]);
            let m3 = g.scale(m, 3.0);
            g.add(s, m3)
        },
        &never,
    );
    let logits = random(&[2, 3, 2, 3], rng);
    let labels: Vec<usize> = (0..12).map(|i| if i == 5 { 255 } else { i % 3 }).collect();
    run("cross_entropy", &[logits], rng, &|g, v| Ok(g.cross_entropy(v[0], &labels, Some(255))?.0), &never);
    let pred = random(&[2, 1, 3, 3], rng);
    let target: Vec<f64> =
        pred.data().iter().enumerate().map(|(i, x)| x + if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
    let mask: Vec<bool> = (0..18).map(|i| i % 5 != 0).collect();
    run("masked_l1", &[pred], rng, &|g, v| Ok(g.masked_l1(v[0], &target, &mask)?.0), &never);
    out
}

fn probe_net(h: usize, w: usize) -> Model {
    let cfg: NetConfig = serde_json::from_value(serde_json::json!({
        "height": h, "width": w, "num_classes": 3, "variant": "sosd", "base_channels": 4, "init_std": 0.3,
    }))
    .unwrap();
    build_model(&cfg, &mut Rng::new(21)).unwrap()
}

fn param_tensors(model: &Model) -> Vec<Tensor> {
    model.store.params.iter().map(|p| p.tensor.clone()).collect()
}

/// Gradient check of one fusion unit with respect to its three input
/// features and its own parameters.
fn fusion_check(model: &Model, semantic_side: bool, rng: &mut Rng) -> GradCheckReport {
    let image = random(&[2, 3, 8, 16], rng).map(|x| 0.5 + 0.2 * x);
    let mut fw = Forward::new(model, Mode::Train);
    let x = fw.input(image).unwrap();
    let bb = backbone_forward(&mut fw, x).unwrap();
    let bundle = decoder_forward(&mut fw, bb, PathRequest::ALL).unwrap();
    let feats: Vec<Tensor> =
        [bundle.semantic, bundle.common, bundle.depth].iter().map(|v| fw.graph.value(v.unwrap()).clone()).collect();
    let mut inputs = feats;
    inputs.extend(param_tensors(model));
    let prefix = if semantic_side { "d2s/" } else { "s2d/" };
    let own: Vec<bool> = model.store.params.iter().map(|p| p.name.starts_with(prefix)).collect();
    check(
        &inputs,
        2 * PROBES,
        rng,
        |g, v| {
            let graph = std::mem::replace(g, Graph::new());
            let mut fw = Forward::attach(model, graph, &v[3..], Mode::Train)?;
            let bundle = FeatureBundle { semantic: Some(v[0]), common: Some(v[1]), depth: Some(v[2]) };
            let out = if semantic_side {
                depth_to_semantic(&mut fw, &bundle)?.0
            } else {
                semantic_to_depth(&mut fw, &bundle)?.0
            };
            let loss = probe_loss(&mut fw.graph, out, 30)?;
            *g = fw.into_graph();
            Ok(loss)
        },
        |input, _, _| input >= 3 && !own[input - 3],
    )
    .unwrap()
}

fn end_to_end_check(model: &Model, rng: &mut Rng) -> GradCheckReport {
    let image = random(&[2, 3, 8, 16], rng).map(|x| 0.5 + 0.2 * x);
    let labels: Vec<usize> = (0..2 * 8 * 16).map(|_| rng.below(3)).collect();
    let target: Vec<f64> = (0..2 * 8 * 16).map(|_| rng.uniform_range(2.0, 30.0)).collect();
    let mask: Vec<bool> = (0..2 * 8 * 16).map(|_| rng.bernoulli(0.9)).collect();
    let mut inputs = vec![image];
    inputs.extend(param_tensors(model));
    check(
        &inputs,
        3 * PROBES,
        rng,
        |g, v| {
            let graph = std::mem::replace(g, Graph::new());
            let mut fw = Forward::attach(model, graph, &v[1..], Mode::Train)?;
            let out = forward(&mut fw, v[0], Heads::BOTH)?;
            let (ce, _) = fw.graph.cross_entropy(out.logits.unwrap(), &labels, None)?;
            let (l1, _) = fw.graph.masked_l1(out.depth.unwrap(), &target, &mask)?;
            let loss = fw.graph.add(ce, l1)?;
            *g = fw.into_graph();
            Ok(loss)
        },
        |_, _, _| false,
    )
    .unwrap()
}

#[test]
fn gradient_suite() {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    let mut checks = operator_checks(&mut rng);
    let model = probe_net(8, 16);
    checks.push(("semantic-to-depth unit".into(), fusion_check(&model, false, &mut rng)));
    checks.push(("depth-to-semantic unit".into(), fusion_check(&model, true, &mut rng)));
    checks.push(("end-to-end model 8x16".into(), end_to_end_check(&model, &mut rng)));

    // A non-unit gradient scale must scale the analytic gradient exactly.
    let x = random(&[2, 3], &mut rng);
    let grad_of = |factor: f64| {
        let mut g = Graph::new();
        let v = g.leaf(x.clone(), true);
        let y = g.grad_scale(v, factor);
        let l = probe_loss(&mut g, y, 40).unwrap();
        g.backward(l).unwrap();
        g.grad(v).unwrap().to_vec()
    };
    let (unit, scaled) = (grad_of(1.0), grad_of(0.25));
    let scale_ok = unit.iter().zip(&scaled).all(|(u, s)| (0.25 * u - s).abs() <= 1e-15 * u.abs().max(1.0));

    let mut ok = scale_ok;
    for (name, r) in &checks {
        let good = r.passed() && r.probes.len() >= 20;
        ok &= good;
        println!(
            "    {name:<40} probes {:>3}  max rel {:.2e}{}",
            r.probes.len(),
            r.max_rel_error(),
            if good { "" } else { "  <-- FAIL" }
        );
    }
    let secs = start.elapsed().as_secs_f64();
    let worst = checks.iter().map(|(_, r)| r.max_rel_error()).fold(0.0, f64::max);
    verdict(
        "gradient suite",
        ok && secs < 120.0,
        format!(
            "{} checks, worst rel error {worst:.2e} (< {REL_TOL:e}), grad_scale exact: {scale_ok}, {secs:.1}s",
            checks.len()
        ),
    );
}

// ---- geometry --------------------------------------------------------------

#[test]
fn geometry_round_trip() {
    let start = Instant::now();
    let mut rng = Rng::new(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = CameraIntrinsics::new(
            rng.uniform_range(50.0, 2000.0),
            rng.uniform_range(50.0, 2000.0),
            64.0,
            32.0,
            128,
            64,
        )
        .unwrap();
        let e = ObjectExtent { dx: rng.uniform_range(0.1, 10.0), dy: rng.uniform_range(0.1, 10.0) };
        let d = rng.uniform_range(0.5, 100.0);
        let i = image_extent(e, d, &k).unwrap();
        let back = depth_from_areas(e, i, &k).unwrap();
        worst = worst.max((back - d).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "geometry round trip",
        worst < 1e-9 && secs < 1.0,
        format!("1000 objects, max |Δd| {worst:.2e}, {secs:.3}s"),
    );
}

// ---- fusion probe ----------------------------------------------------------

#[test]
fn fusion_probe_recovers_object_depth() {
    let (h, w) = (64, 128);
    let ds = DatasetConfig::default();
    let k = ds.intrinsics();
    let objects = [
        PlanarObject {
            center: SpacePoint { x: -3.0, y: 0.2, d: 6.0 },
            extent: ObjectExtent { dx: 1.8, dy: 1.5 },
            class_id: 1,
            albedo: [0.8, 0.1, 0.1],
        },
        PlanarObject {
            center: SpacePoint { x: 1.0, y: -0.3, d: 9.5 },
            extent: ObjectExtent { dx: 2.5, dy: 3.0 },
            class_id: 2,
            albedo: [0.1, 0.8, 0.1],
        },
        PlanarObject {
            center: SpacePoint { x: 5.0, y: 0.5, d: 13.25 },
            extent: ObjectExtent { dx: 4.0, dy: 2.0 },
            class_id: 3,
            albedo: [0.1, 0.1, 0.8],
        },
    ];
    let opts = RenderOptions { hole_rate: 0.0, ..RenderOptions::new(h, w) };
    let scene = render_scene(&objects, &k, &opts, &mut Rng::new(3)).unwrap();

    let s = NetConfig::INTERNAL_STRIDE;
    let (fh, fw_) = (h / s, w / s);
    let mut area3d = vec![1.0; fh * fw_];
    let mut inv_area2d = vec![1.0; fh * fw_];
    let mut interior = Vec::new();
    for fy in 0..fh {
        for fx in 0..fw_ {
            let block: Vec<usize> = (0..s * s).map(|i| (fy * s + i / s) * w + fx * s + i % s).collect();
            let d0 = scene.depth.data()[block[0]];
            let owner = objects.iter().find(|o| o.center.d == d0 && o.class_id == scene.semantic[block[0]]);
            let Some(o) = owner else { continue };
            if block.iter().all(|&i| scene.depth.data()[i] == d0 && scene.semantic[i] == o.class_id) {
                let ie = image_extent(o.extent, o.center.d, &k).unwrap();
                area3d[fy * fw_ + fx] = k.fx * k.fy * o.extent.area();
                inv_area2d[fy * fw_ + fx] = 1.0 / ie.area();
                interior.push((fy * fw_ + fx, d0, o.class_id));
            }
        }
    }
    let net = NetConfig { base_channels: 4, ..NetConfig::new(h, w, ds.num_classes, Variant::Sosd) };
    let model = build_model(&net, &mut Rng::new(5)).unwrap();
    let mut fw = Forward::new(&model, Mode::Eval);
    let x = fw.input(scene.image.clone().reshape(vec![1, 3, h, w]).unwrap()).unwrap();
    let bb = backbone_forward(&mut fw, x).unwrap();
    let bundle = decoder_forward(&mut fw, bb, PathRequest::ALL).unwrap();
    let o = LatentOverride {
        area3d: Tensor::new(vec![1, 1, fh, fw_], area3d).unwrap(),
        inv_area2d: Tensor::new(vec![1, 1, fh, fw_], inv_area2d).unwrap(),
    };
    let (_, lat) = semantic_to_depth_with(&mut fw, &bundle, Some(&o)).unwrap();
    let cue = fw.graph.value(lat.depth_cue).data();
    let worst = interior.iter().map(|&(i, d, _)| (cue[i] - d).abs()).fold(0.0, f64::max);
    let covered: Vec<usize> = objects.iter().map(|o| interior.iter().filter(|p| p.2 == o.class_id).count()).collect();
    verdict(
        "fusion probe",
        worst < 1e-9 && covered.iter().all(|&n| n > 0),
        format!("{} interior feature pixels per object {covered:?}, max |cue − depth| {worst:.2e}", interior.len()),
    );
}

// ---- EM partition ----------------------------------------------------------

#[test]
fn em_partition_is_exact_over_200_steps() {
    let ds = DatasetConfig { train_scenes: 16, val_scenes: 0, height: 16, width: 32, ..DatasetConfig::default() };
    let data = sosd_core::synth::Dataset::generate(&ds, 1).unwrap();
    let net: NetConfig = serde_json::from_value(serde_json::json!({
        "height": 16, "width": 32, "num_classes": ds.num_classes, "variant": "sosd", "base_channels": 4,
    }))
    .unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        max_steps: Some(200),
        schedule: Schedule::Em,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(&net, cfg).unwrap();
    let mut violations = Vec::new();
    let mut phases = [0usize; 2];
    for step in 0..200 {
        let phase = t.em.phase;
        let before: Vec<Vec<u64>> = Group::ALL.iter().map(|&g| t.model.store.group_bits(g)).collect();
        t.step_once(&data.train).unwrap();
        phases[(phase == Phase::Semantic) as usize] += 1;
        for g in phase.frozen() {
            if before[g.index()] != t.model.store.group_bits(g) {
                violations.push(format!("step {step}: frozen {} changed", g.name()));
            }
        }
        for g in phase.groups() {
            if before[g.index()] == t.model.store.group_bits(g) {
                violations.push(format!("step {step}: active {} unchanged", g.name()));
            }
        }
    }
    verdict(
        "em partition",
        violations.is_empty() && phases[0] == 100 && phases[1] == 100,
        format!(
            "200 steps ({} depth, {} semantic), violations: {:?}",
            phases[0],
            phases[1],
            violations.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

// ---- metric oracles --------------------------------------------------------

struct DepthOracle {
    rel: f64,
    rms: f64,
    log10: f64,
    delta: [f64; 3],
    disparity: f64,
    n: u64,
}

fn depth_oracle(pred: &[f64], gt: &[f64], valid: &[bool], factor: f64) -> DepthOracle {
    let idx: Vec<usize> = (0..pred.len()).filter(|&i| valid[i]).collect();
    let n = idx.len() as f64;
    let mean = |f: &dyn Fn(usize) -> f64| idx.iter().map(|&i| f(i)).sum::<f64>() / n;
    let mut delta = [0.0; 3];
    for (k, th) in DEFAULT_THRESHOLDS.iter().enumerate() {
        delta[k] = idx.iter().filter(|&&i| pred[i] / gt[i] < *th && gt[i] / pred[i] < *th).count() as f64 / n;
    }
    DepthOracle {
        rel: mean(&|i| (pred[i] - gt[i]).abs() / gt[i]),
        rms: mean(&|i| (pred[i] - gt[i]).powi(2)).sqrt(),
        log10: mean(&|i| (pred[i].log10() - gt[i].log10()).abs()),
        delta,
        disparity: mean(&|i| (factor / pred[i] - factor / gt[i]).abs()),
        n: idx.len() as u64,
    }
}

/// Per-class IoU and accuracy counted straight from the label maps.
fn seg_oracle(pred: &[usize], gt: &[usize], c: usize, ignore: Option<usize>) -> (f64, f64, f64, Vec<Option<f64>>) {
    let keep: Vec<usize> = (0..gt.len()).filter(|&i| Some(gt[i]) != ignore).collect();
    let mut ious = Vec::new();
    let (mut iou_sum, mut acc_sum, mut present) = (0.0, 0.0, 0);
    for k in 0..c {
        let gt_k = keep.iter().filter(|&&i| gt[i] == k).count();
        if gt_k == 0 {
            ious.push(None);
            continue;
        }
        let inter = keep.iter().filter(|&&i| gt[i] == k && pred[i] == k).count();
        let union = keep.iter().filter(|&&i| gt[i] == k || pred[i] == k).count();
        let iou = inter as f64 / union as f64;
        ious.push(Some(iou));
        iou_sum += iou;
        acc_sum += inter as f64 / gt_k as f64;
        present += 1;
    }
    let correct = keep.iter().filter(|&&i| gt[i] == pred[i]).count();
    (iou_sum / present as f64, acc_sum / present as f64, correct as f64 / keep.len() as f64, ious)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = Rng::new(99);
    let mut failures = Vec::new();
    let (mut with_holes, mut with_absent) = (0, 0);
    for case in 0..100 {
        let n = 64;
        let c = 2 + rng.below(5);
        let factor = rng.uniform_range(5.0, 50.0);
        let gt: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.5, 40.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| g * rng.uniform_range(0.6, 1.6)).collect();
        let mut valid: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.8)).collect();
        valid[rng.below(n)] = true;
        with_holes += valid.iter().any(|v| !v) as usize;

        let got = depth_metrics(&pred, &gt, &valid, DepthMetricOptions::new(factor)).unwrap();
        let want = depth_oracle(&pred, &gt, &valid, factor);
        let depth_ok = close(got.rel, want.rel)
            && close(got.rms, want.rms)
            && close(got.log10, want.log10)
            && close(got.delta1, want.delta[0])
            && close(got.delta2, want.delta[1])
            && close(got.delta3, want.delta[2])
            && close(got.disparity_mae, want.disparity)
            && got.valid_n == want.n;

        let dp: Vec<f64> = pred.iter().map(|d| factor / d).collect();
        let dg: Vec<f64> = gt.iter().map(|d| factor / d).collect();
        let (mae, count) = disparity_mae(&dp, &dg, &valid).unwrap();
        let disp_ok = close(mae, want.disparity) && count == want.n;

        // Labels draw from a random subset so some classes are absent.
        let used: Vec<usize> = (0..c).filter(|_| rng.bernoulli(0.7)).collect();
        let used = if used.is_empty() { vec![0] } else { used };
        let ignore = if case % 2 == 0 { Some(c) } else { None };
        let gt_l: Vec<usize> = (0..n)
            .map(|_| if ignore.is_some() && rng.bernoulli(0.1) { c } else { used[rng.below(used.len())] })
            .collect();
        let pred_l: Vec<usize> =
            gt_l.iter().map(|&g| if g < c && rng.bernoulli(0.6) { g } else { rng.below(c) }).collect();
        with_absent += (used.len() < c) as usize;
        let seg = seg_metrics(&pred_l, &gt_l, c, ignore).unwrap();
        let (miou, macc, pacc, ious) = seg_oracle(&pred_l, &gt_l, c, ignore);
        let mut cm = vec![vec![0u64; c]; c];
        for (&p, &g) in pred_l.iter().zip(&gt_l) {
            if g < c {
                cm[g][p] += 1;
            }
        }
        let seg_ok = close(seg.miou, miou)
            && close(seg.mean_accuracy, macc)
            && close(seg.pixel_accuracy, pacc)
            && seg.confusion == cm
            && seg.per_class_iou.len() == ious.len()
            && seg.per_class_iou.iter().zip(&ious).all(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => close(*a, *b),
                (None, None) => true,
                _ => false,
            });
        if !(depth_ok && disp_ok && seg_ok) {
            failures.push(format!("case {case}: depth {depth_ok} disparity {disp_ok} seg {seg_ok}"));
        }
    }
    verdict(
        "metric oracle",
        failures.is_empty() && with_holes > 0 && with_absent > 0,
        format!(
            "100 cases of 8x8 ({with_holes} with holes, {with_absent} with absent classes), mismatches {failures:?}"
        ),
    );
}

// ---- ablation --------------------------------------------------------------

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn ablation_ordering() {
    let spec = ExperimentSpec::load(&workspace_root().join("specs/ablation.json")).unwrap();
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-ablation");
    let threads = harness::thread_count().unwrap();
    let start = Instant::now();
    let report = cmd_ablate(&spec, None, &out, threads, true).unwrap();
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    print!("{}", harness::text_table(&report));
    let get = |n: &str| report.check(n).unwrap();
    let a = get("a").holds == Some(true);
    let tag = |n: &str| match get(n).holds {
        Some(true) => "holds",
        Some(false) if a => "warning",
        _ => "fails",
    };
    let shape_ok = report.rows.len() == 5 && report.seeds.len() == 5 && report.rows.iter().all(|r| r.failed == 0);
    verdict(
        "ablation ordering",
        shape_ok && report.passed(),
        format!(
            "(a) {} [{}], (b) {} [{}], (c) {} [{}]; {:.1} min on {threads} thread(s), output in {}",
            tag("a"),
            get("a").detail,
            tag("b"),
            get("b").detail,
            tag("c"),
            get("c").detail,
            minutes,
            out.display()
        ),
    );
}

// ---- determinism and resume ------------------------------------------------

fn small_spec() -> ExperimentSpec {
    ExperimentSpec::parse(
        r#"{"dataset":{"train_scenes":12,"val_scenes":4,"height":16,"width":32},
            "net":{"base_channels":4},
            "train":{"learning_rate":1e-3,"batch_size":4,"epochs":4,"checkpoint_every":5}}"#,
    )
    .unwrap()
}

fn train(spec: &ExperimentSpec, out: &Path, resume: Option<PathBuf>, stop_at: Option<u64>) -> PathBuf {
    let req = TrainRequest {
        variant: RunVariant::Esosd,
        seed: 11,
        dataset_seed: None,
        out: out.to_path_buf(),
        resume,
        stop_at,
        deterministic: true,
    };
    cmd_train(spec, &req).unwrap().final_checkpoint
}

#[test]
fn determinism_and_resume() {
    let spec = small_spec();
    let tmp = tempfile::tempdir().unwrap();
    let a = train(&spec, &tmp.path().join("a"), None, None);
    let b = train(&spec, &tmp.path().join("b"), None, None);
    let (fa, fb) = (checkpoint::fingerprint(&a).unwrap(), checkpoint::fingerprint(&b).unwrap());
    let repeat = fa == fb;

    let c = tmp.path().join("c");
    train(&spec, &c, None, Some(5));
    let resumed = train(&spec, &c, Some(c.join("checkpoints/step-00000005")), None);
    let fc = checkpoint::fingerprint(&resumed).unwrap();
    let resume = fa == fc;
    let steps = checkpoint::load(&a).unwrap().step;
    let logs_equal = std::fs::read(tmp.path().join("a/train_log.jsonl")).unwrap()
        == std::fs::read(c.join("train_log.jsonl")).unwrap();
    verdict(
        "determinism & resume",
        repeat && resume && logs_equal && steps == 12,
        format!("{steps} steps; repeat identical: {repeat}; resume at 5 identical: {resume}; logs identical: {logs_equal}; final {}", &fa[..16]),
    );
}

// ---- parameter counts ------------------------------------------------------

#[test]
fn parameter_count_ordering() {
    let mut counts = Vec::new();
    let mut ok = true;
    for base in [4, 8, 16, 32] {
        let n = |v: Variant| {
            let cfg = NetConfig { base_channels: base, ..NetConfig::new(64, 128, 6, v) };
            build_model(&cfg, &mut Rng::new(0)).unwrap().num_parameters()
        };
        let (s, d, m, f) = (n(Variant::SemanticOnly), n(Variant::DepthOnly), n(Variant::Mtl), n(Variant::Sosd));
        ok &= s < m && d < m && m < f;
        counts.push(format!("B={base}: semantic {s}, depth {d}, mtl {m}, sosd {f}"));
    }
    verdict("parameter ordering", ok, counts.join("; "));
}
