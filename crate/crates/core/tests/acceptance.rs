//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.
//!
//! Run with `cargo test -p fieldsmith --test acceptance -- --nocapture` to
//! see the report.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use fieldsmith::camera::ViewId;
use fieldsmith::field::{
    fit_background, loss_and_gradients, render_ray, render_view, softplus_inverse, Aabb, GridSpec, Jitter,
    RadianceField, Ray, RenderOptions, TrainConfig, TrainRay,
};
use fieldsmith::geometry::EditMask;
use fieldsmith::metrics::{clip_dc_from_embeddings, cos_plus, evaluate_scene, ToyEmbedder};
use fieldsmith::raster::{masked_mse, psnr, psnr_from_mse, Image};
use fieldsmith::scene_io::{
    load_session_checkpoint, make_synthetic_scene, presets, trace_primitives, SceneDataset, SyntheticScene,
};
use fieldsmith::scheduler::{
    run_insertion, run_removal, write_event_log, EditSession, Editor, EventKind, Hyperparams, RemovalConfig, ViewOrder,
};
use fieldsmith::synth::wire::{self, SynthesizeBody, SynthesizeResponse};
use fieldsmith::synth::{
    IdentitySynth, OracleContent, OracleSynth, Prompt, RemoteConfig, RemoteSynth, SynthesisRequest, Synthesizer,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N_VIEWS: usize = 40;
const SIZE: u32 = 64;
const SCENE_SEED: u64 = 7;
const FIT_ITERS: usize = 3000;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
/// `n_new` for the end-to-end editing runs (the library default of 500, scaled down).
const N_NEW: u64 = 50;
const INSERT_PROMPT: &str = "a *red ball in a room";
const REMOVAL_JITTER: f32 = 0.1;
const ORDER_JITTER: f32 = 0.25;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Wall-clock seconds scaled by the worker count: an upper bound on the
/// single-threaded time.
fn single_thread_secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * rayon::current_num_threads() as f64
}

fn grid() -> GridSpec {
    let mut g = GridSpec::cube(48, 2.05).unwrap();
    g.background = [0.6, 0.55, 0.5];
    g
}

/// 3000-iteration background fit. The learning rate is raised from the
/// library default, which is still short of convergence at this budget.
fn editing_base(ds: &SceneDataset) -> RadianceField {
    let cfg = TrainConfig {
        learning_rate: 0.05,
        ..Default::default()
    };
    fit_background(ds, &grid(), &cfg, FIT_ITERS).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn min(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------

/// Fits the box room; the fit doubles as the starting point for A2 and A3.
fn a1(ds: &SceneDataset, scene: &SyntheticScene, base: &mut Option<RadianceField>) -> Outcome {
    let t = Instant::now();
    let field = editing_base(ds);
    let secs = single_thread_secs(t);
    let intr = scene.intrinsics();
    // Held-out cameras halfway between training views.
    let ps: Vec<f64> = (0..4)
        .map(|i| {
            let pose = scene.orbit_pose(i as f64 * 10.0 + 5.5).unwrap();
            psnr(
                &render_view(&field, &pose, &intr, &RenderOptions::default()),
                &scene.render(&pose, &intr),
            )
            .unwrap()
        })
        .collect();
    *base = Some(field);
    outcome(
        min(&ps) >= 25.0 && secs <= 300.0,
        format!("held-out PSNR {:.2?} dB (min >= 25), fit {:.0} s (<= 300)", ps, secs),
    )
}

fn a2(ds: &SceneDataset, base: &RadianceField) -> Outcome {
    let oracle =
        OracleSynth::for_dataset(ds, OracleContent::ObjectOverInpaint(presets::inserted_object()), 0.0).unwrap();
    let hyper = Hyperparams {
        n_new: N_NEW,
        ..Default::default()
    };
    let session = EditSession::new(
        ds.clone(),
        presets::edit_box(),
        Prompt::new(INSERT_PROMPT).unwrap(),
        hyper,
        1,
    )
    .unwrap();
    let cfg = TrainConfig::default();
    let t = Instant::now();
    let (field, session, _) = run_insertion(base.clone(), session, &oracle, &cfg).unwrap();
    let secs = single_thread_secs(t);
    let (mut all, mut kept) = (vec![], vec![]);
    for v in &ds.views {
        let mask = session.mask(v.id).unwrap();
        let truth = oracle
            .ideal(&full_request(v.image.clone(), mask.clone(), v.id))
            .unwrap();
        let r = render_view(&field, &v.pose, &v.intrinsics, &cfg.render_options());
        all.push(psnr(&r, &truth).unwrap());
        kept.push(psnr_from_mse(
            masked_mse(&r, &truth, |i| mask.is_preserved_index(i)).unwrap(),
        ));
    }
    outcome(
        mean(&all) >= 22.0 && mean(&kept) >= 30.0 && secs <= 600.0,
        format!(
            "mean PSNR {:.2} dB (>= 22), preserved {:.2} dB (>= 30), {:.0} s (<= 600)",
            mean(&all),
            mean(&kept),
            secs
        ),
    )
}

fn full_request(image: Image, mask: EditMask, id: ViewId) -> SynthesisRequest {
    SynthesisRequest {
        image,
        mask,
        prompt: Prompt::new("truth").unwrap(),
        strength: 1.0,
        seed: 0,
        view_id: Some(id),
    }
}

/// Mean over surface points of the inserted object of the per-channel std
/// of the rendered color across every view that sees the point.
fn object_inconsistency(field: &RadianceField, ds: &SceneDataset) -> f64 {
    let prims = presets::inserted_object();
    let fieldsmith::scene_io::Primitive::Sphere { center, radius, .. } = prims[0] else {
        unreachable!()
    };
    let c = Vector3::from(center);
    let renders: Vec<_> = ds
        .views
        .iter()
        .map(|v| render_view(field, &v.pose, &v.intrinsics, &RenderOptions::default()))
        .collect();
    let m = 400;
    let (mut total, mut n) = (0.0, 0);
    for k in 0..m {
        // Fibonacci sphere.
        let y = 1.0 - 2.0 * (k as f64 + 0.5) / m as f64;
        let r = (1.0 - y * y).sqrt();
        let th = k as f64 * 2.399963229728653;
        let p = c + Vector3::new(r * th.cos(), y, r * th.sin()) * radius;
        let mut cols = vec![];
        for (v, img) in ds.views.iter().zip(&renders) {
            let o = v.pose.translation();
            let d = (p - o).normalize();
            let Some((t, _)) = trace_primitives(&prims, &o, &d) else {
                continue;
            };
            if (t - (p - o).norm()).abs() > 1e-6 {
                continue;
            }
            let q = v.pose.world_to_camera(&p);
            if q.z <= 0.0 {
                continue;
            }
            let (u, w) = v.intrinsics.project(&q);
            if u < 0.0 || w < 0.0 || u >= img.width() as f64 || w >= img.height() as f64 {
                continue;
            }
            cols.push(img.get(u as usize, w as usize));
        }
        if cols.len() < 2 {
            continue;
        }
        let mut s = 0.0;
        for ch in 0..3 {
            let mu = cols.iter().map(|c| c[ch] as f64).sum::<f64>() / cols.len() as f64;
            s += (cols.iter().map(|c| (c[ch] as f64 - mu).powi(2)).sum::<f64>() / cols.len() as f64).sqrt();
        }
        total += s / 3.0;
        n += 1;
    }
    total / n as f64
}

fn a3(ds: &SceneDataset, base: &RadianceField) -> Outcome {
    let oracle = OracleSynth::for_dataset(
        ds,
        OracleContent::ObjectOverInpaint(presets::inserted_object()),
        ORDER_JITTER,
    )
    .unwrap();
    let originals: Vec<Image> = ds.views.iter().map(|v| v.image.clone()).collect();
    let (p, p_edit) = (
        Prompt::new("a room").unwrap(),
        Prompt::new("a red ball in a room").unwrap(),
    );
    let mut rows = vec![];
    let (mut inc_wins, mut dc_wins) = (0, 0);
    for seed in SEEDS {
        let mut res = vec![];
        for order in [ViewOrder::Pose, ViewOrder::Random] {
            let hyper = Hyperparams {
                n_new: N_NEW,
                order,
                ..Default::default()
            };
            let session = EditSession::new(
                ds.clone(),
                presets::edit_box(),
                Prompt::new(INSERT_PROMPT).unwrap(),
                hyper,
                seed,
            )
            .unwrap();
            let (field, _, _) = run_insertion(base.clone(), session, &oracle, &TrainConfig::default()).unwrap();
            let renders: Vec<Image> = ds
                .views
                .iter()
                .map(|v| render_view(&field, &v.pose, &v.intrinsics, &RenderOptions::default()))
                .collect();
            let report = evaluate_scene(&ToyEmbedder, &originals, &renders, &p, &p_edit).unwrap();
            res.push((object_inconsistency(&field, ds), report.mean_clip_dc));
        }
        inc_wins += (res[0].0 < res[1].0) as usize;
        dc_wins += (res[0].1 > res[1].1) as usize;
        rows.push(format!(
            "seed {seed}: inc {:.5}/{:.5} dc {:.3}/{:.3}",
            res[0].0, res[1].0, res[0].1, res[1].1
        ));
    }
    outcome(
        inc_wins >= 4 && dc_wins >= 4,
        format!(
            "pose vs random: lower inconsistency {inc_wins}/5, higher CLIPDC {dc_wins}/5 (each >= 4) [{}]",
            rows.join("; ")
        ),
    )
}

/// Greedy nearest-to-edited-set order computed directly from positions,
/// plus the number of selections that were decided by the tie rule.
fn brute_force_order(eyes: &[Vector3<f64>], first: usize, burst: usize) -> (Vec<usize>, usize) {
    let mut used = vec![first];
    let mut ties = 0;
    let mut left: Vec<usize> = (0..eyes.len()).filter(|&i| i != first).collect();
    while !left.is_empty() {
        for _ in 0..burst.min(left.len()) {
            let score = |i: usize| {
                used.iter()
                    .map(|&u| (eyes[i] - eyes[u]).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            };
            let best = *left
                .iter()
                .min_by(|&&a, &&b| score(a).partial_cmp(&score(b)).unwrap().then(a.cmp(&b)))
                .unwrap();
            ties += (left.iter().filter(|&&i| score(i) == score(best)).count() > 1) as usize;
            left.retain(|&i| i != best);
            used.push(best);
        }
    }
    (used, ties)
}

/// Expected event kinds per step for a run with the given cadence.
fn expected_events(n: usize, h: &Hyperparams) -> Vec<(u64, EventKind)> {
    let mut out = vec![(0, EventKind::Admit)];
    let (mut remaining, mut since, mut step) = (n - 1, 0u64, 0u64);
    loop {
        step += 1;
        since += 1;
        out.push((step, EventKind::Train));
        if step % h.n_old == 0 {
            out.push((step, EventKind::Replace));
        }
        if remaining > 0 && since >= h.n_new {
            for _ in 0..h.n_near.min(remaining) {
                out.push((step, EventKind::Admit));
            }
            remaining -= h.n_near.min(remaining);
            since = 0;
        }
        if remaining == 0 && since >= h.consolidation() {
            out.push((step, EventKind::Done));
            return out;
        }
    }
}

fn a4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut order_ok, mut cadence_ok, mut ties) = (0, 0, 0);
    for _ in 0..200 {
        let n = rng.random_range(5..=20);
        // Integer lattice so that distance ties are common.
        let eyes: Vec<Vector3<f64>> = (0..n)
            .map(|_| loop {
                let p = Vector3::new(
                    rng.random_range(-3..=3) as f64,
                    rng.random_range(-1..=1) as f64,
                    rng.random_range(-3..=3) as f64,
                );
                if p.x != 0.0 || p.z != 0.0 {
                    break p;
                }
            })
            .collect();
        let hyper = Hyperparams {
            n_near: rng.random_range(1..=3),
            n_new: rng.random_range(1..=4),
            n_old: rng.random_range(1..=5),
            consolidation_steps: Some(rng.random_range(0..=3)),
            ..Default::default()
        };
        let ds = common::dataset_at(&eyes);
        let session =
            EditSession::new(ds, common::center_box(), Prompt::new("x").unwrap(), hyper, rng.random()).unwrap();
        let mut ed = Editor::new(session, common::small_field(), common::small_train(), &IdentitySynth).unwrap();
        ed.run().unwrap();
        let got: Vec<usize> = ed.session().used_order().iter().map(|id| id.0 as usize).collect();
        let (want, t) = brute_force_order(&eyes, got[0], hyper.n_near);
        order_ok += (got == want) as usize;
        ties += t;

        let kinds: Vec<(u64, EventKind)> = ed.events().iter().map(|e| (e.step, e.kind)).collect();
        cadence_ok += (kinds == expected_events(n, &hyper)) as usize;
    }
    outcome(
        order_ok == 200 && cadence_ok == 200,
        format!("admission order matches brute force {order_ok}/200, cadence exact {cadence_ok}/200 ({ties} selections decided by the tie rule)"),
    )
}

fn a5() -> Outcome {
    let (ds, scene) = make_synthetic_scene(&presets::box_room_with_object(N_VIEWS, SIZE, SCENE_SEED)).unwrap();
    let base = editing_base(&ds);
    let bbox = presets::edit_box();
    let empty = scene.without_objects_in(&bbox);
    let box_psnr = |field: &RadianceField, session: &EditSession| -> Vec<f64> {
        ds.views
            .iter()
            .map(|v| {
                let mask = session.mask(v.id).unwrap();
                let r = render_view(field, &v.pose, &v.intrinsics, &RenderOptions::default());
                psnr_from_mse(
                    masked_mse(&r, &empty.render(&v.pose, &v.intrinsics), |i| {
                        !mask.is_preserved_index(i)
                    })
                    .unwrap(),
                )
            })
            .collect()
    };
    let run = |jitter: f32, seed: u64, skip: bool| {
        let oracle = OracleSynth::for_dataset(&ds, OracleContent::Scene(empty.clone()), jitter).unwrap();
        let mut cfg = RemovalConfig::new(Prompt::new("a room").unwrap(), Prompt::new("a *room").unwrap());
        cfg.hyper = Hyperparams {
            n_new: N_NEW,
            ..Default::default()
        };
        cfg.train = TrainConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        cfg.seed = seed;
        cfg.skip_pseudo_truth = skip;
        let out = run_removal(base.clone(), ds.clone(), bbox, &oracle, &cfg).unwrap();
        box_psnr(&out.field, &out.session)
    };

    let exact = run(0.0, 1, false);
    let mut wins = 0;
    let mut rows = vec![];
    for seed in SEEDS {
        let (full, skip) = (
            mean(&run(REMOVAL_JITTER, seed, false)),
            mean(&run(REMOVAL_JITTER, seed, true)),
        );
        wins += (skip < full) as usize;
        rows.push(format!("{full:.2}/{skip:.2}"));
    }
    outcome(
        min(&exact) >= 20.0 && wins >= 4,
        format!(
            "exact inpainter box PSNR min {:.2} dB (>= 20 on all views); noisy j={REMOVAL_JITTER}: skipping pseudo ground truth is worse on {wins}/5 seeds (>= 4) [full/skip {}]",
            min(&exact),
            rows.join(", ")
        ),
    )
}

fn random_field(rng: &mut ChaCha8Rng) -> RadianceField {
    let res = [
        rng.random_range(2..=5),
        rng.random_range(2..=5),
        rng.random_range(2..=5),
    ];
    let mut field = RadianceField::new(&GridSpec {
        resolution: res,
        aabb: Aabb::cube(1.0).unwrap(),
        init_density_raw: 0.0,
        init_color_raw: 0.0,
        background: [rng.random(), rng.random(), rng.random()],
    })
    .unwrap();
    for p in field.raw_mut() {
        *p = [
            rng.random_range(-2.0..3.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ];
    }
    field
}

fn random_ray(rng: &mut ChaCha8Rng, aabb: &Aabb) -> Ray {
    loop {
        let o = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 3.0);
        let target = Vector3::new(
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.8..0.8),
        );
        if let Some(r) = Ray::clipped(o, (target - o).normalize(), aabb, 0.0) {
            return r;
        }
    }
}

fn a6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-4;
    let mut worst_rel = 0.0f64;
    let mut checked = 0;
    for cfg_i in 0..100 {
        let mut field = random_field(&mut rng);
        let opts = RenderOptions {
            n_samples: rng.random_range(4..=24),
            min_transmittance: 0.0,
            ..Default::default()
        };
        let batch: Vec<TrainRay> = (0..rng.random_range(1..=6))
            .map(|k| TrainRay {
                ray: random_ray(&mut rng, field.aabb()),
                target: [rng.random(), rng.random(), rng.random()],
                jitter: if k % 2 == 0 {
                    Jitter::Midpoint
                } else {
                    Jitter::Seeded { seed: cfg_i, stream: k }
                },
            })
            .collect();
        let (_, grad) = loss_and_gradients(&field, &batch, &opts);
        // The largest gradient entries plus a few random ones.
        let mut idx: Vec<(usize, usize)> = (0..field.vertex_count())
            .flat_map(|v| (0..4).map(move |c| (v, c)))
            .collect();
        idx.sort_by(|a, b| {
            grad.values()[b.0][b.1]
                .abs()
                .partial_cmp(&grad.values()[a.0][a.1].abs())
                .unwrap()
        });
        let mut picks: Vec<(usize, usize)> = idx[..4].to_vec();
        for _ in 0..4 {
            picks.push(idx[rng.random_range(0..idx.len())]);
        }
        for (v, c) in picks {
            let orig = field.raw()[v][c];
            field.raw_mut()[v][c] = orig + h;
            let (lp, _) = loss_and_gradients(&field, &batch, &opts);
            field.raw_mut()[v][c] = orig - h;
            let (lm, _) = loss_and_gradients(&field, &batch, &opts);
            field.raw_mut()[v][c] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grad.values()[v][c];
            let scale = analytic.abs().max(numeric.abs());
            if scale < 1e-6 {
                continue;
            }
            worst_rel = worst_rel.max((analytic - numeric).abs() / scale);
            checked += 1;
        }
    }

    let mut worst_identity = 0.0f64;
    for _ in 0..200 {
        let field = random_field(&mut rng);
        let opts = RenderOptions {
            n_samples: rng.random_range(2..=128),
            min_transmittance: 0.0,
            ..Default::default()
        };
        let out = render_ray(&field, &random_ray(&mut rng, field.aabb()), &opts, Jitter::Midpoint);
        worst_identity = worst_identity.max((out.weight_sum + out.transmittance - 1.0).abs());
    }

    let mut worst_slab = 0.0f64;
    for sigma in [0.25, 1.0, 2.5] {
        let mut field = RadianceField::new(&GridSpec::cube(3, 1.0).unwrap()).unwrap();
        let raw = softplus_inverse(sigma);
        for p in field.raw_mut() {
            p[0] = raw;
        }
        let opts = RenderOptions {
            n_samples: 256,
            min_transmittance: 0.0,
            ..Default::default()
        };
        for len in [0.5, 1.0, 2.0] {
            let ray = Ray::new(Vector3::new(-1.0, 0.1, -0.2), Vector3::x(), 0.0, len).unwrap();
            let out = render_ray(&field, &ray, &opts, Jitter::Midpoint);
            worst_slab = worst_slab.max((out.transmittance - (-sigma * len).exp()).abs());
        }
    }
    outcome(
        worst_rel < 1e-3 && worst_identity <= 1e-12 && worst_slab <= 1e-3,
        format!(
            "gradient max rel err {worst_rel:.2e} over {checked} entries in 100 configs (< 1e-3); |sum w + T - 1| <= {worst_identity:.1e}; slab |T - exp(-sigma L)| <= {worst_slab:.1e} (<= 1e-3)"
        ),
    )
}

fn a7() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    let mut ok = true;
    ok &= close(cos_plus(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap(), 8.0 / 9.0);
    ok &= close(cos_plus(&[1.0, 0.0], &[-1.0, 1.0]).unwrap(), 0.0);
    ok &= close(cos_plus(&[3.0, 4.0], &[6.0, 8.0]).unwrap(), 1.0);
    // Text moves along y; view i moves along (y+z)/sqrt2; view i+1 along (x+y)/sqrt2.
    let dc = clip_dc_from_embeddings(
        &[1.0, 0.0, 0.0],
        &[1.0, 1.0, 0.0],
        &[1.0, 1.0, 1.0],
        &[1.0, 2.0, 2.0],
        &[0.0, 0.0, 0.0],
        &[1.0, 1.0, 0.0],
    )
    .unwrap();
    ok &= close(dc, 0.5 / 2f64.sqrt());
    let dc_neg = clip_dc_from_embeddings(
        &[0.0, 0.0],
        &[1.0, 0.0],
        &[0.0, 0.0],
        &[-1.0, 0.0],
        &[0.0; 2],
        &[1.0, 1.0],
    )
    .unwrap();
    ok &= close(dc_neg, 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = |rng: &mut ChaCha8Rng| Image::from_fn(16, 16, |_, _| [rng.random(), rng.random(), rng.random()]);
    let mut in_range = true;
    let mut pairs_ok = true;
    for n in 2..8 {
        let orig: Vec<Image> = (0..n).map(|_| img(&mut rng)).collect();
        let edit: Vec<Image> = (0..n).map(|_| img(&mut rng)).collect();
        let r = evaluate_scene(
            &ToyEmbedder,
            &orig,
            &edit,
            &Prompt::new("a room").unwrap(),
            &Prompt::new("a blue room").unwrap(),
        )
        .unwrap();
        pairs_ok &= r.clip_dc.len() == n - 1 && r.clip_scores.len() == n;
        in_range &= r
            .clip_dc
            .iter()
            .chain(&r.clip_scores)
            .chain([&r.mean_clip_dc, &r.mean_clip_score])
            .all(|v| (0.0..=1.0).contains(v));
    }
    outcome(
        ok && pairs_ok && in_range,
        format!("hand-computed values {ok}, N-1 DC pairs {pairs_ok}, all outputs in [0,1] {in_range}"),
    )
}

fn inverting_server() -> common::MockServer {
    common::MockServer::start(|_, _, body| {
        let req: SynthesizeBody = serde_json::from_str(body).unwrap();
        let img = wire::decode_image(&req.image).unwrap();
        let out = Image::from_fn(img.width(), img.height(), |x, y| img.get(x, y).map(|v| 1.0 - v));
        common::Reply::json(
            200,
            serde_json::to_string(&SynthesizeResponse {
                image: wire::encode_image(&out).unwrap(),
            })
            .unwrap(),
        )
    })
}

fn dir_bytes(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        out.insert(
            entry.strip_prefix(dir).unwrap().display().to_string(),
            std::fs::read(&entry).unwrap(),
        );
    }
    out
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = vec![];
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

fn a8() -> Outcome {
    let ds = common::ring(6);
    let server = inverting_server();
    let mut remote_cfg = RemoteConfig::new(&server.url);
    remote_cfg.retries = 0;
    let ball = vec![fieldsmith::scene_io::Primitive::Sphere {
        center: [0.0; 3],
        radius: 0.4,
        color: [0.9, 0.1, 0.1],
    }];
    let backends: Vec<Box<dyn Synthesizer>> = vec![
        Box::new(IdentitySynth),
        Box::new(OracleSynth::for_dataset(&ds, OracleContent::ObjectOverInpaint(ball.clone()), 0.0).unwrap()),
        Box::new(OracleSynth::for_dataset(&ds, OracleContent::ObjectOverInpaint(ball.clone()), 0.3).unwrap()),
        Box::new(RemoteSynth::new(remote_cfg).unwrap()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mask_ok = true;
    for case in 0..100 {
        let v = &ds.views[case % ds.len()];
        let req = SynthesisRequest {
            image: Image::from_fn(16, 16, |_, _| [rng.random(), rng.random(), rng.random()]),
            mask: EditMask::from_fn(16, 16, |_, _| rng.random_bool(0.6)),
            prompt: Prompt::new("a *red ball").unwrap(),
            strength: rng.random(),
            seed: rng.random(),
            view_id: Some(v.id),
        };
        for b in &backends {
            let out = b.synthesize(&req).unwrap();
            mask_ok &= (0..256).all(|i| !req.mask.is_preserved_index(i) || out.pixels()[i] == req.image.pixels()[i]);
        }
    }

    let noisy = OracleSynth::for_dataset(&ds, OracleContent::ObjectOverInpaint(ball), 0.2).unwrap();
    let run_to_disk = |dir: &std::path::Path| {
        let hyper = Hyperparams {
            n_near: 2,
            n_new: 3,
            n_old: 2,
            ..Default::default()
        };
        let session = EditSession::new(
            ds.clone(),
            common::center_box(),
            Prompt::new("a *ball").unwrap(),
            hyper,
            11,
        )
        .unwrap();
        let mut ed = Editor::new(session, common::small_field(), common::small_train(), &noisy).unwrap();
        ed.run().unwrap();
        ed.save_checkpoint(dir).unwrap();
        write_event_log(ed.events(), &dir.join("log.ndjson")).unwrap();
        dir_bytes(dir)
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (b1, b2) = (run_to_disk(d1.path()), run_to_disk(d2.path()));
    let deterministic = b1 == b2 && load_session_checkpoint(d1.path()).is_ok();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut steps, mut runs, mut conserved) = (0u64, 0, true);
    while steps < 10_000 {
        let n = rng.random_range(2..=12);
        let hyper = Hyperparams {
            n_near: rng.random_range(1..=4),
            n_new: rng.random_range(1..=40),
            n_old: rng.random_range(1..=10),
            consolidation_steps: Some(rng.random_range(0..=50)),
            order: if rng.random_bool(0.5) {
                ViewOrder::Pose
            } else {
                ViewOrder::Random
            },
            ..Default::default()
        };
        let session = EditSession::new(
            common::ring(n),
            common::center_box(),
            Prompt::new("x").unwrap(),
            hyper,
            rng.random(),
        )
        .unwrap();
        let mut ed = Editor::new(session, common::small_field(), common::small_train(), &IdentitySynth).unwrap();
        loop {
            let done = ed.advance().unwrap();
            let s = ed.session();
            conserved &= s.check_invariants().is_ok() && s.remaining().len() + s.edited().len() == n;
            if done {
                break;
            }
        }
        steps += ed.session().progress().total_steps;
        runs += 1;
    }
    outcome(
        mask_ok && deterministic && conserved,
        format!(
            "preserved pixels bit-exact on identity/oracle-exact/oracle-noisy/remote {mask_ok}; identical seeds give identical logs and checkpoints {deterministic}; conservation over {steps} steps in {runs} runs {conserved}"
        ),
    )
}

// Runs without the libtest harness so the report is printed even when
// output capture would hide it.
fn main() {
    let mut results: Vec<(&str, &str, Outcome)> = vec![];
    let mut check = |id: &'static str, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let o = catch_unwind(AssertUnwindSafe(|| f())).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        println!("{id} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    let (ds, scene) = make_synthetic_scene(&presets::box_room(N_VIEWS, SIZE, SCENE_SEED)).unwrap();
    let mut fitted = None;
    check("A1", "background fit", &mut || a1(&ds, &scene, &mut fitted));
    let base = fitted.unwrap_or_else(|| editing_base(&ds));
    check("A2", "exact-oracle insertion", &mut || a2(&ds, &base));
    check("A3", "pose order beats random order", &mut || a3(&ds, &base));
    check("A4", "scheduling oracle equivalence", &mut a4);
    check("A5", "removal", &mut a5);
    check("A6", "numerical core", &mut a6);
    check("A7", "metric formulas", &mut a7);
    check("A8", "contract suite", &mut a8);

    let failed: Vec<&str> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        eprintln!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
