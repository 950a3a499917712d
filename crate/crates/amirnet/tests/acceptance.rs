//! Acceptance suite. Prints one PASS/FAIL line per criterion on stderr
//! (uncaptured) and fails if any criterion fails.

mod common;

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use amirnet::checkpoint::Checkpoint;
use amirnet::config::TrainConfig;
use amirnet::corpus::{load_corpus, split, CorpusManifest, Sample};
use amirnet::train::{ablate, embed, evaluate, report, train_stage1, AblationRow, Model};
use amirnet_core::degrade::derive_seed;
use amirnet_core::hierarchy::{flatten, kmeans, unflatten, DegTree, KMeansConfig, TreeAssignment};
use amirnet_core::metrics::{psnr, ssim};
use amirnet_core::restorer::{AblationVariant, RnConfig};
use amirnet_core::selfcheck::{dsln_reduction_error, gradient_suite};
use amirnet_core::stats::{adjusted_rand_index, pca_2d, silhouette};
use amirnet_core::{Drn, Image, Restorer, REPR_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DESK_ROSTER: &str = "gaussian_noise:sigma=25/255,gaussian_blur:sigma=2,low_light:gamma=2.5;gain=0.4,block_compression:quality=10";
const DESK_PER_TYPE: usize = 50;
const DESK_CLEAN: usize = 50;
const DESK_SIDE: usize = 48;
const DESK_SEED: u64 = 2024;

fn desk_config(corpus: &Path) -> TrainConfig {
    TrainConfig {
        corpus: Some(corpus.to_path_buf()),
        patch_size: 32,
        batch_size: 8,
        stage1_epochs: 24,
        cluster_interval: 6,
        stage2_epochs: 24,
        seed: DESK_SEED,
        ..Default::default()
    }
}

struct Outcome {
    id: &'static str,
    name: &'static str,
    passed: bool,
    detail: String,
}

struct Suite {
    outcomes: Vec<Outcome>,
}

impl Suite {
    fn record(&mut self, id: &'static str, name: &'static str, passed: bool, detail: String) {
        let line = format!("[{}] {id:>2} {name}: {detail}\n", if passed { "PASS" } else { "FAIL" });
        let mut err = std::io::stderr();
        let _ = err.write_all(line.as_bytes());
        let _ = err.flush();
        self.outcomes.push(Outcome { id, name, passed, detail });
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn hierarchy_invariants() -> (bool, String) {
    let tree = DegTree::default();
    let mut ok = tree.flat_len() == 30;
    let mut checked = 0;
    for leaf in 0..16usize {
        let path: Vec<usize> = (0..4).rev().map(|b| (leaf >> b) & 1).collect();
        for built in 0..=4 {
            let a = TreeAssignment { path: path[..built].to_vec() };
            let f = flatten(&a, &tree).unwrap();
            ok &= f.bits.len() == 30;
            for (level, (off, len)) in (1..=4).zip(tree.level_slices(4)) {
                let set: Vec<usize> = (0..len).filter(|&j| f.bits[off + j] == 1).collect();
                if level <= built {
                    ok &= set == vec![a.node_at(level, &tree)];
                    if level > 1 {
                        let (poff, plen) = tree.level_slices(level - 1)[level - 2];
                        let parent: Vec<usize> = (0..plen).filter(|&j| f.bits[poff + j] == 1).collect();
                        ok &= parent == vec![tree.parent(set[0])];
                    }
                } else {
                    ok &= set.is_empty();
                }
            }
            ok &= f.bits.iter().all(|&b| b <= 1);
            ok &= unflatten(&f, &tree).unwrap() == a;
            checked += 1;
        }
    }
    (ok, format!("{checked} paths over 16 leaves, flat length {}", tree.flat_len()))
}

fn brute_force_inertia(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let cost = |members: &[&Vec<f64>]| {
        let m = members.len() as f64;
        let cx = members.iter().map(|p| p[0]).sum::<f64>() / m;
        let cy = members.iter().map(|p| p[1]).sum::<f64>() / m;
        members.iter().map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sum::<f64>()
    };
    let mut best = f64::INFINITY;
    for mask in 0..(1u32 << (n - 1)) {
        let (a, b): (Vec<_>, Vec<_>) = (0..n).partition(|&i| i == 0 || mask & (1 << (i - 1)) == 0);
        if b.is_empty() {
            continue;
        }
        let pa: Vec<&Vec<f64>> = a.iter().map(|&i| &points[i]).collect();
        let pb: Vec<&Vec<f64>> = b.iter().map(|&i| &points[i]).collect();
        best = best.min(cost(&pa) + cost(&pb));
    }
    best
}

fn clustering_oracle() -> (bool, String) {
    let mut hits = 0;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let points: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let cfg = KMeansConfig { k: 2, restarts: 10, seed: inst, ..Default::default() };
        let got = kmeans(&points, &cfg).unwrap().inertia;
        let best = brute_force_inertia(&points);
        if got <= best * (1.0 + 1e-9) + 1e-12 {
            hits += 1;
        }
    }
    (hits >= 19, format!("{hits}/20 instances at the exhaustive optimum (need >= 19)"))
}

fn identity_at_init() -> (bool, String) {
    let net: Restorer<f32> = Restorer::new(RnConfig::default(), 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f32;
    let rs: Vec<Vec<f32>> = (0..10).map(|_| (0..REPR_DIM).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    for _ in 0..10 {
        let (h, w) = (rng.random_range(9..30), rng.random_range(9..30));
        let img = Image::new(h, w, 3, (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap();
        for r in &rs {
            let out = net.restore(&img, r).unwrap();
            worst = img.data().iter().zip(out.data()).fold(worst, |m, (a, b)| m.max((a - b).abs()));
        }
    }
    (worst == 0.0, format!("max |R - I| = {worst:e} over 10 images x 10 representations"))
}

fn metric_selftests() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Image::new(32, 32, 3, (0..32 * 32 * 3).map(|_| rng.random::<f32>()).collect()).unwrap();
    let s = ssim(&x, &x).unwrap();
    let base = Image::filled(16, 16, 3, 0.5).unwrap();
    let p20 = psnr(&Image::filled(16, 16, 3, 0.6).unwrap(), &base).unwrap();
    let p40 = psnr(&Image::filled(16, 16, 3, 0.51).unwrap(), &base).unwrap();
    let ok = (s - 1.0).abs() <= 1e-6 && (p20 - 20.0).abs() <= 0.01 && (p40 - 40.0).abs() <= 0.01;
    (ok, format!("SSIM(x,x) = {s:.9}, offset 0.1 -> {p20:.4} dB, offset 0.01 -> {p40:.4} dB"))
}

fn determinism_and_roundtrip(root: &Path) -> (bool, String) {
    let (ca, ma) = common::make_corpus(&root.join("a"), "gaussian_noise,gaussian_blur", 4, 4, 16, 31);
    let (_, mb) = common::make_corpus(&root.join("b"), "gaussian_noise,gaussian_blur", 4, 4, 16, 31);
    let manifests = ma == mb && CorpusManifest::read(&ca).unwrap() == ma;
    let samples = load_corpus(&ca).unwrap();
    let mut cfg = common::tiny_config(&ca);
    cfg.stage1_epochs = 2;
    cfg.tree_levels = 2;
    let (k1, l1) = train_stage1(&cfg, &samples).unwrap();
    let (_, l2) = train_stage1(&cfg, &samples).unwrap();
    let level1 = l1.levels[0] == l2.levels[0];
    let dloss = (l1.epochs[0].loss_total - l2.epochs[0].loss_total).abs();
    let path = root.join("k.ckpt");
    k1.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let (m0, m1) = (Model::from_checkpoint(&k1), Model::from_checkpoint(&back));
    let bitwise = samples.iter().all(|s| {
        let a = m0.restore(&s.pair.degraded).unwrap();
        let b = m1.restore(&s.pair.degraded).unwrap();
        a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    (
        manifests && level1 && dloss <= 1e-6 && bitwise,
        format!("manifests equal {manifests}, level-1 equal {level1}, |d epoch-0 loss| = {dloss:e}, reload bitwise {bitwise}"),
    )
}

fn kinds_of(samples: &[Sample]) -> std::collections::HashMap<String, String> {
    samples.iter().map(|s| (s.id.clone(), s.kind.to_string())).collect()
}

fn projected_silhouette(drn: &Drn<f32>, samples: &[Sample]) -> f64 {
    let imgs: Vec<&Image> = samples.iter().map(|s| &s.pair.degraded).collect();
    let z = embed(drn, &imgs, 16).unwrap();
    let pc: Vec<Vec<f64>> = pca_2d(&z).into_iter().map(|p| p.to_vec()).collect();
    let labels: Vec<String> = samples.iter().map(|s| s.kind.to_string()).collect();
    silhouette(&pc, &labels)
}

#[test]
fn acceptance() {
    let mut suite = Suite { outcomes: Vec::new() };
    let tmp = tempfile::tempdir().unwrap();

    let t = Instant::now();
    let (ok, d) = hierarchy_invariants();
    let el = t.elapsed();
    suite.record("1", "hierarchy invariants", ok && el < Duration::from_secs(1), format!("{d}; {:.3} s (limit 1 s)", secs(el)));

    let t = Instant::now();
    let (ok, d) = clustering_oracle();
    let el = t.elapsed();
    suite.record("2", "clustering oracle", ok && el < Duration::from_secs(5), format!("{d}; {:.3} s (limit 5 s)", secs(el)));

    let t = Instant::now();
    let cases = gradient_suite();
    let el = t.elapsed();
    let failed: Vec<String> = cases.iter().filter(|c| !c.passed()).map(|c| format!("{}={:.2e}", c.name, c.rel_err)).collect();
    let worst = cases.iter().map(|c| c.rel_err / c.tol).fold(0.0, f64::max);
    suite.record(
        "3",
        "gradient suite",
        failed.is_empty() && el < Duration::from_secs(120),
        format!("{} ops, worst error/tolerance {worst:.3}, failures {failed:?}; {:.1} s (limit 120 s)", cases.len(), secs(el)),
    );

    let t = Instant::now();
    let err = dsln_reduction_error(100, 3);
    let el = t.elapsed();
    suite.record(
        "4",
        "DSLN reduces to layer norm",
        err <= 1e-6 && el < Duration::from_secs(1),
        format!("max |dsln - ln| = {err:.2e} over 100 inputs (limit 1e-6); {:.3} s", secs(el)),
    );

    let t = Instant::now();
    let (ok, d) = identity_at_init();
    let el = t.elapsed();
    suite.record("5", "identity at init", ok && el < Duration::from_secs(10), format!("{d}; {:.2} s (limit 10 s)", secs(el)));

    // Desk corpus shared by criteria 6 to 9.
    let (corpus_dir, _) = common::make_corpus(&tmp.path().join("desk"), DESK_ROSTER, DESK_CLEAN, DESK_PER_TYPE, DESK_SIDE, DESK_SEED);
    let samples = load_corpus(&corpus_dir).unwrap();
    let cfg = desk_config(&corpus_dir);
    let (train, _) = split(&samples);
    let fresh = Drn::<f32>::new(cfg.drn_config(), derive_seed(cfg.seed, 1)).unwrap();
    let sil_before = projected_silhouette(&fresh, &train);

    let t = Instant::now();
    let full = ablate(AblationVariant::Full, &cfg, &samples).unwrap();
    let full_time = t.elapsed();
    let stage1_time = full.stage1_time;
    let kinds = kinds_of(&samples);
    let truth: Vec<&String> = full.stage1_ckpt.assignments.iter().map(|(id, _)| &kinds[id]).collect();
    let level2: Vec<&[usize]> = full.stage1_ckpt.assignments.iter().map(|(_, a)| &a.path[..2]).collect();
    let ari = adjusted_rand_index(&truth, &level2);
    let sil_after = projected_silhouette(&full.stage1_ckpt.drn, &train);
    suite.record(
        "6",
        "representation learning",
        ari >= 0.6 && stage1_time <= Duration::from_secs(900),
        format!(
            "level-2 ARI = {ari:.3} (need >= 0.6); projected silhouette {sil_before:.3} -> {sil_after:.3}; stage 1 ~{:.0} s (limit 900 s)",
            secs(stage1_time)
        ),
    );

    let t = Instant::now();
    let mut rows: Vec<AblationRow> = Vec::new();
    for v in [AblationVariant::NoFtb, AblationVariant::NoDsln, AblationVariant::NoGm, AblationVariant::Layers1] {
        rows.push(ablate(v, &cfg, &samples).unwrap());
    }
    let ablation_time = full_time + t.elapsed();
    let psnr_of = |v: AblationVariant| rows.iter().find(|r| r.variant == v).map(|r| r.stage2.psnr).unwrap();
    let p_full = full.stage2.psnr;
    let (p_ftb, p_dsln, p_gm, p_l1) =
        (psnr_of(AblationVariant::NoFtb), psnr_of(AblationVariant::NoDsln), psnr_of(AblationVariant::NoGm), psnr_of(AblationVariant::Layers1));
    let gain = p_full - p_ftb;
    let ok7 = gain >= 0.1 && p_full >= p_dsln.max(p_gm) - 0.05 && ablation_time <= Duration::from_secs(45 * 60);
    suite.record(
        "7",
        "ablation direction",
        ok7,
        format!(
            "full {p_full:.3} dB, no_ftb {p_ftb:.3} (gain {gain:+.3}, need >= +0.1), no_dsln {p_dsln:.3}, no_gm {p_gm:.3} (full must be >= max - 0.05); {:.0} s (limit 2700 s)",
            secs(ablation_time)
        ),
    );
    suite.record("8", "layer-depth trend", p_full >= p_l1, format!("layers_4 {p_full:.3} dB vs layers_1 {p_l1:.3} dB"));
    suite.record(
        "9",
        "two-stage gain",
        full.stage2.psnr >= full.stage1.psnr,
        format!(
            "validation PSNR stage 1 {:.3} dB -> stage 2 {:.3} dB (input {:.3} dB)",
            full.stage1.psnr, full.stage2.psnr, full.stage2.base_psnr
        ),
    );

    let t = Instant::now();
    let (ok, d) = metric_selftests();
    let el = t.elapsed();
    suite.record("10", "metric self-tests", ok && el < Duration::from_secs(1), format!("{d}; {:.3} s (limit 1 s)", secs(el)));

    let t = Instant::now();
    let (ok, d) = determinism_and_roundtrip(&tmp.path().join("det"));
    let el = t.elapsed();
    suite.record("11", "determinism and checkpoint round trip", ok && el < Duration::from_secs(120), format!("{d}; {:.1} s (limit 120 s)", secs(el)));

    let full_report = report(&evaluate(&full.stage2_ckpt, &split(&samples).1).unwrap());
    let mut err = std::io::stderr();
    let _ = err.write_all(amirnet::train::format_report(&full_report).as_bytes());

    let failed: Vec<String> = suite.outcomes.iter().filter(|o| !o.passed).map(|o| format!("{} {} ({})", o.id, o.name, o.detail)).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}
