//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//!
//! Run with `cargo test -p modswap-core --test acceptance -- --nocapture`
//! (output is printed either way since this target has no libtest harness).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use modswap::cca::{covariances, CcaModel, CcaOptions, CrossMap};
use modswap::costs::{self, CostParams};
use modswap::evaluate::cross_validate;
use modswap::features::image::Raster;
use modswap::features::{self, standardize, IMAGE_FEATURE_COUNT, TEXT_FEATURE_COUNT};
use modswap::ingest::{AttendedEvent, BBox, Modality, Viewport};
use modswap::pairing::{assign_fixation_indices, build_pairs, Dedup};
use modswap::pipeline::{self, PipelineConfig, ReferenceValues};
use modswap::synth::{brute_force_cca_2d, gen_attention_corpus, gen_correlated_pairs, SynthSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn gauss(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

fn criterion_1() -> Outcome {
    let p = CostParams::default();
    let text = costs::screen_text_cost_kb(&p);
    let checks = [
        ("text cost kB", text, 33.64),
        ("min saving %", costs::saving_pct(61.68, 33.64).unwrap(), 83.35),
        ("max saving %", costs::saving_pct(389.8, 33.64).unwrap(), 1058.74),
        ("achieved saving %", costs::achieved_saving_pct(389.8, 0.52, 33.64).unwrap(), 502.54),
        ("render before s", costs::render_time_s(389.8 * 0.52, 53.0).unwrap(), 30.6),
        ("LDC example s", costs::render_time_s(7.5, costs::LDC_KBPS).unwrap(), 10.0),
    ];
    let mut pass = checks.iter().all(|(_, got, want)| within(*got, *want, 0.01));
    let after = costs::render_time_s(33.64, 53.0).unwrap();
    pass &= (5.07 - 0.01..=5.08 + 0.01).contains(&after);
    let detail = checks
        .iter()
        .map(|(n, g, _)| format!("{n}={g:.4}"))
        .chain([format!("render after s={after:.4}")])
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, detail)
}

fn recovery(dim_t: usize, dim_i: usize) -> (Vec<f64>, f64) {
    let spec = SynthSpec {
        n_pairs: 5000,
        text_dim: dim_t,
        image_dim: dim_i,
        seed: 2024,
        ..SynthSpec::default()
    };
    let p = gen_correlated_pairs(&spec).unwrap();
    let d = dim_t.min(dim_i);
    let m = CcaModel::fit_raw(&p.text, &p.image, &CcaOptions { d, ..CcaOptions::default() }).unwrap();
    let rest = m.rho[3..].iter().cloned().fold(0.0, f64::max);
    (m.rho[..3].to_vec(), rest)
}

/// Null canonical correlations concentrate near this edge for p×q noise at n rows.
fn noise_floor(p: usize, q: usize, n: usize) -> f64 {
    let (c1, c2) = (p as f64 / n as f64, q as f64 / n as f64);
    ((c1 * (1.0 - c2)).sqrt() + (c2 * (1.0 - c1)).sqrt()).min(1.0)
}

fn criterion_2() -> Outcome {
    let targets = [0.95, 0.80, 0.50];
    let (top_low, rest_low) = recovery(10, 10);
    let (top_full, rest_full) = recovery(TEXT_FEATURE_COUNT, IMAGE_FEATURE_COUNT);
    let top_ok = |top: &[f64]| top.iter().zip(targets).all(|(g, w)| within(*g, w, 0.05));
    let pass = top_ok(&top_low) && rest_low < 0.15 && top_ok(&top_full);
    outcome(
        pass,
        format!(
            "10x10: top3={top_low:.3?} rest_max={rest_low:.3}; 70x91: top3={top_full:.3?} rest_max={rest_full:.3} \
             (sampling floor {:.3}, so the <0.15 bound is checked at 10x10)",
            noise_floor(TEXT_FEATURE_COUNT, IMAGE_FEATURE_COUNT, 5000)
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    let mut below = true;
    for _ in 0..10 {
        let z = gauss(&mut rng, 2000, 1);
        let a = gauss(&mut rng, 1, 2);
        let b = gauss(&mut rng, 1, 2);
        let scale: f64 = rng.random_range(0.3..2.0);
        let t = &z * &a + gauss(&mut rng, 2000, 2) * scale;
        let i = &z * &b + gauss(&mut rng, 2000, 2) * scale;
        let m = CcaModel::fit_raw(&t, &i, &CcaOptions { d: 1, lambda: 0.0, cross_map: CrossMap::Identity }).unwrap();
        let (grid, _, _) = brute_force_cca_2d(&t, &i, 0.5).unwrap();
        worst = worst.max((m.rho[0] - grid).abs());
        below &= m.rho[0] >= grid - 1e-3;
    }
    outcome(worst <= 1e-3 && below, format!("max |rho0 - grid| = {worst:.2e} over 10 problems"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(44);
    let (mut spec_ok, mut ortho_err, mut affine_err, mut swap_err) = (true, 0.0f64, 0.0f64, 0.0f64);
    let instances = 24;
    for _ in 0..instances {
        let n = rng.random_range(60..400);
        let p = rng.random_range(2..8);
        let q = rng.random_range(2..8);
        let lambda = if rng.random::<bool>() { 1e-4 } else { 1e-2 };
        let z = gauss(&mut rng, n, 2);
        let t = &z * gauss(&mut rng, 2, p) + gauss(&mut rng, n, p);
        let i = &z * gauss(&mut rng, 2, q) + gauss(&mut rng, n, q);
        let d = p.min(q);
        let opts = CcaOptions { d, lambda, cross_map: CrossMap::Identity };

        let (zt, _) = standardize(&t).unwrap();
        let (zi, _) = standardize(&i).unwrap();
        let m = CcaModel::fit(&zt, &zi, &opts).unwrap();
        spec_ok &= m.rho.iter().all(|r| (-1e-8..=1.0 + 1e-8).contains(r));

        let cov = covariances(&zt, &zi, lambda).unwrap();
        let gt = m.text_proj.transpose() * &cov.sigma_tt * &m.text_proj;
        let gi = m.image_proj.transpose() * &cov.sigma_ii * &m.image_proj;
        let id = DMatrix::<f64>::identity(d, d);
        ortho_err = ortho_err.max((gt - &id).amax()).max((gi - &id).amax());

        let swapped = CcaModel::fit(&zi, &zt, &opts).unwrap();
        for (a, b) in m.rho.iter().zip(&swapped.rho) {
            swap_err = swap_err.max((a - b).abs());
        }

        // Invertible affine maps; unregularized so the spectrum is exactly invariant.
        let exact = CcaOptions { lambda: 0.0, ..opts };
        let base = CcaModel::fit_raw(&t, &i, &exact).unwrap();
        let at = gauss(&mut rng, p, p) + DMatrix::identity(p, p) * 3.0;
        let ai = gauss(&mut rng, q, q) + DMatrix::identity(q, q) * 3.0;
        let shift_t = DMatrix::from_fn(n, p, |_, c| c as f64 * 7.0 - 2.0);
        let shift_i = DMatrix::from_fn(n, q, |_, c| 5.0 - c as f64);
        let moved = CcaModel::fit_raw(&(&t * at + shift_t), &(&i * ai + shift_i), &exact).unwrap();
        for (a, b) in base.rho.iter().zip(&moved.rho) {
            affine_err = affine_err.max((a - b).abs());
        }
    }
    let pass = spec_ok && ortho_err <= 1e-6 && affine_err <= 1e-6 && swap_err <= 1e-8;
    outcome(
        pass,
        format!(
            "{instances} instances: spectrum in [0,1]={spec_ok}, orthonormality {ortho_err:.1e}, \
             affine {affine_err:.1e}, swap {swap_err:.1e}"
        ),
    )
}

fn criterion_5(dir: &Path) -> Outcome {
    let mut corpora_ok = true;
    let mut total_pairs = 0;
    for seed in 0..4 {
        let spec = SynthSpec { noise_sigma: 0.0, seed, pages: 5, participants: 4, ..SynthSpec::default() };
        let (corpus, gt) = gen_attention_corpus(&spec, &dir.join(format!("c5_{seed}"))).unwrap();
        let (pairs, _) = pipeline::pair_corpus(&corpus, 100, Dedup::FirstFixation).unwrap();
        corpora_ok &= pairs.rows == gt.pairs;
        total_pairs += pairs.len();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(55);
    let mut sessions_ok = 0;
    for s in 0..100 {
        let n_text = rng.random_range(0..6);
        let n_img = rng.random_range(0..6);
        let mut events = Vec::new();
        let mut onset = 0;
        for _ in 0..rng.random_range(0..25) {
            let img = rng.random::<bool>();
            let (modality, pool) = if img { (Modality::Image, n_img) } else { (Modality::Text, n_text) };
            if pool == 0 {
                continue;
            }
            onset += rng.random_range(100..500);
            events.push(AttendedEvent {
                participant_id: format!("u{s}"),
                page_id: "w".into(),
                element_id: format!("{}{}", if img { "i" } else { "t" }, rng.random_range(0..pool)),
                modality,
                onset_ms: onset,
            });
        }
        let distinct = |m: Modality| {
            events
                .iter()
                .filter(|e| e.modality == m)
                .map(|e| e.element_id.as_str())
                .collect::<BTreeSet<_>>()
                .len()
        };
        let expected = distinct(Modality::Text).min(distinct(Modality::Image));
        let got = build_pairs(&assign_fixation_indices(&events, Dedup::FirstFixation).unwrap()).len();
        sessions_ok += usize::from(got == expected);
    }
    outcome(
        corpora_ok && sessions_ok == 100,
        format!("4 corpora ({total_pairs} pairs) match ground truth={corpora_ok}; {sessions_ok}/100 sessions match"),
    )
}

fn criterion_6(dir: &Path) -> Outcome {
    let manifest = pipeline::load_manifest(None).unwrap();
    let (mut n_text, mut n_img, mut hist_err) = (0, 0, 0.0f64);
    let mut lengths_ok = true;
    for seed in 0..2 {
        let spec = SynthSpec { seed: 60 + seed, pages: 4, participants: 1, ..SynthSpec::default() };
        let (corpus, _) = gen_attention_corpus(&spec, &dir.join(format!("c6_{seed}"))).unwrap();
        let table = features::extract_corpus_features(&corpus, &manifest).unwrap();
        lengths_ok &= table.text.len() == corpus.count(Modality::Text);
        lengths_ok &= table.image.len() == corpus.count(Modality::Image);
        for v in table.text.values() {
            lengths_ok &= v.len() == TEXT_FEATURE_COUNT;
            n_text += 1;
        }
        for v in table.image.values() {
            lengths_ok &= v.len() == IMAGE_FEATURE_COUNT;
            n_img += 1;
            for h in 0..4 {
                let start = 5 + 8 * h;
                hist_err = hist_err.max((v[start..start + 8].iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(66);
    let pixels: Vec<u8> = (0..12 * 9 * 3).map(|_| rng.random()).collect();
    let raster = Raster::new(12, 9, pixels).unwrap();
    let vp = Viewport::default();
    let v = features::extract_image_features(&raster, &raster, &BBox::new(10.0, 10.0, 200.0, 100.0), &vp).unwrap();
    let contrast_zero = v.contrast().iter().all(|c| *c == 0.0);
    outcome(
        lengths_ok && hist_err <= 1e-9 && contrast_zero,
        format!(
            "{n_text} text / {n_img} image vectors, lengths ok={lengths_ok}, histogram err {hist_err:.1e}, \
             zero contrast={contrast_zero}"
        ),
    )
}

fn criterion_7(dir: &Path) -> Outcome {
    let high = SynthSpec { fi_signal_strength: 1.0, noise_sigma: 0.1, seed: 70, ..SynthSpec::default() };
    let root = dir.join("c7_high");
    gen_attention_corpus(&high, &root).unwrap();
    let cfg = PipelineConfig {
        corpus_root: root,
        output_dir: dir.join("out7"),
        ..PipelineConfig::default()
    };
    let run = pipeline::run_pipeline(&cfg).unwrap();
    let f1_high = run.report.evaluation.micro_f1;

    // One participant per page keeps every query element out of the training folds.
    let zero = SynthSpec { fi_signal_strength: 0.0, pages: 80, participants: 1, seed: 71, ..SynthSpec::default() };
    let (corpus, _) = gen_attention_corpus(&zero, &dir.join("c7_zero")).unwrap();
    let (pairs, _) = pipeline::pair_corpus(&corpus, 100, Dedup::FirstFixation).unwrap();
    let data = pipeline::paired_features(&corpus, pairs, &pipeline::load_manifest(None).unwrap()).unwrap();
    let r = cross_validate(&data, &PipelineConfig::default().eval_options()).unwrap();
    let pooled = r.pooled_micro_f1;
    let chance = r.chance_micro_f1;
    let sd = (chance * (1.0 - chance) / r.n_queries as f64).sqrt();
    let pass = f1_high >= 0.8 && (pooled - chance).abs() <= 3.0 * sd;
    outcome(
        pass,
        format!(
            "high signal micro-F1={f1_high:.3}; zero signal micro-F1={pooled:.3} vs chance {chance:.3} \
             (3 sd = {:.3}, {} queries)",
            3.0 * sd,
            r.n_queries
        ),
    )
}

fn criterion_8(dir: &Path) -> Outcome {
    let reference = ReferenceValues::default();
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("out7").join(pipeline::REPORT_FILE)).unwrap()).unwrap();
    let cost: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("out7").join(pipeline::COST_FILE)).unwrap()).unwrap();
    let recorded = report["reference"]["leading_rho_at_d28"] == 0.9948
        && report["reference"]["micro_f1"] == 0.52
        && cost["reference"]["pairs"] == 14330
        && cost["reference"]["images"] == 139;
    outcome(
        recorded,
        format!(
            "NOT REPRODUCIBLE here: rho0@d28={}, micro-F1={}, |D|={}, {} images / {} kB need the original \
             eye-tracking corpus; recorded as reference values in report.json and cost.json={recorded}",
            reference.leading_rho_at_d28, reference.micro_f1, reference.pairs, reference.images, reference.image_total_kb
        ),
    )
}

fn criterion_9(dir: &Path) -> Outcome {
    let spec = SynthSpec { seed: 90, pages: 6, participants: 3, ..SynthSpec::default() };
    let root = dir.join("c9");
    gen_attention_corpus(&spec, &root).unwrap();
    let run = |out: &str| {
        let cfg = PipelineConfig {
            corpus_root: root.clone(),
            output_dir: dir.join(out),
            d: 8,
            ..PipelineConfig::default()
        };
        pipeline::run_pipeline(&cfg).unwrap()
    };
    run("out9a");
    run("out9b");
    let rerun = run("out9a");
    let files = [
        pipeline::MODEL_FILE,
        pipeline::MODEL_SIDECAR,
        pipeline::INDEX_FILE,
        pipeline::REPORT_FILE,
        pipeline::COST_FILE,
        pipeline::PAIRS_FILE,
        pipeline::FEATURES_FILE,
        pipeline::FEATURES_SIDECAR,
    ];
    let same: BTreeMap<&str, bool> = files
        .iter()
        .map(|f| (*f, fs::read(dir.join("out9a").join(f)).unwrap() == fs::read(dir.join("out9b").join(f)).unwrap()))
        .collect();
    let all_same = same.values().all(|b| *b);
    outcome(
        all_same && rerun.reused.len() == 5,
        format!("{} artifacts byte-identical={all_same}; cached rerun reused {:?}", files.len(), rerun.reused),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Check)> = vec![
        ("1 cost arithmetic", Box::new(criterion_1)),
        ("2 CCA synthetic recovery", Box::new(criterion_2)),
        ("3 brute-force oracle equivalence", Box::new(criterion_3)),
        ("4 CCA invariants", Box::new(criterion_4)),
        ("5 pairing correctness", Box::new(|| criterion_5(dir.path()))),
        ("6 feature schema", Box::new(|| criterion_6(dir.path()))),
        ("7 end-to-end retrieval", Box::new(|| criterion_7(dir.path()))),
        ("8 reference values", Box::new(|| criterion_8(dir.path()))),
        ("9 determinism", Box::new(|| criterion_9(dir.path()))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} criterion {name} [{:.2}s]: {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
