//! End-to-end acceptance run: metric fixtures, gradient and IoU oracles,
//! MixView properties, the sim-preset pipeline comparisons and CLI
//! reproducibility. Prints one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use aerodistill::curriculum::{
    comparison_row, interval_rungs, run_classmix_flat, run_progressive, run_pseudo_flat, train_ground, ComparisonRow,
    CurriculumConfig, StageData,
};
use aerodistill::metrics::{aggregate, confusion, evaluate_frames, iou, per_category_table, rai, relative_drop};
use aerodistill::mixview::{make_mask, mix_view, MixMask};
use aerodistill::pixelmodel::{init_params, loss_and_grad, Arch, PixelBatch};
use aerodistill::scenegen::{generate_dataset, CameraSpec, GeneratedSequence, Preset, WorldSpec};
use aerodistill::{classes_present, sample_ladder, ClassId, Image, LabelMap};
use aerodistill_cli::config::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, label: &str, pass: bool, detail: String, started: Instant) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{verdict} {label}: {detail} [{:.1}s]", started.elapsed().as_secs_f64());
        if !pass {
            self.failures += 1;
        }
    }
}

fn within(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn metric_fixtures() -> (bool, String) {
    let ground = [0.672, 0.616, 0.561, 0.519, 0.479, 0.446, 0.418, 0.388, 0.365];
    let ours = [0.680, 0.650, 0.625, 0.609, 0.594, 0.578, 0.564, 0.551, 0.539];
    let (gm, gs) = aggregate(&ground).unwrap();
    let (om, os) = aggregate(&ours).unwrap();
    let r1 = rai(0.524, 0.417).unwrap();
    let r2 = rai(0.400, 0.417).unwrap();
    let d1 = relative_drop(0.672, 0.365).unwrap();
    let d2 = relative_drop(0.680, 0.539).unwrap();
    let pass = within(gm, 0.496, 1e-3)
        && within(gs, 0.105, 1e-3)
        && within(om, 0.599, 1e-3)
        && within(os, 0.047, 1e-3)
        && within(r1, 25.7, 0.1)
        && within(r2, -4.1, 0.1)
        && within(d1, 45.7, 0.1)
        && within(d2, 20.7, 0.1);
    let detail = format!(
        "ground ({gm:.4}, {gs:.4}), ours ({om:.4}, {os:.4}), rai {r1:.2}% / {r2:.2}%, drop {d1:.2}% / {d2:.2}%"
    );
    (pass, detail)
}

fn gradient_check() -> (bool, String) {
    let eps = 1e-5;
    let arch = Arch::desk_default(6);
    let mut worst: f64 = 0.0;
    for draw in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xfd00 + draw);
        let mut params = init_params(arch, draw).unwrap();
        for w in params.weights_mut() {
            *w += rng.random_range(-0.05..0.05);
        }
        let img = Image::new(16, 12, (0..16 * 12 * 3).map(|_| rng.random()).collect()).unwrap();
        let mut batch = PixelBatch::new(arch.feature_dim());
        for _ in 0..8 {
            let (u, v) = (rng.random_range(0..16), rng.random_range(0..12));
            batch.push_pixel(&img, u, v, arch.patch, ClassId(rng.random_range(0..6)));
        }
        let (_, grad) = loss_and_grad(&params, &batch, 1e-4).unwrap();
        for i in 0..grad.len() {
            let mut p = params.clone();
            p.weights_mut()[i] += eps;
            let up = loss_and_grad(&p, &batch, 1e-4).unwrap().0;
            p.weights_mut()[i] -= 2.0 * eps;
            let down = loss_and_grad(&p, &batch, 1e-4).unwrap().0;
            let numeric = (up - down) / (2.0 * eps);
            let err = (grad[i] - numeric).abs() / (grad[i].abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    (worst < 1e-4, format!("max relative error {worst:.2e} over 10 draws of {} weights", arch.param_count()))
}

fn iou_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x10);
    let map = |rng: &mut ChaCha8Rng| LabelMap::new(8, 8, (0..64).map(|_| rng.random_range(0..4u8)).collect()).unwrap();
    let mut worst: f64 = 0.0;
    let mut defined_mismatch = 0;
    for _ in 0..1000 {
        let (pred, truth) = (map(&mut rng), map(&mut rng));
        let report = iou(&confusion(&pred, &truth, 4).unwrap()).unwrap();
        let mut sum = 0.0;
        let mut present = 0;
        for k in 0..4u8 {
            let pairs = || pred.labels().iter().zip(truth.labels());
            let inter = pairs().filter(|(&p, &t)| p == k && t == k).count();
            let union = pairs().filter(|(&p, &t)| p == k || t == k).count();
            match (union > 0, report.per_class[k as usize]) {
                (true, Some(v)) => {
                    let want = inter as f64 / union as f64;
                    worst = worst.max((v - want).abs());
                    sum += want;
                    present += 1;
                }
                (false, None) => {}
                _ => defined_mismatch += 1,
            }
        }
        worst = worst.max((report.mean - sum / present as f64).abs());
    }
    (worst < 1e-12 && defined_mismatch == 0, format!("1000 pairs, max deviation {worst:.1e}"))
}

fn mixview_properties() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x313);
    let mut violations = 0;
    for _ in 0..500 {
        let (w, h) = (rng.random_range(1..10), rng.random_range(1..10));
        let classes = rng.random_range(2..7u8);
        let view = |rng: &mut ChaCha8Rng| {
            let img = Image::new(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap();
            let lab = LabelMap::new(w, h, (0..w * h).map(|_| rng.random_range(0..classes)).collect()).unwrap();
            (img, lab)
        };
        let (x, hat_y) = view(&mut rng);
        let (x_i, tilde_y) = view(&mut rng);
        let present = classes_present(&tilde_y);
        if present.len() < 2 {
            violations += usize::from(make_mask(&tilde_y, &mut rng).is_ok());
            continue;
        }
        let mask = make_mask(&tilde_y, &mut rng).unwrap();
        violations += usize::from(mask.selected().len() != present.len().div_ceil(2) || !mask.selected().is_subset(&present));
        let mixed = mix_view(&x, &hat_y, &x_i, &tilde_y, &mask).unwrap();
        for p in 0..w * h {
            let (u, v) = (p % w, p / w);
            let keep = mask.get(u, v);
            let (src, src_y) = if keep { (&x_i, &tilde_y) } else { (&x, &hat_y) };
            violations += usize::from(keep != mask.selected().contains(&tilde_y.get(u, v)));
            violations += usize::from(mixed.image.get(u, v) != src.get(u, v) || mixed.labels.get(u, v) != src_y.get(u, v));
        }
        let all = mix_view(&x, &hat_y, &x_i, &tilde_y, &MixMask::for_classes(&tilde_y, present)).unwrap();
        let none = mix_view(&x, &hat_y, &x_i, &tilde_y, &MixMask::for_classes(&tilde_y, BTreeSet::new())).unwrap();
        violations += usize::from(all.image != x_i || all.labels != tilde_y);
        violations += usize::from(none.image != x || none.labels != hat_y);
    }
    let mut worst: f64 = 0.0;
    for k in 2..=6usize {
        let labels = LabelMap::new(k, 1, (0..k as u8).collect()).unwrap();
        let mut hits = vec![0usize; k];
        for _ in 0..10_000 {
            for c in make_mask(&labels, &mut rng).unwrap().selected() {
                hits[c.index()] += 1;
            }
        }
        let expected = k.div_ceil(2) as f64 / k as f64;
        for n in hits {
            worst = worst.max((n as f64 / 10_000.0 - expected).abs());
        }
    }
    let pass = violations == 0 && worst <= 0.02;
    (pass, format!("{violations} property violations in 500 cases; selection frequency off by at most {worst:.4}"))
}

fn fmt_row(r: &ComparisonRow) -> String {
    let v: Vec<String> = r.rows.iter().map(|x| format!("{:.3}", x.miou)).collect();
    format!("{:<14} mean {:.3} std {:.3} | {}", r.name, r.mean, r.std, v.join(" "))
}

struct Pipeline {
    sequences: Vec<GeneratedSequence>,
    data: StageData,
    cfg: CurriculumConfig,
}

impl Pipeline {
    fn eval(&self) -> &[GeneratedSequence] {
        &self.sequences[1..]
    }
}

fn hashes(root: &Path, sub: &str) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let dir = root.join(sub);
    let Ok(entries) = fs::read_dir(&dir) else { return out };
    for e in entries {
        let p = e.unwrap().path();
        if p.is_file() {
            out.insert(format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap());
        }
    }
    out
}

/// Two runs from one config file; the outputs land in the same place and are
/// moved aside between runs.
fn cli_determinism(tmp: &Path) -> (bool, String) {
    let bin = env!("CARGO_BIN_EXE_aerodistill");
    let work = tmp.join("work");
    let mut cfg = RunConfig { dataset: work.join("data"), out: work.join("run"), ..RunConfig::default() };
    cfg.ground.iterations = 400;
    cfg.stage.iterations = 40;
    let cfg_file = tmp.join("run.json");
    fs::write(&cfg_file, cfg.to_json()).unwrap();

    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let gen = Command::new(bin)
            .args(["gen", "--preset", "sim", "--max-height", "4", "--rungs", "4", "--frames", "3", "--random-frames", "2"])
            .arg("--out")
            .arg(work.join("data"))
            .output()
            .unwrap();
        assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
        let out = Command::new(bin).arg("--config").arg(&cfg_file).arg("distill").output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let root = tmp.join(name);
        fs::rename(&work, &root).unwrap();
        let mut files = BTreeMap::new();
        files.insert("manifest.json".to_string(), fs::read(root.join("data/manifest.json")).unwrap());
        files.extend(hashes(&root.join("run"), "checkpoints"));
        files.extend(hashes(&root.join("run"), "metrics"));
        runs.push(files);
    }
    let kinds_ok = runs[0].keys().any(|k| k.starts_with("checkpoints/")) && runs[0].keys().any(|k| k.starts_with("metrics/"));
    (kinds_ok && runs[0] == runs[1], format!("{} files compared byte for byte (manifest, checkpoints, metric CSVs)", runs[0].len()))
}

fn main() -> ExitCode {
    let mut report = Report { failures: 0 };
    let t = Instant::now();

    let (pass, detail) = metric_fixtures();
    report.record("criterion 1 (metric fixtures)", pass, detail, t);
    let t = Instant::now();
    let (pass, detail) = gradient_check();
    report.record("criterion 2 (gradient check)", pass, detail, t);
    let t = Instant::now();
    let (pass, detail) = iou_oracle();
    report.record("criterion 3 (IoU oracle)", pass, detail, t);
    let t = Instant::now();
    let (pass, detail) = mixview_properties();
    report.record("criterion 4 (MixView properties)", pass, detail, t);

    // sim preset pipeline, default configuration
    let t = Instant::now();
    let world = WorldSpec::preset(Preset::Sim, 7);
    let sequences = generate_dataset(&world, &sample_ladder(10.0, 10).unwrap(), 40, &CameraSpec::desk_default(1.0)).unwrap();
    let data = StageData::from_sequences(&sequences).unwrap();
    let p = Pipeline { sequences, data, cfg: CurriculumConfig::default() };
    let classes = Preset::Sim.class_count();
    let (n1, ground_record) = train_ground(&p.data.ground, classes, &p.cfg).unwrap();
    let ground = comparison_row("ground_only", &n1, p.eval()).unwrap();
    println!("  {}", fmt_row(&ground));
    let m: Vec<f64> = ground.rows.iter().map(|r| r.miou).collect();
    let inversions: Vec<f64> = m.windows(2).filter(|w| w[1] > w[0]).map(|w| w[1] - w[0]).collect();
    let monotone = inversions.len() <= 1 && inversions.iter().all(|&d| d <= 0.01);
    let span = m[0] - m[m.len() - 1];
    report.record(
        "criterion 5 (ground-only degrades with height)",
        monotone && span >= 0.10,
        format!("{} inversion(s), rung 2 minus rung 10 = {span:.3}", inversions.len()),
        t,
    );

    let t = Instant::now();
    let own = comparison_row("own", &n1, &p.sequences[..1]).unwrap();
    let rows = &ground_record.stages[0].rows;
    let head = rows[..100].iter().map(|r| r.loss_total).sum::<f64>() / 100.0;
    let tail = rows[rows.len() - 100..].iter().map(|r| r.loss_total).sum::<f64>() / 100.0;
    let best_held_out = m.iter().copied().fold(f64::MIN, f64::max);
    report.record(
        "check (ground model)",
        own.mean >= 0.8 && tail <= 0.5 * head && own.mean >= best_held_out,
        format!("own-rung mIoU {:.3} (best held-out {best_held_out:.3}), loss {head:.3} -> {tail:.3}", own.mean),
        t,
    );

    let t = Instant::now();
    let progressive = run_progressive(&n1, &p.data, &p.cfg).unwrap();
    let prog = comparison_row("progressive", &progressive.model, p.eval()).unwrap();
    let (pseudo_model, _) = run_pseudo_flat(&n1, &p.data, &p.cfg).unwrap();
    let pseudo = comparison_row("pseudo_flat", &pseudo_model, p.eval()).unwrap();
    let (classmix_model, _) = run_classmix_flat(&n1, &p.data, &p.cfg).unwrap();
    let classmix = comparison_row("classmix_flat", &classmix_model, p.eval()).unwrap();
    for row in [&prog, &pseudo, &classmix] {
        println!("  {}", fmt_row(row));
    }
    report.record(
        "criterion 6 (method efficacy)",
        prog.mean >= ground.mean + 0.03 && prog.std < ground.std && pseudo.mean <= prog.mean && classmix.mean <= prog.mean,
        format!(
            "progressive {:.3}/{:.3} vs ground-only {:.3}/{:.3}; pseudo_flat {:.3}, classmix_flat {:.3}",
            prog.mean, prog.std, ground.mean, ground.std, pseudo.mean, classmix.mean
        ),
        t,
    );

    let t = Instant::now();
    let mut better_than_n1 = 0;
    let mut compared = 0;
    for set in progressive.initial_pseudo.iter().filter(|s| s.rung >= 2) {
        let seq = &p.sequences[set.rung];
        let nn = iou(&evaluate_pseudo(set, seq, classes)).unwrap().mean;
        let from_n1 = iou(&evaluate_frames(&n1, seq.frames.iter().map(|(i, l)| (i, l))).unwrap()).unwrap().mean;
        compared += 1;
        better_than_n1 += usize::from(nn > from_n1);
    }
    report.record(
        "check (nearest-rung pseudo-labels beat ground-model labels)",
        better_than_n1 == compared,
        format!("{better_than_n1} of {compared} rungs"),
        t,
    );

    let t = Instant::now();
    let frames = || p.eval().iter().flat_map(|s| s.frames.iter().map(|(i, l)| (i, l)));
    let counts = vec![
        evaluate_frames(&n1, frames()).unwrap(),
        evaluate_frames(&progressive.model, frames()).unwrap(),
    ];
    let palette = Preset::Sim.palette();
    let table = per_category_table(&palette, &counts).unwrap();
    let statics = ["Road", "Plant", "Building", "Sky"];
    let gaps: Vec<(String, f64, f64)> = table
        .iter()
        .map(|l| (l.class.clone(), l.share, (l.iou[1].unwrap_or(0.0) - l.iou[0].unwrap_or(0.0)).abs()))
        .collect();
    let top_static = gaps.iter().find(|g| statics.contains(&g.0.as_str())).unwrap();
    let smallest = gaps.iter().map(|g| g.2).fold(f64::INFINITY, f64::min);
    let listing: Vec<String> = gaps.iter().map(|(c, s, g)| format!("{c} {s:.3}:{g:.3}")).collect();
    report.record(
        "check (largest static class has the smallest gap)",
        top_static.2 <= smallest,
        format!("share:gap {}", listing.join(", ")),
        t,
    );

    let t = Instant::now();
    let interval3 = run_progressive(&n1, &p.data.restrict(&interval_rungs(10, 3).unwrap()).unwrap(), &p.cfg).unwrap();
    let interval3 = comparison_row("interval_3", &interval3.model, p.eval()).unwrap();
    let no_mixview = run_progressive(&n1, &p.data, &CurriculumConfig { mixview: false, ..p.cfg.clone() }).unwrap();
    let no_mixview = comparison_row("no_mixview", &no_mixview.model, p.eval()).unwrap();
    let no_nnpl = run_progressive(&n1, &p.data, &CurriculumConfig { nnpl: false, ..p.cfg.clone() }).unwrap();
    let no_nnpl = comparison_row("no_nnpl", &no_nnpl.model, p.eval()).unwrap();
    for row in [&interval3, &no_mixview, &no_nnpl] {
        println!("  {}", fmt_row(row));
    }
    let interval_ok = prog.mean >= interval3.mean + 0.01;
    let mixview_ok = prog.mean >= no_mixview.mean;
    let nnpl_ok = no_nnpl.mean < prog.mean && no_nnpl.mean < no_mixview.mean;
    report.record(
        "criterion 7 (ablation ordering)",
        interval_ok && mixview_ok && nnpl_ok,
        format!(
            "interval_1 {:.3} vs interval_3 {:.3} [{}]; full {:.3} vs no_mixview {:.3} [{}]; no_nnpl {:.3} lowest [{}]",
            prog.mean,
            interval3.mean,
            ok(interval_ok),
            prog.mean,
            no_mixview.mean,
            ok(mixview_ok),
            no_nnpl.mean,
            ok(nnpl_ok)
        ),
        t,
    );

    let t = Instant::now();
    let tmp = tempfile::TempDir::new().unwrap();
    let (pass, detail) = cli_determinism(tmp.path());
    report.record("criterion 8 (reproducible CLI outputs)", pass, detail, t);

    if report.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} failing", report.failures);
        ExitCode::FAILURE
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "not met"
    }
}

fn evaluate_pseudo(
    set: &aerodistill::labeling::PseudoLabeledSet,
    seq: &GeneratedSequence,
    classes: usize,
) -> aerodistill::metrics::ConfusionCounts {
    let mut counts = aerodistill::metrics::ConfusionCounts::new(classes);
    for item in &set.items {
        counts.accumulate(&item.label, &seq.frames[item.sample_id as usize].1).unwrap();
    }
    counts
}
