//! Acceptance run: criteria 1 to 8, one result line each. Exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;

use semcom_core::arrange::{arrange, assignment, inverse_arrange, sort_desc_with_indices};
use semcom_core::channel::{channel_stats, SosConfig, StatsPlan};
use semcom_core::codec::{train_codec, Codec, CodecTrainConfig, FeatureTensor, Geometry, Image};
use semcom_core::data::{gen_synthetic_dataset, split_train_test};
use semcom_core::distill::{build_distill_dataset, student_infer, train_student, StudentConfig, Students};
use semcom_core::eval::{
    compare, run_eval_sweep, write_csv, write_summary_json, write_traces_jsonl, Models, SchemeId, SweepConfig,
};
use semcom_core::gradcheck::{check, composite_cases, primitive_cases};
use semcom_core::predictor::{
    evaluate_forecast, one_step_nmse, spread_positions, train_predictor, Predictor, PredictorTrainConfig,
};
use semcom_core::priority::{
    compute_robustness, pga_noise, teacher_priority, LinearDecoder, NoiseBudget, TeacherSettings,
};
use semcom_core::rng::rng_for;
use semcom_core::tensor::Tensor;

const SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, elapsed: Duration, out: &Outcome) {
    println!(
        "criterion {id} {:<4} {name} ({:.1}s): {}",
        if out.pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        out.detail
    );
}

fn timed(limit_s: f64, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let t = Instant::now();
    let mut out = f();
    let el = t.elapsed();
    if el.as_secs_f64() >= limit_s {
        out.pass = false;
        out.detail
            .push_str(&format!("; runtime {:.1}s over {limit_s}s", el.as_secs_f64()));
    }
    (out, el)
}

fn gradient_fidelity() -> Outcome {
    let mut worst = (String::new(), 0.0f64);
    let mut n = 0;
    for case in primitive_cases(SEED).iter().chain(&composite_cases(SEED)) {
        let r = check(case).expect("gradient check runs");
        n += 1;
        if r.max_rel_err >= worst.1 {
            worst = (r.name, r.max_rel_err);
        }
    }
    Outcome {
        pass: worst.1 < 1e-5,
        detail: format!("{n} cases, worst {} rel err {:.2e}", worst.0, worst.1),
    }
}

fn channel_statistics() -> Outcome {
    let plan = StatsPlan::default();
    let st = channel_stats(SosConfig::default(), &plan, SEED).expect("channel stats");
    let env_target = std::f64::consts::PI.sqrt() / 2.0;
    let env_dev = (st.envelope_mean / env_target - 1.0).abs();
    let dev = st.max_autocorr_deviation();
    let pass = (0.98..=1.02).contains(&st.mean_power)
        && env_dev <= 0.02
        && st.phase_p_value > 0.01
        && dev <= 0.05
        && plan.autocorr_realizations >= 200
        && st.samples >= 100_000;
    Outcome {
        pass,
        detail: format!(
            "E|h|^2 {:.4}, E|h| off by {:.2}%, phase p {:.3}, autocorr dev {:.4} over {} lags",
            st.mean_power,
            100.0 * env_dev,
            st.phase_p_value,
            dev,
            st.autocorr_curve.len()
        ),
    }
}

/// Surrogate distortion: slot `j` costs `priority[order[j]] * f(|h_j|)` with `f` decreasing.
fn surrogate(priority: &[f64], amps: &[f64], order: &[usize]) -> f64 {
    order
        .iter()
        .enumerate()
        .map(|(j, &k)| priority[k] / (1.0 + amps[j] * amps[j]))
        .sum()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn arrangement_algebra() -> Outcome {
    let mut rng = rng_for(SEED, &[3]);
    let mut failures = 0;
    for _ in 0..10_000 {
        let c = rng.random_range(1..=32);
        let a = FeatureTensor::new(Tensor::uniform(&[c, 2, 3], 1.0, &mut rng)).unwrap();
        let xi: Vec<f64> = (0..c).map(|_| rng.random()).collect();
        let h: Vec<Complex64> = (0..c)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let (arr, eta) = arrange(&a, &xi, &h).unwrap();
        let mut seen = vec![false; c];
        eta.as_slice().iter().for_each(|&k| seen[k] = true);
        let amps: Vec<f64> = h.iter().map(|z| z.norm()).collect();
        let top_ok = eta.as_slice()[sort_desc_with_indices(&amps)[0]] == sort_desc_with_indices(&xi)[0];
        if inverse_arrange(&arr, &eta).unwrap() != a || !seen.iter().all(|&s| s) || !top_ok {
            failures += 1;
        }
    }
    let mut suboptimal = 0;
    let mut brute = 0;
    for c in 2..=6 {
        let perms = permutations(c);
        for _ in 0..200 {
            let xi: Vec<f64> = (0..c).map(|_| rng.random()).collect();
            let amps: Vec<f64> = (0..c).map(|_| rng.random::<f64>() * 2.0).collect();
            let eta = assignment(&xi, &amps).unwrap();
            let got = surrogate(&xi, &amps, eta.as_slice());
            let best = perms
                .iter()
                .map(|p| surrogate(&xi, &amps, p))
                .fold(f64::INFINITY, f64::min);
            brute += 1;
            if got > best + 1e-12 {
                suboptimal += 1;
            }
        }
    }
    Outcome {
        pass: failures == 0 && suboptimal == 0,
        detail: format!("{failures}/10000 round-trip failures, {suboptimal}/{brute} brute-force cases suboptimal"),
    }
}

/// Closed-form maximum of `|r + M d|^2` over `|d| <= eps` via the secular equation.
fn trust_region_max(m: &DMatrix<f64>, r: &DVector<f64>, eps: f64) -> f64 {
    let q = m.transpose() * m;
    let eig = SymmetricEigen::new(q);
    let g = eig.eigenvectors.transpose() * (m.transpose() * r);
    let lmax = eig.eigenvalues.max();
    let norm_at = |lam: f64| {
        g.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(gi, li)| (gi / (lam - li)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let (mut lo, mut hi) = (lmax + 1e-15, lmax + g.norm() / eps + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm_at(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    let dz = DVector::from_iterator(
        g.len(),
        g.iter().zip(eig.eigenvalues.iter()).map(|(gi, li)| gi / (lam - li)),
    );
    let d = &eig.eigenvectors * dz;
    (r + m * d).norm_squared()
}

fn linear_toy_gaps() -> (f64, usize) {
    let shape = [4, 2, 2];
    let n = 16;
    let out = 12;
    let mut worst = 0.0f64;
    let mut cases = 0;
    for seed in 0..20u64 {
        let mut rng = rng_for(SEED, &[4, seed]);
        let dec = LinearDecoder {
            shape,
            w: Tensor::uniform(&[out, n], 0.5, &mut rng),
            b: Tensor::uniform(&[out], 0.1, &mut rng),
        };
        let a = FeatureTensor::new(Tensor::uniform(&shape, 1.0, &mut rng)).unwrap();
        let s = Image::new(2, 2, (0..out).map(|_| rng.random()).collect()).unwrap();
        let wm = DMatrix::from_row_slice(out, n, dec.w.data());
        let av = DVector::from_column_slice(a.tensor().data());
        let resid = &wm * &av + DVector::from_column_slice(dec.b.data()) - DVector::from_column_slice(s.pixels());
        let budget = NoiseBudget::default();
        for k in 0..shape[0] {
            let m = wm.columns(4 * k, 4).into_owned();
            let eps = budget.eps_for(a.feature(k));
            let best = trust_region_max(&m, &resid, eps) / out as f64;
            let got = pga_noise(&a, k, &s, &dec, eps, budget.steps, budget.step_fraction * eps, &mut rng).unwrap();
            let gain_best = best - got.base_loss;
            let gap = (best - got.loss) / gain_best.max(1e-300);
            worst = worst.max(gap);
            cases += 1;
        }
    }
    (worst, cases)
}

fn priority_pipeline(codec: &Codec, test: &[Image]) -> Outcome {
    let budget = NoiseBudget::default();
    let (mut total, mut increased, mut outside) = (0, 0, 0);
    for (i, s) in test.iter().take(100).enumerate() {
        let a = codec.encode(s).unwrap();
        let rob = compute_robustness(&a, s, &codec.decoder, &budget, rng_seed(i)).unwrap();
        for noise in &rob.noises {
            total += 1;
            let norm = noise.delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > noise.eps * (1.0 + 1e-12) {
                outside += 1;
            }
            if noise.loss > noise.base_loss {
                increased += 1;
            }
        }
    }
    let frac = increased as f64 / total as f64;
    let (gap, cases) = linear_toy_gaps();
    Outcome {
        pass: outside == 0 && frac >= 0.99 && gap <= 0.01,
        detail: format!(
            "{outside}/{total} outside the ball, loss increased on {:.2}%, linear toy worst gap {:.3}% of the attainable gain over {cases} features",
            100.0 * frac,
            100.0 * gap
        ),
    }
}

fn rng_seed(i: usize) -> u64 {
    semcom_core::rng::derive_seed(SEED, &[44, i as u64])
}

fn predictor_quality() -> (Outcome, Predictor) {
    let cfg = PredictorTrainConfig {
        seed: SEED,
        ..Default::default()
    };
    let trained = train_predictor(&cfg).expect("predictor training");
    let hold = &trained.holdout;
    let one = one_step_nmse(
        &trained.predictor,
        hold,
        &spread_positions(&hold.window_positions(1), 4000),
    )
    .unwrap();
    let fc = evaluate_forecast(&trained.predictor, hold, 500, 24).unwrap();
    let out = Outcome {
        pass: one < 0.1 && fc.win_rate_vs_persistence >= 0.8 && fc.windows == 500,
        detail: format!(
            "normalized Doppler {:.3}, one-step NMSE {:.2e}, 24-step win rate vs persistence {:.3} on {} windows",
            cfg.sos.normalized_doppler(),
            one,
            fc.win_rate_vs_persistence,
            fc.windows
        ),
    };
    (out, trained.predictor)
}

fn codec_fixture() -> (Codec, Vec<Image>) {
    let images = gen_synthetic_dataset(2000, &Geometry::DESK, SEED).unwrap();
    let (train, test) = split_train_test(images, 0.1);
    let cfg = CodecTrainConfig {
        seed: SEED,
        ..Default::default()
    };
    let (codec, _) = train_codec(&train, Geometry::DESK, &cfg).expect("codec training");
    (codec, test)
}

fn distillation(codec: &Codec) -> (Outcome, Students) {
    let images = gen_synthetic_dataset(2200, &Geometry::DESK, SEED + 1).unwrap();
    let settings = TeacherSettings::default();
    let (wds, rds) = build_distill_dataset(codec, &images, &settings, 200.0 / 2200.0, SEED).unwrap();
    let cfg = StudentConfig {
        seed: SEED,
        ..Default::default()
    };
    let (wnet, wr) = train_student(&wds, &cfg).unwrap();
    let (rnet, rr) = train_student(&rds, &cfg).unwrap();
    let students = Students { wnet, rnet };

    let probe = &images[images.len() - 50..];
    let feats: Vec<FeatureTensor> = probe.iter().map(|s| codec.encode(s).unwrap()).collect();
    let t = Instant::now();
    for (i, (a, s)) in feats.iter().zip(probe).enumerate() {
        teacher_priority(a, s, &codec.decoder, &settings, rng_seed(i)).unwrap();
    }
    let teacher = t.elapsed().as_secs_f64();
    let t = Instant::now();
    for a in &feats {
        student_infer(a, &students, settings.weights).unwrap();
    }
    let student = t.elapsed().as_secs_f64();
    let speedup = teacher / student.max(1e-12);

    let (wm, ws) = (wr.holdout_mse.unwrap(), wr.holdout_spearman.unwrap());
    let (rm, rs) = (rr.holdout_mse.unwrap(), rr.holdout_spearman.unwrap());
    let out = Outcome {
        pass: wm < 0.05 && rm < 0.05 && ws >= 0.8 && rs >= 0.8 && speedup >= 10.0,
        detail: format!(
            "WNet holdout MSE {wm:.4} Spearman {ws:.3}; RNet holdout MSE {rm:.4} Spearman {rs:.3}; student {speedup:.0}x faster"
        ),
    };
    (out, students)
}

fn directional_gain(codec: &Codec, predictor: &Predictor, students: &Students, test: &[Image]) -> Outcome {
    let cfg = SweepConfig {
        snr_test: vec![0.0, 5.0, 10.0],
        link: semcom_core::eval::LinkSettings {
            seed: SEED,
            ..Default::default()
        },
        ..Default::default()
    };
    let models = Models {
        codec,
        predictor: Some(predictor),
        students: Some(students),
    };
    let res = run_eval_sweep(&cfg, &models, &test[..200]).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for &snr in &cfg.snr_test {
        let vs_random = compare(&res.records, SchemeId::KcFp, SchemeId::RandomOrder, snr);
        let vs_djscc = compare(&res.records, SchemeId::KcFp, SchemeId::Djscc, snr);
        let mean = |s: SchemeId| {
            res.summary
                .aggregates
                .iter()
                .find(|a| a.scheme == s && a.snr_db == snr)
                .unwrap()
                .mean_psnr
        };
        let (kc, pc, dj) = (mean(SchemeId::KcFp), mean(SchemeId::PcFp), mean(SchemeId::Djscc));
        let between = dj <= pc && pc <= kc;
        let ok = vs_random.mean_diff > 0.0
            && vs_random.p_value < 0.05
            && vs_djscc.mean_diff > 0.0
            && vs_djscc.p_value < 0.05
            && between;
        pass &= ok;
        parts.push(format!(
            "{snr} dB: KC-RAND {:+.3} (p {:.4}), KC-DJSCC {:+.3} (p {:.4}), DJSCC {dj:.3} <= PC {pc:.3} <= KC {kc:.3} {}",
            vs_random.mean_diff,
            vs_random.p_value,
            vs_djscc.mean_diff,
            vs_djscc.p_value,
            if between { "holds" } else { "violated" }
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

/// Reduced versions of every pipeline, writing the files each criterion produces.
fn write_artifacts(dir: &Path) {
    let mut grad = String::new();
    for case in primitive_cases(SEED).iter().chain(&composite_cases(SEED)) {
        grad.push_str(&format!("{:?}\n", check(case).unwrap()));
    }
    fs::write(dir.join("gradcheck.txt"), grad).unwrap();

    let plan = StatsPlan {
        realizations: 2000,
        autocorr_realizations: 20,
        autocorr_len: 200,
        ..Default::default()
    };
    let st = channel_stats(SosConfig::default(), &plan, SEED).unwrap();
    fs::write(dir.join("channel_stats.json"), serde_json::to_vec(&st).unwrap()).unwrap();

    let mut rng = rng_for(SEED, &[8]);
    let xi: Vec<f64> = (0..24).map(|_| rng.random()).collect();
    let amps: Vec<f64> = (0..24).map(|_| rng.random()).collect();
    fs::write(
        dir.join("order.json"),
        serde_json::to_vec(&assignment(&xi, &amps).unwrap()).unwrap(),
    )
    .unwrap();

    let images = gen_synthetic_dataset(48, &Geometry::DESK, SEED).unwrap();
    let (train, test) = split_train_test(images, 0.25);
    let ccfg = CodecTrainConfig {
        epochs: 2,
        seed: SEED,
        ..Default::default()
    };
    let (codec, _) = train_codec(&train, Geometry::DESK, &ccfg).unwrap();
    codec.save(dir.join("codec.bin")).unwrap();

    let pcfg = PredictorTrainConfig {
        num_sequences: 10,
        sequence_len: 80,
        epochs: 1,
        windows_per_epoch: 256,
        seed: SEED,
        ..Default::default()
    };
    let predictor = train_predictor(&pcfg).unwrap().predictor;
    predictor.save(dir.join("predictor.bin")).unwrap();

    let (wds, rds) = build_distill_dataset(&codec, &test[..6], &TeacherSettings::default(), 0.5, SEED).unwrap();
    wds.save(dir.join("w.dist")).unwrap();
    rds.save(dir.join("r.dist")).unwrap();
    let scfg = StudentConfig {
        epochs: 5,
        seed: SEED,
        ..Default::default()
    };
    let students = Students {
        wnet: train_student(&wds, &scfg).unwrap().0,
        rnet: train_student(&rds, &scfg).unwrap().0,
    };
    students.wnet.save(dir.join("wnet.bin")).unwrap();
    students.rnet.save(dir.join("rnet.bin")).unwrap();

    let cfg = SweepConfig {
        snr_test: vec![0.0, 10.0],
        bootstrap_resamples: 100,
        ..Default::default()
    };
    let models = Models {
        codec: &codec,
        predictor: Some(&predictor),
        students: Some(&students),
    };
    let res = run_eval_sweep(&cfg, &models, &test[..4]).unwrap();
    let mut csv = Vec::new();
    write_csv(&res.summary.aggregates, &mut csv).unwrap();
    fs::write(dir.join("results.csv"), csv).unwrap();
    let mut json = Vec::new();
    write_summary_json(&res.summary, &mut json).unwrap();
    fs::write(dir.join("summary.json"), json).unwrap();
    let mut traces = Vec::new();
    write_traces_jsonl(&res.records, &mut traces).unwrap();
    fs::write(dir.join("traces.jsonl"), traces).unwrap();
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_artifacts(a.path());
    write_artifacts(b.path());
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| fs::read(a.path().join(n)).ok() != fs::read(b.path().join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    Outcome {
        pass: differing.is_empty() && !names.is_empty(),
        detail: format!("{} files compared, differing: {:?}", names.len(), differing),
    }
}

fn main() -> ExitCode {
    let mut all = true;
    let mut run = |id: usize, name: &str, (out, el): (Outcome, Duration)| {
        report(id, name, el, &out);
        all &= out.pass;
    };
    run(1, "gradient fidelity", timed(60.0, gradient_fidelity));
    run(2, "channel statistics", timed(120.0, channel_statistics));
    run(3, "arrangement algebra", timed(60.0, arrangement_algebra));

    let mut predictor = None;
    let r5 = timed(600.0, || {
        let (o, p) = predictor_quality();
        predictor = Some(p);
        o
    });
    let predictor = predictor.unwrap();

    let t_codec = Instant::now();
    let (codec, test) = codec_fixture();
    let codec_train = t_codec.elapsed();

    run(
        4,
        "priority pipeline",
        timed(300.0, || priority_pipeline(&codec, &test)),
    );
    run(5, "predictor", r5);

    let mut students = None;
    run(
        6,
        "distillation",
        timed(600.0, || {
            let (o, s) = distillation(&codec);
            students = Some(s);
            o
        }),
    );
    let students = students.unwrap();

    let (mut o7, el7) = timed(3600.0 - codec_train.as_secs_f64(), || {
        directional_gain(&codec, &predictor, &students, &test)
    });
    o7.detail
        .push_str(&format!("; codec training {:.1}s", codec_train.as_secs_f64()));
    run(7, "end-to-end directional gain", (o7, el7 + codec_train));
    run(8, "determinism", timed(f64::INFINITY, determinism));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
