//! Checks that need trained desk-scale models.

use std::sync::OnceLock;

use num_complex::Complex64;

use semcom_core::arrange::sort_desc_with_indices;
use semcom_core::channel::SosConfig;
use semcom_core::codec::{clean_loss, psnr_from_mse, train_codec, Codec, CodecTrainConfig, Geometry, Image};
use semcom_core::data::{gen_synthetic_dataset, split_train_test};
use semcom_core::eval::{prepare, transmit, unit_noise, ChannelTrace, LinkSettings, Models, SchemeId};
use semcom_core::predictor::{
    evaluate_forecast, train_predictor, CsiCorpus, HistoryWindow, OneStepPredictor, PredictorTrainConfig,
};
use semcom_core::priority::{teacher_priority, TeacherSettings};
use semcom_core::stats::{mean, spearman};

struct Fixture {
    codec: Codec,
    final_loss: f64,
    test: Vec<Image>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let images = gen_synthetic_dataset(2000, &Geometry::DESK, 7).unwrap();
        let (train, test) = split_train_test(images, 0.1);
        let cfg = CodecTrainConfig {
            seed: 7,
            ..Default::default()
        };
        let (codec, history) = train_codec(&train, Geometry::DESK, &cfg).unwrap();
        Fixture {
            codec,
            final_loss: history.last().unwrap().loss,
            test,
        }
    })
}

#[test]
fn desk_codec_reaches_loss_and_psnr_targets() {
    let f = fixture();
    assert!(f.final_loss < 0.01, "final train loss {}", f.final_loss);
    let clean = psnr_from_mse(clean_loss(&f.codec, &f.test).unwrap(), 1.0);
    assert!(clean > 20.0, "clean test PSNR {clean}");
}

#[test]
fn robustness_is_not_a_relabelled_importance() {
    let f = fixture();
    let rhos: Vec<f64> = f.test[..100]
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let a = f.codec.encode(s).unwrap();
            let t = teacher_priority(&a, s, &f.codec.decoder, &TeacherSettings::default(), i as u64).unwrap();
            spearman(&t.importance.norm, &t.robustness.scores.norm)
        })
        .collect();
    let m = mean(&rhos);
    assert!(m.abs() < 0.95, "mean Spearman(w, r) {m}");
}

struct FadeCase {
    image: usize,
    faded: usize,
    lowest: usize,
    placed: usize,
    kc: f64,
    djscc: f64,
}

/// One slot at |h| = 0.01, the rest at 1, 30 dB; every slot position on 20 test images.
fn deep_fade_cases() -> &'static [FadeCase] {
    static CASES: OnceLock<Vec<FadeCase>> = OnceLock::new();
    CASES.get_or_init(|| {
        let f = fixture();
        let c = Geometry::DESK.c;
        let settings = LinkSettings::default();
        let models = Models {
            codec: &f.codec,
            predictor: None,
            students: None,
        };
        let schemes = [SchemeId::KcFp, SchemeId::Djscc];
        let mut cases = Vec::new();
        for (i, s) in f.test[..20].iter().enumerate() {
            let flat = ChannelTrace {
                history: HistoryWindow::new(vec![Complex64::new(1.0, 0.0); 32], 31).unwrap(),
                future: vec![Complex64::new(1.0, 0.0); c],
                unit_noise: unit_noise(Geometry::DESK.num_symbols(), i as u64),
            };
            let p = prepare(i, s, &schemes, &models, &flat, &settings).unwrap();
            let lowest = *sort_desc_with_indices(p.teacher.as_ref().unwrap()).last().unwrap();
            for faded in 0..c {
                let mut trace = flat.clone();
                trace.future[faded] = Complex64::new(0.01, 0.0);
                let kc = transmit(&p, SchemeId::KcFp, &models, s, &trace, 30.0, &settings).unwrap();
                let dj = transmit(&p, SchemeId::Djscc, &models, s, &trace, 30.0, &settings).unwrap();
                cases.push(FadeCase {
                    image: i,
                    faded,
                    lowest,
                    placed: kc.order.as_slice()[faded],
                    kc: kc.psnr,
                    djscc: dj.psnr,
                });
            }
        }
        cases
    })
}

#[test]
fn deep_fade_slot_carries_lowest_priority_feature() {
    for case in deep_fade_cases() {
        assert_eq!(
            case.placed, case.lowest,
            "image {} faded slot {}",
            case.image, case.faded
        );
    }
}

#[test]
fn deep_fade_known_csi_never_below_natural_order() {
    let relevant: Vec<&FadeCase> = deep_fade_cases().iter().filter(|c| c.lowest != c.faded).collect();
    let worse: Vec<&&FadeCase> = relevant.iter().filter(|c| c.kc < c.djscc).collect();
    let mean_gain = mean(&relevant.iter().map(|c| c.kc - c.djscc).collect::<Vec<_>>());
    assert!(
        worse.is_empty(),
        "KC_FP below DJSCC in {}/{} single-fade cases (mean gain {mean_gain:+.4} dB); first: image {} slot {}",
        worse.len(),
        relevant.len(),
        worse[0].image,
        worse[0].faded
    );
}

#[test]
fn constant_channel_is_predicted_within_five_percent() {
    let sos = SosConfig {
        doppler_hz: 0.0,
        ..Default::default()
    };
    let cfg = PredictorTrainConfig {
        sos,
        num_sequences: 60,
        sequence_len: 80,
        epochs: 2,
        windows_per_epoch: 4000,
        seed: 3,
        ..Default::default()
    };
    let trained = train_predictor(&cfg).unwrap();
    let fresh = CsiCorpus::generate(sos, 50, 40, 32, 99).unwrap();
    for seq in &fresh.sequences {
        let h = seq[0];
        let window = HistoryWindow::new(seq[..32].to_vec(), 31).unwrap();
        let pred = trained.predictor.predict_next(&window).unwrap();
        assert!(
            (pred - h).norm() <= 0.05 * h.norm(),
            "predicted {pred} for constant {h}"
        );
    }
}

#[test]
fn forecast_error_grows_with_horizon() {
    let cfg = PredictorTrainConfig {
        seed: 11,
        ..Default::default()
    };
    let trained = train_predictor(&cfg).unwrap();
    let ev = evaluate_forecast(&trained.predictor, &trained.holdout, 500, 24).unwrap();
    for w in ev.per_step_nmse.windows(2) {
        assert!(w[1] >= w[0], "per-step NMSE not monotone: {:?}", ev.per_step_nmse);
    }
}
