//! Scheme matrix, paired channel traces, the end-to-end transmission pipeline,
//! SNR sweeps and their reports.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arrange::{assignment, inverse_arrange, permute, FeatureOrder};
use crate::channel::{apply_channel_with_noise, equalize, noise_sigma_from_snr, Equalizer, SosChannel, SosConfig};
use crate::codec::{from_symbols, psnr, to_symbols, Codec, FeatureTensor, Image};
use crate::distill::{student_infer, Students};
use crate::error::{Error, Result};
use crate::predictor::{nmse, rolling_forecast, HistoryWindow, OneStepPredictor};
use crate::priority::{teacher_priority, TeacherSettings};
use crate::rng::{derive_seed, rng_for};
use crate::stats::{mean, paired_bootstrap_ci, paired_t_greater};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeId {
    /// Predicted CSI, student priority.
    #[serde(rename = "PC_FP_KD")]
    PcFpKd,
    /// True future CSI, student priority.
    #[serde(rename = "KC_FP_KD")]
    KcFpKd,
    /// True future CSI, teacher priority.
    #[serde(rename = "KC_FP")]
    KcFp,
    /// Predicted CSI, teacher priority.
    #[serde(rename = "PC_FP")]
    PcFp,
    /// Natural feature order.
    #[serde(rename = "DJSCC")]
    Djscc,
    /// Uniformly random feature order.
    #[serde(rename = "RANDOM_ORDER")]
    RandomOrder,
}

impl SchemeId {
    pub const ALL: [SchemeId; 6] = [
        SchemeId::PcFpKd,
        SchemeId::KcFpKd,
        SchemeId::KcFp,
        SchemeId::PcFp,
        SchemeId::Djscc,
        SchemeId::RandomOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::PcFpKd => "PC_FP_KD",
            SchemeId::KcFpKd => "KC_FP_KD",
            SchemeId::KcFp => "KC_FP",
            SchemeId::PcFp => "PC_FP",
            SchemeId::Djscc => "DJSCC",
            SchemeId::RandomOrder => "RANDOM_ORDER",
        }
    }

    pub fn uses_students(self) -> bool {
        matches!(self, SchemeId::PcFpKd | SchemeId::KcFpKd)
    }

    pub fn uses_teacher(self) -> bool {
        matches!(self, SchemeId::KcFp | SchemeId::PcFp)
    }

    pub fn uses_prediction(self) -> bool {
        matches!(self, SchemeId::PcFpKd | SchemeId::PcFp)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', '+'], "_");
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

/// What the transmitter knows (CSI history) and what the link will actually do
/// (future slot coefficients and a unit-variance noise draw).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTrace {
    pub history: HistoryWindow,
    /// True coefficient of each feature slot, in slot order.
    pub future: Vec<Complex64>,
    /// `CN(0, 1)` draws, scaled by the test-SNR noise level at use.
    pub unit_noise: Vec<Complex64>,
}

impl ChannelTrace {
    /// History samples `0..t1` and slot coefficients `t1..t1+slots` of one realization.
    pub fn from_realization(
        channel: &SosChannel,
        t1: usize,
        slots: usize,
        symbols: usize,
        noise_seed: u64,
    ) -> Result<Self> {
        let history = HistoryWindow::new(channel.generate(0, t1).samples, t1 as i64 - 1)?;
        let future = channel.generate(t1 as i64, slots).samples;
        Ok(Self {
            history,
            future,
            unit_noise: unit_noise(symbols, noise_seed),
        })
    }
}

pub fn unit_noise(count: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = rng_for(seed, &[0x4015E]);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..count)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

/// Trained components available to the pipeline.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub codec: &'a Codec,
    pub predictor: Option<&'a dyn OneStepPredictor>,
    pub students: Option<&'a Students>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSettings {
    pub teacher: TeacherSettings,
    pub equalizer: Equalizer,
    pub power: f64,
    pub seed: u64,
}

impl Default for LinkSettings {
    fn default() -> Self {
        Self {
            teacher: TeacherSettings::default(),
            equalizer: Equalizer::Mmse,
            power: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: usize,
    pub scheme: SchemeId,
    pub snr_db: f64,
    /// `+inf` for a perfect reconstruction.
    #[serde(serialize_with = "ser_psnr", deserialize_with = "de_psnr")]
    pub psnr: f64,
    /// `|h|` of every slot as experienced on the link.
    pub slot_amplitudes: Vec<f64>,
    pub order: FeatureOrder,
    /// Rolling-forecast NMSE, for schemes that use predicted CSI.
    pub predictor_nmse: Option<f64>,
    /// Wall-clock seconds spent on priority scoring. Not serialized, so that
    /// trace files are reproducible.
    #[serde(skip)]
    pub priority_seconds: f64,
}

fn ser_psnr<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

fn de_psnr<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum P {
        N(f64),
        S(String),
    }
    Ok(match P::deserialize(d)? {
        P::N(v) => v,
        P::S(s) if s == "inf" => f64::INFINITY,
        P::S(s) => return Err(serde::de::Error::custom(format!("bad PSNR `{s}`"))),
    })
}

/// Per-image work shared by every scheme and SNR: features, priorities, forecast.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub image_id: usize,
    pub features: FeatureTensor,
    pub teacher: Option<Vec<f64>>,
    pub student: Option<Vec<f64>>,
    pub forecast: Option<Vec<Complex64>>,
    pub teacher_seconds: f64,
    pub student_seconds: f64,
}

pub fn prepare(
    image_id: usize,
    image: &Image,
    schemes: &[SchemeId],
    models: &Models,
    trace: &ChannelTrace,
    settings: &LinkSettings,
) -> Result<Prepared> {
    let features = models.codec.encode(image)?;
    let c = features.c();
    if trace.future.len() != c {
        return Err(Error::Length {
            what: "slot coefficients",
            expected: c,
            actual: trace.future.len(),
        });
    }
    let mut p = Prepared {
        image_id,
        features,
        teacher: None,
        student: None,
        forecast: None,
        teacher_seconds: 0.0,
        student_seconds: 0.0,
    };
    if schemes.iter().any(|s| s.uses_teacher()) {
        let t = Instant::now();
        let seed = derive_seed(settings.seed, &[0x7EAC, image_id as u64]);
        p.teacher =
            Some(teacher_priority(&p.features, image, &models.codec.decoder, &settings.teacher, seed)?.priority);
        p.teacher_seconds = t.elapsed().as_secs_f64();
    }
    if let Some(s) = schemes.iter().find(|s| s.uses_students()) {
        let students = models.students.ok_or(Error::MissingModel {
            scheme: s.name(),
            model: "pair of priority students",
        })?;
        let t = Instant::now();
        p.student = Some(student_infer(&p.features, students, settings.teacher.weights)?);
        p.student_seconds = t.elapsed().as_secs_f64();
    }
    if let Some(s) = schemes.iter().find(|s| s.uses_prediction()) {
        let predictor = models.predictor.ok_or(Error::MissingModel {
            scheme: s.name(),
            model: "channel predictor",
        })?;
        // Only the history crosses this boundary; the true future stays on the link side.
        p.forecast = Some(rolling_forecast(predictor, &trace.history, c)?.samples);
    }
    Ok(p)
}

/// Transmits prepared features under `scheme` over the trace at `snr_db`.
pub fn transmit(
    p: &Prepared,
    scheme: SchemeId,
    models: &Models,
    image: &Image,
    trace: &ChannelTrace,
    snr_db: f64,
    settings: &LinkSettings,
) -> Result<EvalRecord> {
    let c = p.features.c();
    let missing = |what| Error::MissingModel {
        scheme: scheme.name(),
        model: what,
    };
    let true_amps: Vec<f64> = trace.future.iter().map(|h| h.norm()).collect();
    let mut predictor_nmse = None;
    let (order, priority_seconds) = match scheme {
        SchemeId::Djscc => (FeatureOrder::identity(c), 0.0),
        SchemeId::RandomOrder => {
            let mut v: Vec<usize> = (0..c).collect();
            v.shuffle(&mut rng_for(
                settings.seed,
                &[0x4A2D, p.image_id as u64, snr_db.to_bits()],
            ));
            (FeatureOrder::new(v)?, 0.0)
        }
        _ => {
            let (xi, secs) = if scheme.uses_students() {
                (
                    p.student.as_ref().ok_or(missing("student priority"))?,
                    p.student_seconds,
                )
            } else {
                (
                    p.teacher.as_ref().ok_or(missing("teacher priority"))?,
                    p.teacher_seconds,
                )
            };
            let amps = if scheme.uses_prediction() {
                let f = p.forecast.as_ref().ok_or(missing("channel forecast"))?;
                predictor_nmse = Some(nmse(f, &trace.future));
                f.iter().map(|h| h.norm()).collect()
            } else {
                true_amps.clone()
            };
            (assignment(xi, &amps)?, secs)
        }
    };
    let arranged = permute(&p.features, &order);
    let mapped = to_symbols(&arranged, settings.power)?;
    let sigma = noise_sigma_from_snr(snr_db, settings.power)?;
    let noise: Vec<Complex64> = trace.unit_noise.iter().map(|n| n * sigma).collect();
    let y = apply_channel_with_noise(&mapped.symbols, &trace.future, &noise)?;
    let x_hat = equalize(&y, &trace.future, sigma, settings.equalizer)?;
    let received = from_symbols(&x_hat, arranged.shape(), mapped.scale)?;
    let restored = inverse_arrange(&received, &order)?;
    let recon = models.codec.decode(&restored)?;
    Ok(EvalRecord {
        image_id: p.image_id,
        scheme,
        snr_db,
        psnr: psnr(image.pixels(), recon.pixels(), 1.0)?,
        slot_amplitudes: true_amps,
        order,
        predictor_nmse,
        priority_seconds,
    })
}

/// Encode, score, forecast, arrange, transmit, restore and decode one image.
pub fn run_pipeline(
    image_id: usize,
    image: &Image,
    scheme: SchemeId,
    models: &Models,
    trace: &ChannelTrace,
    snr_db: f64,
    settings: &LinkSettings,
) -> Result<EvalRecord> {
    let p = prepare(image_id, image, &[scheme], models, trace, settings)?;
    transmit(&p, scheme, models, image, trace, snr_db, settings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub snr_test: Vec<f64>,
    pub schemes: Vec<SchemeId>,
    pub sos: SosConfig,
    pub t1: usize,
    pub link: LinkSettings,
    pub bootstrap_resamples: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_test: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
            schemes: SchemeId::ALL.to_vec(),
            sos: SosConfig::default(),
            t1: 32,
            link: LinkSettings::default(),
            bootstrap_resamples: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scheme: SchemeId,
    pub snr_db: f64,
    pub mean_psnr: f64,
    /// Half-width of the 95% paired-bootstrap interval.
    pub ci: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Images with a finite PSNR.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub better: SchemeId,
    pub worse: SchemeId,
    pub snr_db: f64,
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for `mean_diff > 0`.
    pub p_value: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config: SweepConfig,
    pub images: usize,
    pub aggregates: Vec<Aggregate>,
    pub comparisons: Vec<Comparison>,
    /// Bits per image to signal a feature order, `c * log2(c)`.
    pub order_overhead_bits: f64,
    /// Mean rolling-forecast NMSE over images, when a predicted-CSI scheme ran.
    pub mean_predictor_nmse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub records: Vec<EvalRecord>,
    pub summary: SweepSummary,
    /// Mean seconds per image for teacher and student priority scoring.
    pub teacher_seconds: f64,
    pub student_seconds: f64,
}

/// The trace for image `i`: an independent channel realization per image.
pub fn trace_for_image(cfg: &SweepConfig, codec: &Codec, image_id: usize) -> Result<ChannelTrace> {
    let g = codec.geometry();
    let seed = derive_seed(cfg.link.seed, &[0x7ACE, image_id as u64]);
    let ch = SosChannel::new(cfg.sos, seed)?;
    ChannelTrace::from_realization(&ch, cfg.t1, g.c, g.num_symbols(), derive_seed(seed, &[0x2015E]))
}

/// Paired evaluation: for each image every scheme sees the same channel
/// realization, and for each SNR the same noise draw.
pub fn run_eval_sweep(cfg: &SweepConfig, models: &Models, images: &[Image]) -> Result<SweepResult> {
    if images.is_empty() {
        return Err(Error::Empty("test image set"));
    }
    if cfg.snr_test.is_empty() || cfg.schemes.is_empty() {
        return Err(Error::Config("need at least one test SNR and one scheme".into()));
    }
    let mut records = Vec::with_capacity(images.len() * cfg.snr_test.len() * cfg.schemes.len());
    let (mut t_teacher, mut t_student) = (0.0, 0.0);
    for (i, img) in images.iter().enumerate() {
        let trace = trace_for_image(cfg, models.codec, i)?;
        let p = prepare(i, img, &cfg.schemes, models, &trace, &cfg.link)?;
        t_teacher += p.teacher_seconds;
        t_student += p.student_seconds;
        for (si, &snr) in cfg.snr_test.iter().enumerate() {
            let noisy = ChannelTrace {
                unit_noise: unit_noise(
                    trace.unit_noise.len(),
                    derive_seed(cfg.link.seed, &[0x5A2, i as u64, si as u64]),
                ),
                ..trace.clone()
            };
            for &scheme in &cfg.schemes {
                records.push(transmit(&p, scheme, models, img, &noisy, snr, &cfg.link)?);
            }
        }
    }
    let summary = summarize(cfg, &records, images.len(), models.codec.geometry().c)?;
    Ok(SweepResult {
        records,
        summary,
        teacher_seconds: t_teacher / images.len() as f64,
        student_seconds: t_student / images.len() as f64,
    })
}

/// PSNR column of `scheme` at `snr`, ordered by image id.
pub fn psnr_column(records: &[EvalRecord], scheme: SchemeId, snr: f64) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = records
        .iter()
        .filter(|r| r.scheme == scheme && r.snr_db == snr)
        .map(|r| (r.image_id, r.psnr))
        .collect();
    v.sort_by_key(|x| x.0);
    v
}

/// Paired one-sided comparison `better > worse` over images where both are finite.
pub fn compare(records: &[EvalRecord], better: SchemeId, worse: SchemeId, snr: f64) -> Comparison {
    let a = psnr_column(records, better, snr);
    let b = psnr_column(records, worse, snr);
    let diffs: Vec<f64> = a
        .iter()
        .zip(&b)
        .filter(|((ia, pa), (ib, pb))| ia == ib && pa.is_finite() && pb.is_finite())
        .map(|((_, pa), (_, pb))| pa - pb)
        .collect();
    let (t, p_value) = paired_t_greater(&diffs);
    Comparison {
        better,
        worse,
        snr_db: snr,
        mean_diff: if diffs.is_empty() { f64::NAN } else { mean(&diffs) },
        t,
        p_value,
        n: diffs.len(),
    }
}

const HIERARCHY: [(SchemeId, SchemeId); 6] = [
    (SchemeId::KcFp, SchemeId::RandomOrder),
    (SchemeId::KcFp, SchemeId::Djscc),
    (SchemeId::KcFp, SchemeId::PcFp),
    (SchemeId::PcFp, SchemeId::Djscc),
    (SchemeId::KcFpKd, SchemeId::KcFp),
    (SchemeId::PcFpKd, SchemeId::PcFp),
];

fn summarize(cfg: &SweepConfig, records: &[EvalRecord], images: usize, c: usize) -> Result<SweepSummary> {
    let mut aggregates = Vec::new();
    for (si, &snr) in cfg.snr_test.iter().enumerate() {
        let cols: Vec<Vec<(usize, f64)>> = cfg.schemes.iter().map(|&s| psnr_column(records, s, snr)).collect();
        // rows where every scheme is finite keep the bootstrap paired
        let rows: Vec<usize> = (0..images)
            .filter(|&r| cols.iter().all(|c| c.get(r).is_some_and(|x| x.1.is_finite())))
            .collect();
        let paired: Vec<Vec<f64>> = cols.iter().map(|c| rows.iter().map(|&r| c[r].1).collect()).collect();
        let cis = paired_bootstrap_ci(
            &paired,
            cfg.bootstrap_resamples,
            0.95,
            derive_seed(cfg.link.seed, &[0xC1, si as u64]),
        );
        for ((&scheme, col), (lo, hi)) in cfg.schemes.iter().zip(&cols).zip(cis) {
            let finite: Vec<f64> = col.iter().map(|x| x.1).filter(|v| v.is_finite()).collect();
            aggregates.push(Aggregate {
                scheme,
                snr_db: snr,
                mean_psnr: if finite.is_empty() { f64::NAN } else { mean(&finite) },
                ci: (hi - lo) / 2.0,
                ci_low: lo,
                ci_high: hi,
                n: finite.len(),
            });
        }
    }
    let mut comparisons = Vec::new();
    for &snr in &cfg.snr_test {
        for (a, b) in HIERARCHY {
            if cfg.schemes.contains(&a) && cfg.schemes.contains(&b) {
                comparisons.push(compare(records, a, b, snr));
            }
        }
    }
    let nmses: Vec<f64> = records.iter().filter_map(|r| r.predictor_nmse).collect();
    Ok(SweepSummary {
        config: cfg.clone(),
        images,
        aggregates,
        comparisons,
        order_overhead_bits: FeatureOrder::identity(c).overhead_bits(),
        mean_predictor_nmse: (!nmses.is_empty()).then(|| mean(&nmses)),
    })
}

/// Long-form `scheme,snr,mean_psnr,ci,n`.
pub fn write_csv<W: Write>(aggregates: &[Aggregate], mut w: W) -> Result<()> {
    writeln!(w, "scheme,snr,mean_psnr,ci,n")?;
    for a in aggregates {
        writeln!(w, "{},{},{:.6},{:.6},{}", a.scheme, a.snr_db, a.mean_psnr, a.ci, a.n)?;
    }
    Ok(())
}

pub fn write_summary_json<W: Write>(summary: &SweepSummary, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, summary)?;
    Ok(())
}

/// One JSON object per record and line.
pub fn write_traces_jsonl<W: Write>(records: &[EvalRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}
