use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgMatches, Command};

use semcom_core::channel::{channel_stats, Equalizer, SosConfig, StatsPlan};
use semcom_core::codec::{train_codec, Codec, CodecTrainConfig, Geometry, TrainChannel};
use semcom_core::data::{
    fit_to_geometry, gen_synthetic_dataset, load_cifar10, load_images, save_images, split_train_test,
};
use semcom_core::distill::{build_distill_dataset, train_student, DistillDataset, Student, StudentConfig, Students};
use semcom_core::eval::{
    run_eval_sweep, write_csv, write_summary_json, write_traces_jsonl, LinkSettings, Models, SchemeId, SweepConfig,
};
use semcom_core::predictor::{
    evaluate_forecast, train_predictor, CsiCorpus, OneStepPredictor, Predictor, PredictorConfig, PredictorTrainConfig,
};
use semcom_core::priority::{ImportancePooling, NoiseBudget, PriorityWeights, TeacherSettings};

mod config;

use config::KvConfig;

type Keys = &'static [(&'static str, &'static str)];

const SOS_KEYS: Keys = &[
    ("paths", "sinusoids in the fading generator [16]"),
    ("doppler-hz", "maximum Doppler shift in Hz [10]"),
    ("sample-period", "seconds between channel samples [0.001]"),
];

const TEACHER_KEYS: Keys = &[
    ("alpha", "importance weight [0.5]"),
    ("beta", "robustness weight [0.5]"),
    ("relative-eps", "noise radius as a fraction of the feature norm [0.1]"),
    ("steps", "gradient-ascent steps per feature [20]"),
    ("step-fraction", "ascent step as a fraction of the radius [0.1]"),
    ("pooling", "importance pooling: signed or absolute [signed]"),
];

const GEN_DATA: Keys = &[
    ("out", "output image container"),
    ("count", "synthetic images to generate [2000]"),
    ("geometry", "desk or full [desk]"),
    ("cifar", "CIFAR-10 binary batch to convert instead of generating"),
    ("test-out", "also write a held-out split here"),
    ("test-fraction", "held-out fraction when test_out is set [0.1]"),
    ("seed", "generator seed [0]"),
];

const TRAIN_CODEC: Keys = &[
    ("data", "training image container"),
    ("out", "codec checkpoint to write"),
    ("geometry", "desk or full [inferred from image size]"),
    ("epochs", "[30]"),
    ("batch-size", "[16]"),
    ("lr", "[0.001]"),
    (
        "snr-train",
        "training SNR in dB, or none for a noiseless autoencoder [13]",
    ),
    ("equalizer", "mmse or zf [mmse]"),
    ("history", "per-epoch loss JSON"),
    ("seed", "[0]"),
];

const TRAIN_PREDICTOR: Keys = &[
    ("out", "predictor checkpoint to write"),
    ("t1", "history window length [32]"),
    ("hidden", "LSTM width [50]"),
    ("layers", "stacked LSTM layers [2]"),
    ("num-sequences", "channel realizations [200]"),
    ("sequence-len", "samples per realization [400]"),
    ("holdout-fraction", "[0.2]"),
    ("epochs", "[3]"),
    ("windows-per-epoch", "[16000]"),
    ("batch-size", "[64]"),
    ("lr", "[0.002]"),
    ("lr-decay", "per-epoch learning-rate factor [0.5]"),
    ("history", "per-epoch loss JSON"),
    ("seed", "[0]"),
];

const EVAL_PREDICTOR: Keys = &[
    ("predictor", "predictor checkpoint"),
    ("out", "CSV of horizon_step,nmse"),
    ("t2", "forecast horizon [24]"),
    ("windows", "evaluation windows [500]"),
    ("num-sequences", "fresh realizations [50]"),
    ("sequence-len", "[400]"),
    ("seed", "[1]"),
];

const CHANNEL_STATS: Keys = &[
    ("out", "JSON output [stdout]"),
    ("realizations", "realizations for moments and phase [100000]"),
    ("samples-per-realization", "[1]"),
    ("autocorr-realizations", "[500]"),
    ("autocorr-len", "[1000]"),
    ("max-lag", "[quarter coherence span]"),
    ("phase-bins", "[32]"),
    ("seed", "[0]"),
];

const GEN_PRIORITY: Keys = &[
    ("codec", "codec checkpoint"),
    ("data", "image container"),
    ("out-w", "importance dataset to write"),
    ("out-r", "robustness dataset to write"),
    ("holdout-fraction", "[0.1]"),
    ("limit", "use only the first N images"),
    ("seed", "[0]"),
];

const TRAIN_STUDENTS: Keys = &[
    ("data-w", "importance dataset"),
    ("data-r", "robustness dataset"),
    ("out-w", "importance student to write"),
    ("out-r", "robustness student to write"),
    ("grid", "pooled grid side [2]"),
    ("hidden", "[24]"),
    ("epochs", "[300]"),
    ("batch-size", "[32]"),
    ("lr", "[0.003]"),
    ("report", "training report JSON [stdout]"),
    ("seed", "[0]"),
];

const RUN_EVAL: Keys = &[
    ("codec", "codec checkpoint"),
    ("data", "test image container"),
    ("predictor", "predictor checkpoint, needed by PC schemes"),
    ("wnet", "importance student, needed by KD schemes"),
    ("rnet", "robustness student, needed by KD schemes"),
    ("schemes", "comma-separated scheme list [all]"),
    ("snr-test", "comma-separated test SNRs in dB [0,5,10,15,20,25]"),
    ("t1", "history window length [32]"),
    ("power", "average symbol power [1]"),
    ("equalizer", "mmse or zf [mmse]"),
    ("bootstrap-resamples", "[1000]"),
    ("limit", "use only the first N images"),
    ("out-csv", "aggregate CSV [results.csv]"),
    ("out-json", "summary JSON [summary.json]"),
    ("out-traces", "per-image JSONL traces"),
    ("seed", "required"),
];

fn subcommand(name: &'static str, about: &'static str, groups: &[Keys]) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value file; flags override its keys"),
    );
    for &(key, help) in groups.iter().flat_map(|g| g.iter()) {
        cmd = cmd.arg(Arg::new(key).long(key).value_name("VALUE").help(help));
    }
    cmd
}

const COMMANDS: &[(&str, &str, &[Keys])] = &[
    ("gen-data", "Generate or convert an image set", &[GEN_DATA]),
    (
        "train-codec",
        "Train the encoder and decoder with the fading channel in the loop",
        &[TRAIN_CODEC, SOS_KEYS],
    ),
    (
        "train-predictor",
        "Train the LSTM channel predictor",
        &[TRAIN_PREDICTOR, SOS_KEYS],
    ),
    (
        "eval-predictor",
        "Per-step rolling-forecast NMSE on fresh realizations",
        &[EVAL_PREDICTOR, SOS_KEYS],
    ),
    (
        "channel-stats",
        "Ensemble statistics of the fading generator",
        &[CHANNEL_STATS, SOS_KEYS],
    ),
    (
        "gen-priority-dataset",
        "Label images with teacher importance and robustness",
        &[GEN_PRIORITY, TEACHER_KEYS],
    ),
    (
        "train-students",
        "Fit the importance and robustness students",
        &[TRAIN_STUDENTS],
    ),
    (
        "run-eval",
        "Paired SNR sweep over the scheme matrix",
        &[RUN_EVAL, TEACHER_KEYS, SOS_KEYS],
    ),
];

fn cli() -> Command {
    COMMANDS.iter().fold(
        Command::new("semcom")
            .about("Priority-aware feature scheduling for semantic image transmission")
            .version(env!("CARGO_PKG_VERSION"))
            .subcommand_required(true),
        |cmd, &(name, about, groups)| cmd.subcommand(subcommand(name, about, groups)),
    )
}

fn settings(m: &ArgMatches, groups: &[Keys]) -> Result<KvConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(path) => KvConfig::load(path)?,
        None => KvConfig::default(),
    };
    let flags: Vec<&str> = groups.iter().flat_map(|g| g.iter().map(|k| k.0)).collect();
    let keys: Vec<String> = flags.iter().map(|f| f.replace('-', "_")).collect();
    for (flag, key) in flags.iter().zip(&keys) {
        if let Some(v) = m.get_one::<String>(flag) {
            cfg.set(key, v.clone());
        }
    }
    cfg.check_keys(&keys)?;
    Ok(cfg)
}

fn parse_geometry(s: &str) -> Result<Geometry> {
    match s {
        "desk" => Ok(Geometry::DESK),
        "full" => Ok(Geometry::FULL),
        _ => bail!("unknown geometry `{s}`; expected desk or full"),
    }
}

fn parse_equalizer(s: &str) -> Result<Equalizer> {
    match s {
        "mmse" => Ok(Equalizer::Mmse),
        "zf" => Ok(Equalizer::ZeroForcing),
        _ => bail!("unknown equalizer `{s}`; expected mmse or zf"),
    }
}

fn sos(cfg: &KvConfig) -> Result<SosConfig> {
    let d = SosConfig::default();
    Ok(SosConfig {
        paths: cfg.get_or("paths", d.paths)?,
        doppler_hz: cfg.get_or("doppler_hz", d.doppler_hz)?,
        sample_period: cfg.get_or("sample_period", d.sample_period)?,
    })
}

fn teacher(cfg: &KvConfig) -> Result<TeacherSettings> {
    let d = TeacherSettings::default();
    let budget = NoiseBudget {
        relative_eps: cfg.get_or("relative_eps", d.budget.relative_eps)?,
        steps: cfg.get_or("steps", d.budget.steps)?,
        step_fraction: cfg.get_or("step_fraction", d.budget.step_fraction)?,
        ..d.budget
    };
    let pooling = match cfg.raw("pooling").unwrap_or("signed") {
        "signed" => ImportancePooling::Signed,
        "absolute" => ImportancePooling::Absolute,
        other => bail!("unknown pooling `{other}`; expected signed or absolute"),
    };
    let weights = PriorityWeights::new(
        cfg.get_or("alpha", d.weights.alpha())?,
        cfg.get_or("beta", d.weights.beta())?,
    )?;
    Ok(TeacherSettings {
        budget,
        pooling,
        weights,
    })
}

fn create(path: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {path}"))?,
    ))
}

fn write_json(value: serde_json::Value, path: Option<&str>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            serde_json::to_writer_pretty(&mut w, &value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => println!("{}", serde_json::to_string_pretty(&value)?),
    }
    Ok(())
}

fn limited<T>(mut v: Vec<T>, cfg: &KvConfig) -> Result<Vec<T>> {
    if let Some(n) = cfg.opt::<usize>("limit")? {
        v.truncate(n);
    }
    Ok(v)
}

fn cmd_gen_data(cfg: &KvConfig) -> Result<()> {
    let out: String = cfg.require("out")?;
    let geometry = parse_geometry(cfg.raw("geometry").unwrap_or("desk"))?;
    let images = match cfg.raw("cifar") {
        Some(path) => fit_to_geometry(load_cifar10(path)?, &geometry)?,
        None => gen_synthetic_dataset(cfg.get_or("count", 2000)?, &geometry, cfg.get_or("seed", 0)?)?,
    };
    match cfg.raw("test_out") {
        Some(test_out) => {
            let (train, test) = split_train_test(images, cfg.get_or("test_fraction", 0.1)?);
            save_images(&train, &out)?;
            save_images(&test, test_out)?;
            eprintln!(
                "wrote {} training images to {out} and {} test images to {test_out}",
                train.len(),
                test.len()
            );
        }
        None => {
            save_images(&images, &out)?;
            eprintln!("wrote {} images to {out}", images.len());
        }
    }
    Ok(())
}

fn cmd_train_codec(cfg: &KvConfig) -> Result<()> {
    let images = load_images(cfg.require::<String>("data")?)?;
    let geometry = match cfg.raw("geometry") {
        Some(g) => parse_geometry(g)?,
        None if images[0].height == Geometry::FULL.img_h => Geometry::FULL,
        None => Geometry::DESK,
    };
    let d = CodecTrainConfig::default();
    let snr_db = match cfg.raw("snr_train") {
        Some("none") => None,
        Some(_) => Some(cfg.require::<f64>("snr_train")?),
        None => d.channel.snr_db,
    };
    let tc = CodecTrainConfig {
        epochs: cfg.get_or("epochs", d.epochs)?,
        batch_size: cfg.get_or("batch_size", d.batch_size)?,
        lr: cfg.get_or("lr", d.lr)?,
        channel: TrainChannel {
            snr_db,
            sos: sos(cfg)?,
            equalizer: parse_equalizer(cfg.raw("equalizer").unwrap_or("mmse"))?,
        },
        seed: cfg.get_or("seed", d.seed)?,
    };
    let out: String = cfg.require("out")?;
    let (codec, history) = train_codec(&images, geometry, &tc)?;
    for e in &history {
        eprintln!("epoch {:>3}  loss {:.6}", e.epoch, e.loss);
    }
    codec.save(&out)?;
    if let Some(h) = cfg.raw("history") {
        write_json(serde_json::to_value(&history)?, Some(h))?;
    }
    Ok(())
}

fn cmd_train_predictor(cfg: &KvConfig) -> Result<()> {
    let d = PredictorTrainConfig::default();
    let tc = PredictorTrainConfig {
        model: PredictorConfig {
            t1: cfg.get_or("t1", d.model.t1)?,
            hidden: cfg.get_or("hidden", d.model.hidden)?,
            layers: cfg.get_or("layers", d.model.layers)?,
        },
        sos: sos(cfg)?,
        num_sequences: cfg.get_or("num_sequences", d.num_sequences)?,
        sequence_len: cfg.get_or("sequence_len", d.sequence_len)?,
        holdout_fraction: cfg.get_or("holdout_fraction", d.holdout_fraction)?,
        epochs: cfg.get_or("epochs", d.epochs)?,
        windows_per_epoch: cfg.get_or("windows_per_epoch", d.windows_per_epoch)?,
        batch_size: cfg.get_or("batch_size", d.batch_size)?,
        lr: cfg.get_or("lr", d.lr)?,
        lr_decay: cfg.get_or("lr_decay", d.lr_decay)?,
        seed: cfg.get_or("seed", d.seed)?,
    };
    let out: String = cfg.require("out")?;
    let trained = train_predictor(&tc)?;
    for e in &trained.history {
        eprintln!(
            "epoch {:>2}  train {:.3e}  holdout nmse {:.3e}",
            e.epoch, e.train_loss, e.holdout_nmse
        );
    }
    trained.predictor.save(&out)?;
    if let Some(h) = cfg.raw("history") {
        write_json(serde_json::to_value(&trained.history)?, Some(h))?;
    }
    Ok(())
}

fn cmd_eval_predictor(cfg: &KvConfig) -> Result<()> {
    let predictor = Predictor::load(cfg.require::<String>("predictor")?)?;
    let corpus = CsiCorpus::generate(
        sos(cfg)?,
        cfg.get_or("num_sequences", 50)?,
        cfg.get_or("sequence_len", 400)?,
        predictor.window_len(),
        cfg.get_or("seed", 1)?,
    )?;
    let ev = evaluate_forecast(&predictor, &corpus, cfg.get_or("windows", 500)?, cfg.get_or("t2", 24)?)?;
    let out: String = cfg.require("out")?;
    let mut w = create(&out)?;
    writeln!(w, "horizon_step,nmse")?;
    for (j, v) in ev.per_step_nmse.iter().enumerate() {
        writeln!(w, "{},{v:.6e}", j + 1)?;
    }
    w.flush()?;
    eprintln!(
        "win rate vs persistence {:.3} over {} windows",
        ev.win_rate_vs_persistence, ev.windows
    );
    Ok(())
}

fn cmd_channel_stats(cfg: &KvConfig) -> Result<()> {
    let d = StatsPlan::default();
    let plan = StatsPlan {
        realizations: cfg.get_or("realizations", d.realizations)?,
        samples_per_realization: cfg.get_or("samples_per_realization", d.samples_per_realization)?,
        autocorr_realizations: cfg.get_or("autocorr_realizations", d.autocorr_realizations)?,
        autocorr_len: cfg.get_or("autocorr_len", d.autocorr_len)?,
        max_lag: cfg.opt("max_lag")?,
        phase_bins: cfg.get_or("phase_bins", d.phase_bins)?,
    };
    let st = channel_stats(sos(cfg)?, &plan, cfg.get_or("seed", 0)?)?;
    write_json(serde_json::to_value(&st)?, cfg.raw("out"))
}

fn cmd_gen_priority(cfg: &KvConfig) -> Result<()> {
    let codec = Codec::load(cfg.require::<String>("codec")?)?;
    let images = limited(load_images(cfg.require::<String>("data")?)?, cfg)?;
    let (out_w, out_r): (String, String) = (cfg.require("out_w")?, cfg.require("out_r")?);
    let (w, r) = build_distill_dataset(
        &codec,
        &images,
        &teacher(cfg)?,
        cfg.get_or("holdout_fraction", 0.1)?,
        cfg.get_or("seed", 0)?,
    )?;
    w.save(&out_w)?;
    r.save(&out_r)?;
    eprintln!("labelled {} images", images.len());
    Ok(())
}

fn cmd_train_students(cfg: &KvConfig) -> Result<()> {
    let d = StudentConfig::default();
    let sc = StudentConfig {
        grid: cfg.get_or("grid", d.grid)?,
        hidden: cfg.get_or("hidden", d.hidden)?,
        epochs: cfg.get_or("epochs", d.epochs)?,
        batch_size: cfg.get_or("batch_size", d.batch_size)?,
        lr: cfg.get_or("lr", d.lr)?,
        seed: cfg.get_or("seed", d.seed)?,
    };
    let (out_w, out_r): (String, String) = (cfg.require("out_w")?, cfg.require("out_r")?);
    let (wnet, wrep) = train_student(&DistillDataset::load(cfg.require::<String>("data_w")?)?, &sc)?;
    let (rnet, rrep) = train_student(&DistillDataset::load(cfg.require::<String>("data_r")?)?, &sc)?;
    wnet.save(&out_w)?;
    rnet.save(&out_r)?;
    write_json(serde_json::json!({ "wnet": wrep, "rnet": rrep }), cfg.raw("report"))
}

fn cmd_run_eval(cfg: &KvConfig) -> Result<()> {
    let seed: u64 = cfg.require("seed")?;
    let codec = Codec::load(cfg.require::<String>("codec")?)?;
    let images = limited(load_images(cfg.require::<String>("data")?)?, cfg)?;
    let predictor = cfg.raw("predictor").map(Predictor::load).transpose()?;
    let students = match (cfg.raw("wnet"), cfg.raw("rnet")) {
        (Some(w), Some(r)) => Some(Students {
            wnet: Student::load(w)?,
            rnet: Student::load(r)?,
        }),
        (None, None) => None,
        _ => bail!("wnet and rnet must be given together"),
    };
    let d = SweepConfig::default();
    let sweep = SweepConfig {
        snr_test: cfg.list("snr_test")?.unwrap_or(d.snr_test),
        schemes: cfg.list::<SchemeId>("schemes")?.unwrap_or(d.schemes),
        sos: sos(cfg)?,
        t1: cfg.get_or("t1", d.t1)?,
        link: LinkSettings {
            teacher: teacher(cfg)?,
            equalizer: parse_equalizer(cfg.raw("equalizer").unwrap_or("mmse"))?,
            power: cfg.get_or("power", d.link.power)?,
            seed,
        },
        bootstrap_resamples: cfg.get_or("bootstrap_resamples", d.bootstrap_resamples)?,
    };
    let models = Models {
        codec: &codec,
        predictor: predictor.as_ref().map(|p| p as &dyn OneStepPredictor),
        students: students.as_ref(),
    };
    let res = run_eval_sweep(&sweep, &models, &images)?;

    let mut w = create(cfg.raw("out_csv").unwrap_or("results.csv"))?;
    write_csv(&res.summary.aggregates, &mut w)?;
    w.flush()?;
    let mut w = create(cfg.raw("out_json").unwrap_or("summary.json"))?;
    write_summary_json(&res.summary, &mut w)?;
    w.flush()?;
    if let Some(p) = cfg.raw("out_traces") {
        let mut w = create(p)?;
        write_traces_jsonl(&res.records, &mut w)?;
        w.flush()?;
    }
    for a in &res.summary.aggregates {
        eprintln!(
            "{:<12} {:>5.1} dB  {:.3} +/- {:.3}  (n={})",
            a.scheme.name(),
            a.snr_db,
            a.mean_psnr,
            a.ci,
            a.n
        );
    }
    Ok(())
}

fn run() -> Result<()> {
    let matches = cli().get_matches();
    let (name, m) = matches.subcommand().expect("subcommand is required");
    let groups = COMMANDS
        .iter()
        .find(|c| c.0 == name)
        .expect("clap rejects unknown subcommands")
        .2;
    let cfg = settings(m, groups)?;
    match name {
        "gen-data" => cmd_gen_data(&cfg),
        "train-codec" => cmd_train_codec(&cfg),
        "train-predictor" => cmd_train_predictor(&cfg),
        "eval-predictor" => cmd_eval_predictor(&cfg),
        "channel-stats" => cmd_channel_stats(&cfg),
        "gen-priority-dataset" => cmd_gen_priority(&cfg),
        "train-students" => cmd_train_students(&cfg),
        "run-eval" => cmd_run_eval(&cfg),
        _ => unreachable!("every table entry is dispatched"),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
