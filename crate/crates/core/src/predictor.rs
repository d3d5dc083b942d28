//! Stacked-LSTM one-step channel predictor and the recursive rolling forecast.

use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::channel::{SosChannel, SosConfig};
use crate::error::{shape_err, Error, Result};
use crate::nn::{lstm_cell_step, LstmLayer};
use crate::params::{adam_step, AdamState, Bound, ParamSet};
use crate::rng::{derive_seed, rng_for};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// The `t1` most recent channel samples known at the transmitter.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryWindow {
    samples: Vec<Complex64>,
    end_index: i64,
}

impl HistoryWindow {
    /// `end_index` is the absolute sample index of the last element.
    pub fn new(samples: Vec<Complex64>, end_index: i64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("history window"));
        }
        Ok(Self { samples, end_index })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn end_index(&self) -> i64 {
        self.end_index
    }

    pub fn last(&self) -> Complex64 {
        *self.samples.last().expect("non-empty")
    }

    /// Drops the oldest sample and appends `next`.
    pub fn push(&mut self, next: Complex64) {
        self.samples.remove(0);
        self.samples.push(next);
        self.end_index += 1;
    }
}

/// Predicted samples for indices `start_index ..`.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub samples: Vec<Complex64>,
    pub start_index: i64,
}

impl Forecast {
    pub fn amplitudes(&self) -> Vec<f64> {
        self.samples.iter().map(|h| h.norm()).collect()
    }
}

pub trait OneStepPredictor {
    /// Required history length.
    fn window_len(&self) -> usize;

    fn predict_next(&self, window: &HistoryWindow) -> Result<Complex64>;

    fn predict_next_batch(&self, windows: &[HistoryWindow]) -> Result<Vec<Complex64>> {
        windows.iter().map(|w| self.predict_next(w)).collect()
    }
}

fn check_len(p: &(impl OneStepPredictor + ?Sized), w: &HistoryWindow) -> Result<()> {
    if w.len() != p.window_len() {
        return Err(Error::Length {
            what: "history window",
            expected: p.window_len(),
            actual: w.len(),
        });
    }
    Ok(())
}

/// Predicts one step, feeds the prediction back as the newest sample, drops the
/// oldest, and repeats `t2` times.
pub fn rolling_forecast<P: OneStepPredictor + ?Sized>(p: &P, window: &HistoryWindow, t2: usize) -> Result<Forecast> {
    Ok(rolling_forecast_batch(p, std::slice::from_ref(window), t2)?.remove(0))
}

/// [`rolling_forecast`] for many windows at once.
pub fn rolling_forecast_batch<P: OneStepPredictor + ?Sized>(
    p: &P,
    windows: &[HistoryWindow],
    t2: usize,
) -> Result<Vec<Forecast>> {
    if t2 == 0 {
        return Err(Error::Config("forecast horizon must be at least 1".into()));
    }
    for w in windows {
        check_len(p, w)?;
    }
    let mut cur = windows.to_vec();
    let mut out: Vec<Forecast> = windows
        .iter()
        .map(|w| Forecast {
            samples: Vec::with_capacity(t2),
            start_index: w.end_index + 1,
        })
        .collect();
    for _ in 0..t2 {
        let next = p.predict_next_batch(&cur)?;
        for ((w, f), h) in cur.iter_mut().zip(&mut out).zip(next) {
            f.samples.push(h);
            w.push(h);
        }
    }
    Ok(out)
}

/// Repeats the most recent sample.
#[derive(Clone, Copy, Debug)]
pub struct Persistence {
    pub window: usize,
}

impl OneStepPredictor for Persistence {
    fn window_len(&self) -> usize {
        self.window
    }

    fn predict_next(&self, window: &HistoryWindow) -> Result<Complex64> {
        check_len(self, window)?;
        Ok(window.last())
    }
}

/// RMS amplitude of a window; 1 for an all-zero window.
fn window_scale(w: &[Complex64]) -> f64 {
    let rms = (w.iter().map(|h| h.norm_sqr()).sum::<f64>() / w.len() as f64).sqrt();
    if rms > 0.0 {
        rms
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub t1: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            t1: 32,
            hidden: 50,
            layers: 2,
        }
    }
}

/// Stacked LSTMs over `(Re, Im)` inputs, dense head to `(Re, Im)` of the next sample.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub params: ParamSet,
}

impl Predictor {
    fn lstm_layers(config: &PredictorConfig) -> Vec<LstmLayer> {
        (0..config.layers)
            .map(|i| LstmLayer {
                name: format!("lstm{i}"),
                input: if i == 0 { 2 } else { config.hidden },
                hidden: config.hidden,
            })
            .collect()
    }

    pub fn init(config: PredictorConfig, seed: u64) -> Result<Self> {
        if config.t1 == 0 || config.hidden == 0 || config.layers == 0 {
            return Err(Error::Config(format!("invalid predictor config {config:?}")));
        }
        let mut rng = rng_for(seed, &[0x15D]);
        let mut params = ParamSet::new();
        for l in Self::lstm_layers(&config) {
            l.init(&mut params, &mut rng)?;
        }
        let bound = 1.0 / (config.hidden as f64).sqrt();
        params.insert("head.w", Tensor::uniform(&[2, config.hidden], bound, &mut rng))?;
        params.insert("head.b", Tensor::zeros(&[2]))?;
        Ok(Self { config, params })
    }

    /// All weights zero.
    pub fn zeros(config: PredictorConfig) -> Result<Self> {
        let p = Self::init(config, 0)?;
        Ok(Self {
            params: p.params.zeros_like(),
            config,
        })
    }

    /// Records the forward pass for a batch. `inputs[t]` is `[B, 2]`; returns `[B, 2]`.
    fn forward_var(&self, tape: &mut Tape, bound: &Bound, inputs: &[Var], batch: usize) -> Result<Var> {
        let layers = Self::lstm_layers(&self.config);
        let vars = layers.iter().map(|l| l.vars(bound)).collect::<Result<Vec<_>>>()?;
        let zero = Tensor::zeros(&[batch, self.config.hidden]);
        let mut states: Vec<(Var, Var)> = (0..layers.len())
            .map(|_| (tape.leaf(zero.clone()), tape.leaf(zero.clone())))
            .collect();
        for &x in inputs {
            let mut inp = x;
            for (state, v) in states.iter_mut().zip(&vars) {
                *state = lstm_cell_step(tape, inp, *state, *v)?;
                inp = state.0;
            }
        }
        let top = states.last().expect("at least one layer").0;
        tape.dense(top, bound.get("head.w")?, Some(bound.get("head.b")?))
    }

    /// Windows divided by their RMS amplitude, so the network sees unit-scale
    /// inputs whatever the fading level. Returns the inputs and the scales.
    fn batch_inputs(tape: &mut Tape, windows: &[&[Complex64]]) -> Result<(Vec<Var>, Vec<f64>)> {
        let t1 = windows[0].len();
        let scales: Vec<f64> = windows.iter().map(|w| window_scale(w)).collect();
        let inputs = (0..t1)
            .map(|t| {
                let data = windows
                    .iter()
                    .zip(&scales)
                    .flat_map(|(w, s)| [w[t].re / s, w[t].im / s])
                    .collect();
                Ok(tape.leaf(Tensor::new(&[windows.len(), 2], data)?))
            })
            .collect::<Result<_>>()?;
        Ok((inputs, scales))
    }

    pub fn to_param_set(&self) -> Result<ParamSet> {
        let mut all = ParamSet::new();
        let c = self.config;
        all.insert(
            "meta.predictor",
            Tensor::from_vec(vec![c.t1 as f64, c.hidden as f64, c.layers as f64]),
        )?;
        for (n, t) in self.params.iter() {
            all.insert(n, t.clone())?;
        }
        Ok(all)
    }

    pub fn from_param_set(all: &ParamSet) -> Result<Self> {
        let m = all.get("meta.predictor")?.data().to_vec();
        if m.len() != 3 {
            return Err(Error::Config("bad predictor metadata".into()));
        }
        let config = PredictorConfig {
            t1: m[0] as usize,
            hidden: m[1] as usize,
            layers: m[2] as usize,
        };
        let mut p = Self::init(config, 0)?;
        let names: Vec<String> = p.params.names().map(str::to_string).collect();
        for n in names {
            let src = all.get(&n)?;
            let dst = p.params.get_mut(&n)?;
            if src.shape() != dst.shape() {
                return Err(shape_err(
                    "predictor checkpoint",
                    format!("{n}: {:?} vs {:?}", src.shape(), dst.shape()),
                ));
            }
            *dst = src.clone();
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_param_set()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_param_set(&ParamSet::load(path)?)
    }
}

impl OneStepPredictor for Predictor {
    fn window_len(&self) -> usize {
        self.config.t1
    }

    fn predict_next(&self, window: &HistoryWindow) -> Result<Complex64> {
        Ok(self.predict_next_batch(std::slice::from_ref(window))?[0])
    }

    fn predict_next_batch(&self, windows: &[HistoryWindow]) -> Result<Vec<Complex64>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        for w in windows {
            check_len(self, w)?;
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let seqs: Vec<&[Complex64]> = windows.iter().map(|w| w.samples()).collect();
        let (inputs, scales) = Self::batch_inputs(&mut tape, &seqs)?;
        let y = self.forward_var(&mut tape, &bound, &inputs, windows.len())?;
        Ok(tape
            .value(y)
            .data()
            .chunks(2)
            .zip(&scales)
            .map(|(p, s)| Complex64::new(p[0] * s, p[1] * s))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorTrainConfig {
    pub model: PredictorConfig,
    pub sos: SosConfig,
    /// Independent channel realizations; the last `holdout_fraction` are held out.
    pub num_sequences: usize,
    pub sequence_len: usize,
    pub holdout_fraction: f64,
    pub epochs: usize,
    /// Windows drawn (without replacement) from the training pool per epoch.
    pub windows_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied after each epoch.
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        Self {
            model: PredictorConfig::default(),
            sos: SosConfig::default(),
            num_sequences: 200,
            sequence_len: 400,
            holdout_fraction: 0.2,
            epochs: 3,
            windows_per_epoch: 16_000,
            batch_size: 64,
            lr: 2e-3,
            lr_decay: 0.5,
            seed: 0,
        }
    }
}

/// Channel realizations sliced into `(window, next sample)` pairs.
#[derive(Clone, Debug)]
pub struct CsiCorpus {
    pub sequences: Vec<Vec<Complex64>>,
    pub t1: usize,
}

impl CsiCorpus {
    pub fn generate(sos: SosConfig, count: usize, len: usize, t1: usize, seed: u64) -> Result<Self> {
        if len <= t1 {
            return Err(Error::Config(format!("sequence length {len} must exceed window {t1}")));
        }
        let sequences = (0..count)
            .map(|i| {
                Ok(SosChannel::new(sos, derive_seed(seed, &[0x5E9, i as u64]))?
                    .generate(0, len)
                    .samples)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sequences, t1 })
    }

    /// `(sequence, start)` of every window with at least `horizon` samples after it.
    pub fn window_positions(&self, horizon: usize) -> Vec<(usize, usize)> {
        self.sequences
            .iter()
            .enumerate()
            .flat_map(|(s, seq)| (0..=seq.len().saturating_sub(self.t1 + horizon)).map(move |i| (s, i)))
            .collect()
    }

    pub fn window(&self, (s, i): (usize, usize)) -> HistoryWindow {
        HistoryWindow::new(self.sequences[s][i..i + self.t1].to_vec(), (i + self.t1 - 1) as i64).expect("non-empty")
    }

    pub fn future(&self, (s, i): (usize, usize), horizon: usize) -> &[Complex64] {
        &self.sequences[s][i + self.t1..i + self.t1 + horizon]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_nmse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedPredictor {
    pub predictor: Predictor,
    pub history: Vec<PredictorEpoch>,
    pub holdout: CsiCorpus,
}

/// `sum |pred - truth|^2 / sum |truth|^2`.
pub fn nmse(pred: &[Complex64], truth: &[Complex64]) -> f64 {
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).norm_sqr()).sum();
    let den: f64 = truth.iter().map(|t| t.norm_sqr()).sum();
    num / den
}

/// One-step NMSE pooled over `positions` of `corpus`.
pub fn one_step_nmse<P: OneStepPredictor + ?Sized>(
    p: &P,
    corpus: &CsiCorpus,
    positions: &[(usize, usize)],
) -> Result<f64> {
    let mut preds = Vec::with_capacity(positions.len());
    let mut truth = Vec::with_capacity(positions.len());
    for chunk in positions.chunks(256) {
        let windows: Vec<HistoryWindow> = chunk.iter().map(|&pos| corpus.window(pos)).collect();
        preds.extend(p.predict_next_batch(&windows)?);
        truth.extend(chunk.iter().map(|&pos| corpus.future(pos, 1)[0]));
    }
    Ok(nmse(&preds, &truth))
}

/// Evenly spaced window positions, at most `count` of them.
pub fn spread_positions(all: &[(usize, usize)], count: usize) -> Vec<(usize, usize)> {
    if all.len() <= count {
        return all.to_vec();
    }
    (0..count).map(|i| all[i * all.len() / count]).collect()
}

/// Supervised one-step-ahead MSE on windows cut from fresh SOS realizations.
pub fn train_predictor(cfg: &PredictorTrainConfig) -> Result<TrainedPredictor> {
    let t1 = cfg.model.t1;
    let n_hold = ((cfg.num_sequences as f64) * cfg.holdout_fraction).round() as usize;
    if cfg.num_sequences <= n_hold || cfg.batch_size == 0 {
        return Err(Error::Config(
            "predictor training needs a non-empty train split and batch".into(),
        ));
    }
    let corpus = CsiCorpus::generate(cfg.sos, cfg.num_sequences, cfg.sequence_len, t1, cfg.seed)?;
    let (train_seqs, hold_seqs) = corpus.sequences.split_at(cfg.num_sequences - n_hold);
    let train = CsiCorpus {
        sequences: train_seqs.to_vec(),
        t1,
    };
    let holdout = CsiCorpus {
        sequences: hold_seqs.to_vec(),
        t1,
    };
    let hold_positions = spread_positions(&holdout.window_positions(1), 2000);
    let mut pool = train.window_positions(1);
    let mut predictor = Predictor::init(cfg.model, cfg.seed)?;
    let mut adam = AdamState::new(&predictor.params, cfg.lr);
    let mut rng = rng_for(cfg.seed, &[0x7A1]);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        pool.shuffle(&mut rng);
        let take = cfg.windows_per_epoch.min(pool.len());
        let mut total = 0.0;
        let mut batches = 0;
        for batch in pool[..take].chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = predictor.params.bind(&mut tape);
            let seqs: Vec<&[Complex64]> = batch.iter().map(|&(s, i)| &train.sequences[s][i..i + t1]).collect();
            let (inputs, scales) = Predictor::batch_inputs(&mut tape, &seqs)?;
            let y = predictor.forward_var(&mut tape, &bound, &inputs, batch.len())?;
            let target: Vec<f64> = batch
                .iter()
                .zip(&scales)
                .flat_map(|(&(s, i), sc)| {
                    let h = train.sequences[s][i + t1];
                    [h.re / sc, h.im / sc]
                })
                .collect();
            let target = tape.leaf(Tensor::new(&[batch.len(), 2], target)?);
            let loss = tape.mse(y, target)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: lv });
            }
            let grads = bound.grads(&tape, loss)?;
            adam_step(&mut predictor.params, &grads, &mut adam)?;
            total += lv;
            batches += 1;
            step += 1;
        }
        adam.lr *= cfg.lr_decay;
        let holdout_nmse = one_step_nmse(&predictor, &holdout, &hold_positions)?;
        if !holdout_nmse.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step,
                loss: holdout_nmse,
            });
        }
        history.push(PredictorEpoch {
            epoch,
            train_loss: total / batches.max(1) as f64,
            holdout_nmse,
        });
    }
    Ok(TrainedPredictor {
        predictor,
        history,
        holdout,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastEval {
    /// NMSE at each forecast step, pooled over windows.
    pub per_step_nmse: Vec<f64>,
    /// Fraction of windows where the model's whole-horizon NMSE beats persistence.
    pub win_rate_vs_persistence: f64,
    pub windows: usize,
}

/// Rolling-forecast accuracy against the true future and against persistence.
pub fn evaluate_forecast<P: OneStepPredictor + ?Sized>(
    p: &P,
    corpus: &CsiCorpus,
    windows: usize,
    t2: usize,
) -> Result<ForecastEval> {
    let positions = spread_positions(&corpus.window_positions(t2), windows);
    if positions.is_empty() {
        return Err(Error::Empty("forecast windows"));
    }
    let mut err = vec![0.0; t2];
    let mut pow = vec![0.0; t2];
    let mut wins = 0;
    for chunk in positions.chunks(128) {
        let ws: Vec<HistoryWindow> = chunk.iter().map(|&pos| corpus.window(pos)).collect();
        let fc = rolling_forecast_batch(p, &ws, t2)?;
        for ((pos, f), w) in chunk.iter().zip(&fc).zip(&ws) {
            let truth = corpus.future(*pos, t2);
            for (j, (a, b)) in f.samples.iter().zip(truth).enumerate() {
                err[j] += (a - b).norm_sqr();
                pow[j] += b.norm_sqr();
            }
            let persist = vec![w.last(); t2];
            if nmse(&f.samples, truth) < nmse(&persist, truth) {
                wins += 1;
            }
        }
    }
    Ok(ForecastEval {
        per_step_nmse: err.iter().zip(&pow).map(|(e, p)| e / p).collect(),
        win_rate_vs_persistence: wins as f64 / positions.len() as f64,
        windows: positions.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oracle(SosChannel, usize);

    impl OneStepPredictor for Oracle {
        fn window_len(&self) -> usize {
            self.1
        }

        fn predict_next(&self, w: &HistoryWindow) -> Result<Complex64> {
            Ok(self.0.sample(w.end_index() + 1))
        }
    }

    fn window_of(ch: &SosChannel, start: i64, t1: usize) -> HistoryWindow {
        HistoryWindow::new(ch.generate(start, t1).samples, start + t1 as i64 - 1).unwrap()
    }

    #[test]
    fn zero_parameters_predict_zero() {
        let p = Predictor::zeros(PredictorConfig::default()).unwrap();
        let ch = SosChannel::new(SosConfig::default(), 1).unwrap();
        let h = p.predict_next(&window_of(&ch, 0, 32)).unwrap();
        assert_eq!(h, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn prediction_is_deterministic_and_length_checked() {
        let p = Predictor::init(PredictorConfig::default(), 3).unwrap();
        let ch = SosChannel::new(SosConfig::default(), 2).unwrap();
        let w = window_of(&ch, 10, 32);
        assert_eq!(p.predict_next(&w).unwrap(), p.predict_next(&w).unwrap());
        assert!(p.predict_next(&window_of(&ch, 10, 31)).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let p = Predictor::init(PredictorConfig::default(), 4).unwrap();
        let ch = SosChannel::new(SosConfig::default(), 5).unwrap();
        let ws: Vec<_> = (0..5).map(|i| window_of(&ch, i * 7, 32)).collect();
        let batch = p.predict_next_batch(&ws).unwrap();
        for (w, b) in ws.iter().zip(batch) {
            assert!((p.predict_next(w).unwrap() - b).norm() < 1e-12);
        }
    }

    #[test]
    fn prediction_scales_with_the_window() {
        let p = Predictor::init(PredictorConfig::default(), 6).unwrap();
        let ch = SosChannel::new(SosConfig::default(), 7).unwrap();
        let w = window_of(&ch, 0, 32);
        let k = Complex64::new(3.0, 0.0);
        let scaled = HistoryWindow::new(w.samples().iter().map(|h| h * k).collect(), 31).unwrap();
        let (a, b) = (p.predict_next(&w).unwrap(), p.predict_next(&scaled).unwrap());
        assert!((b - a * k).norm() < 1e-12 * b.norm().max(1.0));
        let zeros = HistoryWindow::new(vec![Complex64::new(0.0, 0.0); 32], 31).unwrap();
        assert!(p.predict_next(&zeros).unwrap().is_finite());
    }

    #[test]
    fn single_step_forecast_equals_prediction() {
        let p = Predictor::init(PredictorConfig::default(), 6).unwrap();
        let ch = SosChannel::new(SosConfig::default(), 7).unwrap();
        let w = window_of(&ch, 0, 32);
        let f = rolling_forecast(&p, &w, 1).unwrap();
        assert_eq!(f.samples, vec![p.predict_next(&w).unwrap()]);
        assert_eq!(f.start_index, 32);
        assert!(rolling_forecast(&p, &w, 0).is_err());
    }

    #[test]
    fn oracle_rolling_forecast_reproduces_future() {
        let ch = SosChannel::new(SosConfig::default(), 8).unwrap();
        let w = window_of(&ch, 100, 32);
        let f = rolling_forecast(&Oracle(ch.clone(), 32), &w, 24).unwrap();
        assert_eq!(f.samples, ch.generate(132, 24).samples);
    }

    #[test]
    fn persistence_repeats_last_sample() {
        let ch = SosChannel::new(SosConfig::default(), 9).unwrap();
        let w = window_of(&ch, 0, 8);
        let f = rolling_forecast(&Persistence { window: 8 }, &w, 5).unwrap();
        assert!(f.samples.iter().all(|&h| h == w.last()));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = Predictor::init(
            PredictorConfig {
                t1: 8,
                hidden: 5,
                layers: 2,
            },
            1,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        p.save(&path).unwrap();
        let q = Predictor::load(&path).unwrap();
        assert_eq!(p.params, q.params);
        assert_eq!(p.config, q.config);
    }

    #[test]
    fn nmse_definition() {
        let t = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        let p = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        assert!((nmse(&p, &t) - 0.5).abs() < 1e-15);
        assert_eq!(nmse(&t, &t), 0.0);
    }
}
