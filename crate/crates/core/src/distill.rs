//! Student networks that imitate the priority teachers from the feature tensor
//! alone, plus the datasets they learn from.
//!
//! Dataset layout (little-endian): magic `SCDISTL1`, `u8` kind (0 importance,
//! 1 robustness), `u32` c, h, w, `u32` record count; then per record a `u8` split
//! (0 train, 1 holdout), `c*h*w` `f64` features and `c` `f64` targets.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codec::{Codec, FeatureTensor, Image};
use crate::error::{shape_err, Error, Result};
use crate::nn::kaiming_uniform;
use crate::params::{adam_step, AdamState, Bound, CountingReader, ParamSet};
use crate::priority::{combine_priority, teacher_priority, PriorityWeights, TeacherSettings};
use crate::rng::{derive_seed, rng_for};
use crate::stats::{mean, spearman};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SCDISTL1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    Importance,
    Robustness,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Holdout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillRecord {
    pub features: FeatureTensor,
    pub target: Vec<f64>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillDataset {
    pub kind: TargetKind,
    pub shape: [usize; 3],
    pub records: Vec<DistillRecord>,
}

impl DistillDataset {
    pub fn new(kind: TargetKind, shape: [usize; 3]) -> Self {
        Self {
            kind,
            shape,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: DistillRecord) -> Result<()> {
        if record.features.shape() != self.shape || record.target.len() != self.shape[0] {
            return Err(shape_err(
                "distill record",
                format!(
                    "{:?}/{} vs {:?}",
                    record.features.shape(),
                    record.target.len(),
                    self.shape
                ),
            ));
        }
        if record.target.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("distillation targets must lie in [0, 1]".into()));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DistillRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[match self.kind {
            TargetKind::Importance => 0,
            TargetKind::Robustness => 1,
        }])?;
        for d in self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for r in &self.records {
            w.write_all(&[match r.split {
                Split::Train => 0,
                Split::Holdout => 1,
            }])?;
            for v in r.features.tensor().data().iter().chain(&r.target) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = CountingReader { inner: r, offset: 0 };
        let mut magic = [0u8; 8];
        r.fill(&mut magic)?;
        if &magic != MAGIC {
            return Err(r.error("not a distillation dataset".into()));
        }
        let kind = match r.u8()? {
            0 => TargetKind::Importance,
            1 => TargetKind::Robustness,
            k => return Err(r.error(format!("unknown target kind {k}"))),
        };
        let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let count = r.u32()? as usize;
        let mut ds = Self::new(kind, shape);
        let n = shape.iter().product::<usize>();
        for _ in 0..count {
            let split = match r.u8()? {
                0 => Split::Train,
                1 => Split::Holdout,
                s => return Err(r.error(format!("unknown split tag {s}"))),
            };
            let feats = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let target = (0..shape[0]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            ds.push(DistillRecord {
                features: FeatureTensor::new(Tensor::new(&shape, feats)?)?,
                target,
                split,
            })?;
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Runs both teachers on every image. The trailing `holdout_fraction` of images
/// is tagged holdout.
pub fn build_distill_dataset(
    codec: &Codec,
    images: &[Image],
    settings: &TeacherSettings,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(DistillDataset, DistillDataset)> {
    if images.is_empty() {
        return Err(Error::Empty("source image set"));
    }
    let shape = codec.geometry().feature_shape();
    let n_hold = ((images.len() as f64) * holdout_fraction).round() as usize;
    let mut w = DistillDataset::new(TargetKind::Importance, shape);
    let mut r = DistillDataset::new(TargetKind::Robustness, shape);
    for (i, s) in images.iter().enumerate() {
        let a = codec.encode(s)?;
        let t = teacher_priority(&a, s, &codec.decoder, settings, derive_seed(seed, &[0xD157, i as u64]))?;
        let split = if i >= images.len() - n_hold {
            Split::Holdout
        } else {
            Split::Train
        };
        w.push(DistillRecord {
            features: a.clone(),
            target: t.importance.norm,
            split,
        })?;
        r.push(DistillRecord {
            features: a,
            target: t.robustness.scores.norm,
            split,
        })?;
    }
    Ok((w, r))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    /// Each feature map is average-pooled to `grid x grid`.
    pub grid: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            grid: 2,
            hidden: 24,
            epochs: 300,
            batch_size: 32,
            lr: 3e-3,
            seed: 0,
        }
    }
}

/// Pool each feature map to a grid, flatten, dense + ReLU, dense + sigmoid.
#[derive(Clone, Debug)]
pub struct Student {
    pub kind: TargetKind,
    pub shape: [usize; 3],
    pub grid: usize,
    pub params: ParamSet,
}

impl Student {
    pub fn init(kind: TargetKind, shape: [usize; 3], grid: usize, hidden: usize, seed: u64) -> Result<Self> {
        if grid == 0 || grid > shape[1].min(shape[2]) || hidden == 0 {
            return Err(Error::Config(format!(
                "invalid student grid {grid} / hidden {hidden} for {shape:?}"
            )));
        }
        let mut rng = rng_for(seed, &[0x57D]);
        let c = shape[0];
        let inp = c * grid * grid;
        let mut params = ParamSet::new();
        params.insert("fc1.w", kaiming_uniform(&[hidden, inp], inp, &mut rng))?;
        params.insert("fc1.b", Tensor::zeros(&[hidden]))?;
        params.insert("fc2.w", kaiming_uniform(&[c, hidden], hidden, &mut rng))?;
        params.insert("fc2.b", Tensor::zeros(&[c]))?;
        Ok(Self {
            kind,
            shape,
            grid,
            params,
        })
    }

    fn pooled(&self, a: &FeatureTensor) -> Result<Tensor> {
        if a.shape() != self.shape {
            return Err(shape_err(
                "student",
                format!("features {:?} vs student {:?}", a.shape(), self.shape),
            ));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(a.tensor().clone());
        let p = tape.adaptive_avg_pool(x, self.grid, self.grid)?;
        Ok(tape.value(p).clone())
    }

    fn head(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = tape.dense(x, p.get("fc1.w")?, Some(p.get("fc1.b")?))?;
        let h = tape.relu(h)?;
        let y = tape.dense(h, p.get("fc2.w")?, Some(p.get("fc2.b")?))?;
        tape.sigmoid(y)
    }

    /// Predicted normalized scores, one per feature.
    pub fn infer(&self, a: &FeatureTensor) -> Result<Vec<f64>> {
        let pooled = self.pooled(a)?;
        let n = pooled.len();
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.leaf(pooled.reshape(&[n])?);
        let y = self.head(&mut tape, &p, x)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn to_param_set(&self) -> Result<ParamSet> {
        let mut all = ParamSet::new();
        let kind = match self.kind {
            TargetKind::Importance => 0.0,
            TargetKind::Robustness => 1.0,
        };
        let [c, h, w] = self.shape;
        all.insert(
            "meta.student",
            Tensor::from_vec(vec![kind, c as f64, h as f64, w as f64, self.grid as f64]),
        )?;
        for (n, t) in self.params.iter() {
            all.insert(n, t.clone())?;
        }
        Ok(all)
    }

    pub fn from_param_set(all: &ParamSet) -> Result<Self> {
        let m = all.get("meta.student")?.data().to_vec();
        if m.len() != 5 {
            return Err(Error::Config("bad student metadata".into()));
        }
        let kind = if m[0] == 0.0 {
            TargetKind::Importance
        } else {
            TargetKind::Robustness
        };
        let shape = [m[1] as usize, m[2] as usize, m[3] as usize];
        let hidden = all.get("fc1.w")?.shape()[0];
        let mut s = Self::init(kind, shape, m[4] as usize, hidden, 0)?;
        for n in ["fc1.w", "fc1.b", "fc2.w", "fc2.b"] {
            let src = all.get(n)?;
            let dst = s.params.get_mut(n)?;
            if src.shape() != dst.shape() {
                return Err(shape_err(
                    "student checkpoint",
                    format!("{n}: {:?} vs {:?}", src.shape(), dst.shape()),
                ));
            }
            *dst = src.clone();
        }
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_param_set()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_param_set(&ParamSet::load(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentReport {
    pub epoch_losses: Vec<f64>,
    pub train_mse: f64,
    /// `None` when the dataset has no holdout records.
    pub holdout_mse: Option<f64>,
    /// Mean per-record Spearman correlation between student and teacher.
    pub holdout_spearman: Option<f64>,
}

/// Mean squared error and mean Spearman correlation of `student` on `records`.
pub fn evaluate_student<'a>(student: &Student, records: impl Iterator<Item = &'a DistillRecord>) -> Result<(f64, f64)> {
    let mut se = Vec::new();
    let mut rho = Vec::new();
    for r in records {
        let y = student.infer(&r.features)?;
        se.push(y.iter().zip(&r.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64);
        rho.push(spearman(&y, &r.target));
    }
    if se.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    Ok((mean(&se), mean(&rho)))
}

/// MSE regression of the student's sigmoid outputs onto the teacher targets.
pub fn train_student(ds: &DistillDataset, cfg: &StudentConfig) -> Result<(Student, StudentReport)> {
    let train: Vec<&DistillRecord> = ds.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Empty("student training split"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut student = Student::init(ds.kind, ds.shape, cfg.grid, cfg.hidden, cfg.seed)?;
    let inputs: Vec<Vec<f64>> = train
        .iter()
        .map(|r| Ok(student.pooled(&r.features)?.into_data()))
        .collect::<Result<_>>()?;
    let width = inputs[0].len();
    let c = ds.shape[0];
    let mut adam = AdamState::new(&student.params, cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = rng_for(cfg.seed, &[0x5757]);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let p = student.params.bind(&mut tape);
            let xs = batch.iter().flat_map(|&i| inputs[i].iter().copied()).collect();
            let x = tape.leaf(Tensor::new(&[batch.len(), width], xs)?);
            let ts = batch.iter().flat_map(|&i| train[i].target.iter().copied()).collect();
            let t = tape.leaf(Tensor::new(&[batch.len(), c], ts)?);
            let y = student.head(&mut tape, &p, x)?;
            let loss = tape.mse(y, t)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: lv });
            }
            let g = p.grads(&tape, loss)?;
            adam_step(&mut student.params, &g, &mut adam)?;
            total += lv * batch.len() as f64;
            step += 1;
        }
        epoch_losses.push(total / train.len() as f64);
    }
    let (train_mse, _) = evaluate_student(&student, train.iter().copied())?;
    let holdout = if ds.split(Split::Holdout).next().is_some() {
        Some(evaluate_student(&student, ds.split(Split::Holdout))?)
    } else {
        None
    };
    Ok((
        student,
        StudentReport {
            epoch_losses,
            train_mse,
            holdout_mse: holdout.map(|h| h.0),
            holdout_spearman: holdout.map(|h| h.1),
        },
    ))
}

/// Importance and robustness students paired for inference.
#[derive(Clone, Debug)]
pub struct Students {
    pub wnet: Student,
    pub rnet: Student,
}

/// Priority from the students alone. Needs no image, decoder or gradient.
pub fn student_infer(a: &FeatureTensor, students: &Students, weights: PriorityWeights) -> Result<Vec<f64>> {
    let w = students.wnet.infer(a)?;
    let r = students.rnet.infer(a)?;
    combine_priority(&w, &r, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{random_image, Geometry};
    use crate::priority::NoiseBudget;
    use rand::Rng;

    fn quick_settings() -> TeacherSettings {
        TeacherSettings {
            budget: NoiseBudget {
                steps: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn images(n: usize, seed: u64) -> Vec<Image> {
        let mut rng = rng_for(seed, &[]);
        (0..n).map(|_| random_image(16, 16, &mut rng)).collect()
    }

    #[test]
    fn dataset_counts_ranges_and_bytes() {
        let codec = Codec::init(Geometry::DESK, 1).unwrap();
        let imgs = images(5, 2);
        let (w, r) = build_distill_dataset(&codec, &imgs, &quick_settings(), 0.4, 7).unwrap();
        assert_eq!(w.records.len(), 5);
        assert_eq!(r.records.len(), 5);
        assert_eq!(w.split(Split::Holdout).count(), 2);
        for rec in w.records.iter().chain(&r.records) {
            assert!(rec.target.iter().all(|t| (0.0..=1.0).contains(t)));
        }
        let (w2, _) = build_distill_dataset(&codec, &imgs, &quick_settings(), 0.4, 7).unwrap();
        let (mut b1, mut b2) = (Vec::new(), Vec::new());
        w.write_to(&mut b1).unwrap();
        w2.write_to(&mut b2).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(DistillDataset::read_from(&b1[..]).unwrap(), w);
        assert!(matches!(
            DistillDataset::read_from(&b1[..b1.len() - 3]),
            Err(Error::Format { .. })
        ));
        assert!(build_distill_dataset(&codec, &[], &quick_settings(), 0.1, 7).is_err());
    }

    #[test]
    fn student_memorizes_single_record() {
        let mut rng = rng_for(3, &[]);
        let mut ds = DistillDataset::new(TargetKind::Importance, [24, 4, 4]);
        ds.push(DistillRecord {
            features: FeatureTensor::new(Tensor::uniform(&[24, 4, 4], 1.0, &mut rng)).unwrap(),
            target: (0..24).map(|_| rng.random_range(0.05..0.95)).collect(),
            split: Split::Train,
        })
        .unwrap();
        let cfg = StudentConfig {
            epochs: 1500,
            lr: 1e-2,
            ..Default::default()
        };
        let (_, rep) = train_student(&ds, &cfg).unwrap();
        assert!(rep.train_mse < 1e-4, "{}", rep.train_mse);
        assert!(rep.holdout_mse.is_none());
    }

    #[test]
    fn inference_bounds_shape_and_determinism() {
        let s = Students {
            wnet: Student::init(TargetKind::Importance, [24, 4, 4], 2, 24, 1).unwrap(),
            rnet: Student::init(TargetKind::Robustness, [24, 4, 4], 2, 24, 2).unwrap(),
        };
        let a = FeatureTensor::new(Tensor::uniform(&[24, 4, 4], 3.0, &mut rng_for(4, &[]))).unwrap();
        let xi = student_infer(&a, &s, PriorityWeights::default()).unwrap();
        assert_eq!(xi.len(), 24);
        assert!(xi.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(xi, student_infer(&a, &s, PriorityWeights::default()).unwrap());
        assert!(student_infer(&FeatureTensor::zeros(24, 8, 8), &s, PriorityWeights::default()).is_err());
    }

    #[test]
    fn full_grid_pools_to_five_by_five() {
        let s = Student::init(TargetKind::Importance, [24, 8, 8], 5, 24, 1).unwrap();
        assert_eq!(s.params.get("fc1.w").unwrap().shape(), [24, 600]);
        assert_eq!(s.infer(&FeatureTensor::zeros(24, 8, 8)).unwrap().len(), 24);
    }

    #[test]
    fn student_checkpoint_round_trip() {
        let s = Student::init(TargetKind::Robustness, [24, 4, 4], 2, 16, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        s.save(&p).unwrap();
        let t = Student::load(&p).unwrap();
        assert_eq!(t.params, s.params);
        assert_eq!(t.kind, TargetKind::Robustness);
        assert_eq!(t.grid, 2);
    }

    #[test]
    fn empty_train_split_rejected() {
        let ds = DistillDataset::new(TargetKind::Importance, [24, 4, 4]);
        assert!(matches!(
            train_student(&ds, &StudentConfig::default()),
            Err(Error::Empty(_))
        ));
    }
}
