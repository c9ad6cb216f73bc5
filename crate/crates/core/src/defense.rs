//! Compression-as-pre-processing defenses: quality sweeps, vaccination by
//! retraining on compressed images, the vote ensemble, and the
//! transferability experiment.
//!
//! Evaluation fans out across (model, quality, instance) work items with
//! [`parallel_map`]; every reduction afterwards runs in a fixed order, so
//! results are bit-identical to sequential evaluation at any thread count.

use std::fmt;

use crate::attacks::{attack_dataset, AttackConfig, AttackError};
use crate::codec::{compress, CodecError, ImageU8, QualityFactor};
use crate::data_io::Dataset;
use crate::nn::{predict, train, Model, NnError, TrainConfig};
use crate::parallel::parallel_map;
use crate::rng::Rng;

#[derive(Debug)]
pub enum DefenseError {
    Nn(NnError),
    Attack(AttackError),
    Codec(CodecError),
    EmptyGrid,
    GridNotDecreasing,
    BadGridSyntax(String),
    EmptyDataset,
    SuiteMismatch(String),
}

impl fmt::Display for DefenseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DefenseError::Nn(e) => write!(f, "{e}"),
            DefenseError::Attack(e) => write!(f, "{e}"),
            DefenseError::Codec(e) => write!(f, "{e}"),
            DefenseError::EmptyGrid => write!(f, "quality grid is empty"),
            DefenseError::GridNotDecreasing => write!(f, "quality grid must be strictly decreasing"),
            DefenseError::BadGridSyntax(s) => write!(f, "bad quality grid '{s}'"),
            DefenseError::EmptyDataset => write!(f, "dataset is empty"),
            DefenseError::SuiteMismatch(msg) => write!(f, "suite mismatch: {msg}"),
        }
    }
}

impl std::error::Error for DefenseError {}

impl From<NnError> for DefenseError {
    fn from(e: NnError) -> Self {
        DefenseError::Nn(e)
    }
}

impl From<AttackError> for DefenseError {
    fn from(e: AttackError) -> Self {
        DefenseError::Attack(e)
    }
}

impl From<CodecError> for DefenseError {
    fn from(e: CodecError) -> Self {
        DefenseError::Codec(e)
    }
}

/// Strictly decreasing list of quality factors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QualityGrid(Vec<QualityFactor>);

impl QualityGrid {
    pub fn new(qualities: Vec<QualityFactor>) -> Result<Self, DefenseError> {
        if qualities.is_empty() {
            return Err(DefenseError::EmptyGrid);
        }
        if qualities.windows(2).any(|w| w[0] <= w[1]) {
            return Err(DefenseError::GridNotDecreasing);
        }
        Ok(QualityGrid(qualities))
    }

    /// 100 down to 20 in steps of 10: nine qualities.
    pub fn default_grid() -> Self {
        QualityGrid::parse("100:20:10").expect("default grid is valid")
    }

    /// `start:stop:step`, inclusive and descending, e.g. `100:20:10`.
    pub fn parse(spec: &str) -> Result<Self, DefenseError> {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || DefenseError::BadGridSyntax(spec.to_string());
        let [start, stop, step] = parts.as_slice() else {
            return Err(bad());
        };
        let start: u32 = start.parse().map_err(|_| bad())?;
        let stop: u32 = stop.parse().map_err(|_| bad())?;
        let step: u32 = step.parse().map_err(|_| bad())?;
        if step == 0 || start < stop {
            return Err(bad());
        }
        let mut qualities = Vec::new();
        let mut q = start;
        loop {
            qualities.push(QualityFactor::new(q).map_err(|_| bad())?);
            if q < stop + step {
                break;
            }
            q -= step;
        }
        QualityGrid::new(qualities)
    }

    pub fn qualities(&self) -> &[QualityFactor] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for QualityGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.0.iter().map(|q| q.to_string()).collect();
        f.write_str(&labels.join(","))
    }
}

/// Base model plus one retrained model per grid quality, in grid order.
#[derive(Debug, Clone)]
pub struct VaccinatedSuite {
    base: Model,
    models: Vec<(QualityFactor, Model)>,
    grid: QualityGrid,
}

impl VaccinatedSuite {
    pub fn new(
        base: Model,
        models: Vec<(QualityFactor, Model)>,
        grid: QualityGrid,
    ) -> Result<Self, DefenseError> {
        if models.len() != grid.len()
            || models
                .iter()
                .zip(grid.qualities())
                .any(|((q, _), gq)| q != gq)
        {
            return Err(DefenseError::SuiteMismatch(
                "suite must hold exactly one model per grid entry, in grid order".into(),
            ));
        }
        for (q, m) in &models {
            if m.spec() != base.spec() {
                return Err(DefenseError::SuiteMismatch(format!(
                    "model at quality {q} differs in architecture from the base"
                )));
            }
        }
        Ok(VaccinatedSuite { base, models, grid })
    }

    pub fn base(&self) -> &Model {
        &self.base
    }

    pub fn models(&self) -> &[(QualityFactor, Model)] {
        &self.models
    }

    pub fn grid(&self) -> &QualityGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Compress every image of a dataset once at the given quality.
pub fn compress_dataset(ds: &Dataset, quality: QualityFactor) -> Dataset {
    ds.map_images(format!("{}@q{}", ds.name(), quality), |img| compress(img, quality))
}

/// Classify the JPEG round trip of an image instead of the image itself.
pub fn defend_predict(
    model: &Model,
    image: &ImageU8,
    quality: QualityFactor,
) -> Result<(usize, f32), NnError> {
    predict(model, &compress(image, quality))
}

/// Retrain the base model once per grid quality, walking the grid in
/// decreasing-quality order and warm-starting each run from the previous
/// model in the chain (the first from the base). The training set is
/// compressed once up front per quality.
pub fn vaccinate(
    base: &Model,
    train_set: &Dataset,
    grid: &QualityGrid,
    cfg: &TrainConfig,
) -> Result<VaccinatedSuite, DefenseError> {
    if train_set.is_empty() {
        return Err(DefenseError::EmptyDataset);
    }
    let mut models = Vec::with_capacity(grid.len());
    let mut previous = base.clone();
    for &quality in grid.qualities() {
        let compressed = compress_dataset(train_set, quality);
        // Decorrelate shuffle/dropout streams across the chain while staying
        // a pure function of (cfg.seed, quality).
        let mut cfg_q = cfg.clone();
        cfg_q.seed = Rng::new(cfg.seed).derive(u64::from(quality.get())).next_u64();
        let trained = train(&previous, &compressed, &cfg_q)?;
        previous = trained.clone();
        models.push((quality, trained));
    }
    VaccinatedSuite::new(base.clone(), models, grid.clone())
}

/// Plurality vote outcome over every (model, quality) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleVerdict {
    pub label: usize,
    /// Vote count per class; sums to `total_votes`.
    pub votes: Vec<u32>,
    pub total_votes: u32,
    /// Per-class softmax probability summed over all votes, in the fixed
    /// (model-major, quality-minor) order.
    pub aggregate_confidence: Vec<f32>,
}

/// Every suite model votes on the image compressed at every grid quality
/// (|suite| x |grid| votes). Ties break by aggregate confidence, then by
/// the lowest class index.
pub fn ensemble_predict(
    suite: &VaccinatedSuite,
    image: &ImageU8,
    threads: usize,
) -> Result<EnsembleVerdict, NnError> {
    let classes = suite.base().spec().classes;
    let pairs: Vec<(usize, QualityFactor)> = (0..suite.len())
        .flat_map(|m| suite.grid().qualities().iter().map(move |&q| (m, q)))
        .collect();
    let outcomes = parallel_map(&pairs, threads, |&(m, q)| {
        let compressed = compress(image, q);
        let input = crate::nn::image_to_input(&compressed);
        let probs = crate::nn::forward(&suite.models()[m].1, &input, &crate::nn::ForwardMode::Eval)?;
        let (label, _) = crate::nn::argmax_probs(probs.data());
        Ok::<(usize, Vec<f32>), NnError>((label, probs.into_data()))
    });

    let mut votes = vec![0u32; classes];
    let mut confidence = vec![0.0f32; classes];
    let mut total = 0u32;
    for outcome in outcomes {
        let (label, probs) = outcome?;
        votes[label] += 1;
        total += 1;
        for (c, p) in confidence.iter_mut().zip(&probs) {
            *c += p;
        }
    }

    let mut label = 0usize;
    for c in 1..classes {
        if votes[c] > votes[label] || (votes[c] == votes[label] && confidence[c] > confidence[label]) {
            label = c;
        }
    }
    Ok(EnsembleVerdict {
        label,
        votes,
        total_votes: total,
        aggregate_confidence: confidence,
    })
}

/// Plain accuracy of a model on a dataset.
pub fn accuracy(model: &Model, dataset: &Dataset, threads: usize) -> Result<f64, DefenseError> {
    if dataset.is_empty() {
        return Err(DefenseError::EmptyDataset);
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let hits = parallel_map(&indices, threads, |&i| {
        predict(model, &dataset.images()[i]).map(|(pred, _)| pred == dataset.labels()[i])
    });
    let mut correct = 0u64;
    for hit in hits {
        if hit? {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Accuracy of the full ensemble vote on a dataset.
pub fn ensemble_accuracy(
    suite: &VaccinatedSuite,
    dataset: &Dataset,
    threads: usize,
) -> Result<f64, DefenseError> {
    if dataset.is_empty() {
        return Err(DefenseError::EmptyDataset);
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    // Parallelize across instances; each verdict is computed sequentially.
    let hits = parallel_map(&indices, threads, |&i| {
        ensemble_predict(suite, &dataset.images()[i], 1)
            .map(|v| v.label == dataset.labels()[i])
    });
    let mut correct = 0u64;
    for hit in hits {
        if hit? {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Test-time compression setting: a quality factor, or the no-compression
/// sentinel. The sentinel never reaches the codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestQuality {
    /// No compression applied (rendered as `phi` in CSV output).
    Phi,
    Quality(QualityFactor),
}

impl TestQuality {
    pub fn parse(s: &str) -> Result<Self, DefenseError> {
        if s == "phi" {
            Ok(TestQuality::Phi)
        } else {
            let q: u32 = s
                .parse()
                .map_err(|_| DefenseError::BadGridSyntax(s.to_string()))?;
            Ok(TestQuality::Quality(
                QualityFactor::new(q).map_err(|_| DefenseError::BadGridSyntax(s.to_string()))?,
            ))
        }
    }
}

/// One model identified for sweep evaluation.
pub struct SweepEntry<'a> {
    pub id: String,
    /// Quality the model was vaccinated at; None for the base model.
    pub train_quality: Option<QualityFactor>,
    pub model: &'a Model,
}

/// One (model, test quality) evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub model_id: String,
    pub train_quality: Option<QualityFactor>,
    pub test_quality: TestQuality,
    /// Attack tag of the evaluated dataset: `none`, `fgsm`, or `deepfool`.
    pub attack: String,
    pub epsilon: f64,
    pub accuracy: f64,
    /// Present when an aligned clean set was supplied.
    pub misclass_success: Option<f64>,
}

impl SweepRecord {
    pub fn train_quality_label(&self) -> String {
        match self.train_quality {
            Some(q) => q.to_string(),
            None => "base".to_string(),
        }
    }

    pub fn test_quality_label(&self) -> String {
        match self.test_quality {
            TestQuality::Phi => "phi".to_string(),
            TestQuality::Quality(q) => q.to_string(),
        }
    }
}

/// Evaluate each model on the dataset at each test quality: accuracy always,
/// and misclassification success against `clean` when an aligned clean set
/// is supplied (denominator: instances the model classifies correctly on the
/// uncompressed clean set; numerator: those flipped on the compressed
/// evaluation image). One record per (model, quality), in argument order.
pub fn evaluate(
    entries: &[SweepEntry<'_>],
    dataset: &Dataset,
    clean: Option<&Dataset>,
    qualities: &[TestQuality],
    attack: &str,
    epsilon: f64,
    threads: usize,
) -> Result<Vec<SweepRecord>, DefenseError> {
    if dataset.is_empty() {
        return Err(DefenseError::EmptyDataset);
    }
    if let Some(clean) = clean {
        if clean.len() != dataset.len() || clean.labels() != dataset.labels() {
            return Err(DefenseError::Attack(AttackError::MisalignedSets));
        }
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut records = Vec::with_capacity(entries.len() * qualities.len());
    for entry in entries {
        // Correctness on the raw clean set, computed once per model.
        let clean_correct: Option<Vec<bool>> = match clean {
            Some(clean) => {
                let flags = parallel_map(&indices, threads, |&i| {
                    predict(entry.model, &clean.images()[i]).map(|(p, _)| p == clean.labels()[i])
                });
                Some(flags.into_iter().collect::<Result<_, _>>()?)
            }
            None => None,
        };
        for &tq in qualities {
            let hits = parallel_map(&indices, threads, |&i| {
                let image = &dataset.images()[i];
                let pred = match tq {
                    TestQuality::Phi => predict(entry.model, image)?,
                    TestQuality::Quality(q) => defend_predict(entry.model, image, q)?,
                };
                Ok::<bool, NnError>(pred.0 == dataset.labels()[i])
            });
            let mut correct = 0u64;
            let mut flipped = 0u64;
            let mut denom = 0u64;
            for (i, hit) in hits.into_iter().enumerate() {
                let hit = hit?;
                if hit {
                    correct += 1;
                }
                if let Some(flags) = &clean_correct {
                    if flags[i] {
                        denom += 1;
                        if !hit {
                            flipped += 1;
                        }
                    }
                }
            }
            let misclass_success = match &clean_correct {
                Some(_) if denom > 0 => Some(flipped as f64 / denom as f64),
                Some(_) => return Err(DefenseError::Attack(AttackError::NoCorrectlyClassified)),
                None => None,
            };
            records.push(SweepRecord {
                model_id: entry.id.clone(),
                train_quality: entry.train_quality,
                test_quality: tq,
                attack: attack.to_string(),
                epsilon,
                accuracy: correct as f64 / dataset.len() as f64,
                misclass_success,
            });
        }
    }
    Ok(records)
}

/// Cross-model attack evaluation. Row i: the adversarial set crafted against
/// model i (base first, then the suite in grid order); column j: accuracy of
/// model j on that set, evaluated without test-time compression. The
/// diagonal is the self-attack accuracy.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    pub model_ids: Vec<String>,
    pub accuracy: Vec<Vec<f64>>,
}

impl TransferMatrix {
    pub fn mean_diagonal(&self) -> f64 {
        let n = self.accuracy.len();
        self.accuracy.iter().enumerate().map(|(i, row)| row[i]).sum::<f64>() / n as f64
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, row) in self.accuracy.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    total += v;
                    count += 1;
                }
            }
        }
        total / count as f64
    }
}

pub fn transferability_matrix(
    suite: &VaccinatedSuite,
    dataset: &Dataset,
    attack_cfg: &AttackConfig,
    threads: usize,
) -> Result<TransferMatrix, DefenseError> {
    if dataset.is_empty() {
        return Err(DefenseError::EmptyDataset);
    }
    let mut models: Vec<(String, &Model)> = vec![("base".to_string(), suite.base())];
    for (q, m) in suite.models() {
        models.push((format!("m_{q}"), m));
    }
    let mut matrix = Vec::with_capacity(models.len());
    for (_, attacked) in &models {
        let (adv, _) = attack_dataset(attacked, dataset, attack_cfg, threads)?;
        let mut row = Vec::with_capacity(models.len());
        for (_, evaluator) in &models {
            row.push(accuracy(evaluator, &adv, threads)?);
        }
        matrix.push(row);
    }
    Ok(TransferMatrix {
        model_ids: models.into_iter().map(|(id, _)| id).collect(),
        accuracy: matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::generate_synthetic;
    use crate::nn::{build_network, ArchId, LayerSpec, NetworkSpec};
    use crate::tensor::Tensor;
    use std::collections::BTreeMap;

    fn q(v: u32) -> QualityFactor {
        QualityFactor::new(v).unwrap()
    }

    #[test]
    fn grid_parsing() {
        let grid = QualityGrid::parse("100:20:10").unwrap();
        assert_eq!(grid.len(), 9, "100 through 20 step 10 gives nine qualities");
        assert_eq!(grid.qualities().first().unwrap().get(), 100);
        assert_eq!(grid.qualities().last().unwrap().get(), 20);
        assert_eq!(QualityGrid::default_grid(), grid);

        let grid = QualityGrid::parse("90:70:20").unwrap();
        assert_eq!(
            grid.qualities().iter().map(|v| v.get()).collect::<Vec<_>>(),
            vec![90, 70]
        );

        assert!(QualityGrid::parse("20:100:10").is_err());
        assert!(QualityGrid::parse("100:20:0").is_err());
        assert!(QualityGrid::parse("100:20").is_err());
        assert!(QualityGrid::parse("abc:20:10").is_err());
    }

    #[test]
    fn grid_must_strictly_decrease() {
        assert!(QualityGrid::new(vec![q(80), q(80)]).is_err());
        assert!(QualityGrid::new(vec![q(60), q(80)]).is_err());
        assert!(QualityGrid::new(vec![]).is_err());
        assert!(QualityGrid::new(vec![q(80), q(60)]).is_ok());
    }

    #[test]
    fn defend_predict_on_codec_fixed_point_matches_predict() {
        let model = build_network(ArchId::Toy, (16, 16, 3), 3, 8).unwrap();
        // Uniform gray is a fixed point of the codec at any quality.
        let img = crate::codec::ImageU8::filled(16, 16, [128, 128, 128]).unwrap();
        let plain = crate::nn::predict(&model, &img).unwrap();
        for quality in [20, 60, 100] {
            assert_eq!(defend_predict(&model, &img, q(quality)).unwrap(), plain);
        }
        // Determinism.
        assert_eq!(
            defend_predict(&model, &img, q(50)).unwrap(),
            defend_predict(&model, &img, q(50)).unwrap()
        );
    }

    #[test]
    fn vaccinate_with_zero_epochs_copies_base() {
        let base = build_network(ArchId::Toy, (16, 16, 3), 3, 9).unwrap();
        let data = generate_synthetic(3, 4, (16, 16), 9).unwrap();
        let grid = QualityGrid::default_grid();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let suite = vaccinate(&base, &data, &grid, &cfg).unwrap();
        assert_eq!(suite.len(), 9, "default grid trains nine models");
        for (_, model) in suite.models() {
            for (name, t) in base.params() {
                let o = &model.params()[name];
                assert_eq!(t.shape(), o.shape(), "vaccination must preserve shapes");
                assert!(
                    t.data().iter().zip(o.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
                    "epochs=0 must propagate parameters unchanged through {name}"
                );
            }
        }
    }

    #[test]
    fn vaccinate_rejects_empty_training_set() {
        let base = build_network(ArchId::Toy, (16, 16, 3), 3, 9).unwrap();
        let empty = Dataset::new(vec![], vec![], 3, "empty").unwrap();
        assert!(matches!(
            vaccinate(&base, &empty, &QualityGrid::default_grid(), &TrainConfig::default()),
            Err(DefenseError::EmptyDataset)
        ));
    }

    /// Constant-output stub: zero weights, a bias spike on one class.
    fn stub_model(classes: usize, hot: usize, bias_scale: f32) -> Model {
        let spec = NetworkSpec {
            input: (3, 1, 1),
            classes,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: classes },
                LayerSpec::Softmax,
            ],
        };
        let mut bias = vec![0.0f32; classes];
        bias[hot] = bias_scale;
        let mut params = BTreeMap::new();
        params.insert("dense0.weight".to_string(), Tensor::zeros(vec![classes, 3]));
        params.insert("dense0.bias".to_string(), Tensor::new(vec![classes], bias));
        Model::from_parts(spec, params, 0).unwrap()
    }

    #[test]
    fn single_model_single_quality_ensemble_degenerates_to_defend_predict() {
        let base = build_network(ArchId::Toy, (16, 16, 3), 3, 10).unwrap();
        let data = generate_synthetic(3, 2, (16, 16), 10).unwrap();
        let grid = QualityGrid::new(vec![q(80)]).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let suite = vaccinate(&base, &data, &grid, &cfg).unwrap();

        let img = &data.images()[0];
        let verdict = ensemble_predict(&suite, img, 1).unwrap();
        assert_eq!(verdict.total_votes, 1);
        let (label, _) = defend_predict(&suite.models()[0].1, img, q(80)).unwrap();
        assert_eq!(verdict.label, label);
    }

    #[test]
    fn default_suite_casts_81_votes_and_conserves_them() {
        let base = build_network(ArchId::Toy, (16, 16, 3), 3, 11).unwrap();
        let data = generate_synthetic(3, 2, (16, 16), 11).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let suite = vaccinate(&base, &data, &QualityGrid::default_grid(), &cfg).unwrap();
        let verdict = ensemble_predict(&suite, &data.images()[0], 0).unwrap();
        assert_eq!(verdict.total_votes, 81);
        assert_eq!(verdict.votes.iter().sum::<u32>(), 81);
        assert_eq!(verdict.votes.len(), 3);
        assert_eq!(verdict.aggregate_confidence.len(), 3);
    }

    #[test]
    fn vote_ties_break_by_aggregate_confidence_then_lowest_index() {
        // Three constant stubs, one per class, over a three-quality grid:
        // votes split 3/3/3 and the middle stub is far more confident.
        let grid = QualityGrid::parse("100:20:40").unwrap();
        let models = vec![
            (q(100), stub_model(3, 0, 2.0)),
            (q(60), stub_model(3, 1, 6.0)),
            (q(20), stub_model(3, 2, 2.0)),
        ];
        let suite = VaccinatedSuite::new(stub_model(3, 0, 2.0), models, grid).unwrap();
        let img = crate::codec::ImageU8::filled(1, 1, [90, 120, 40]).unwrap();
        let verdict = ensemble_predict(&suite, &img, 1).unwrap();
        assert_eq!(verdict.votes, vec![3, 3, 3]);
        assert_eq!(verdict.label, 1, "confidence should break the vote tie");

        // With equal confidences everywhere the tie falls to class 0.
        let grid = QualityGrid::parse("100:20:40").unwrap();
        let models = vec![
            (q(100), stub_model(3, 0, 4.0)),
            (q(60), stub_model(3, 1, 4.0)),
            (q(20), stub_model(3, 2, 4.0)),
        ];
        let suite = VaccinatedSuite::new(stub_model(3, 0, 4.0), models, grid).unwrap();
        let verdict = ensemble_predict(&suite, &img, 1).unwrap();
        assert_eq!(verdict.votes, vec![3, 3, 3]);
        assert_eq!(verdict.label, 0, "full tie falls to the lowest class index");
    }

    #[test]
    fn ensemble_verdicts_are_thread_count_independent() {
        let base = build_network(ArchId::Toy, (16, 16, 3), 3, 12).unwrap();
        let data = generate_synthetic(3, 2, (16, 16), 12).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let suite = vaccinate(&base, &data, &QualityGrid::default_grid(), &cfg).unwrap();
        let img = &data.images()[1];
        let sequential = ensemble_predict(&suite, img, 1).unwrap();
        for threads in [2, 4, 16] {
            let parallel = ensemble_predict(&suite, img, threads).unwrap();
            assert_eq!(parallel, sequential, "threads={threads}");
        }
    }

    #[test]
    fn evaluate_at_phi_equals_plain_accuracy() {
        let model = build_network(ArchId::Toy, (16, 16, 3), 3, 13).unwrap();
        let data = generate_synthetic(3, 5, (16, 16), 13).unwrap();
        let plain = accuracy(&model, &data, 1).unwrap();
        let entries = [SweepEntry {
            id: "base".into(),
            train_quality: None,
            model: &model,
        }];
        let records = evaluate(&entries, &data, None, &[TestQuality::Phi], "none", 0.0, 1).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].accuracy, plain);
        assert_eq!(records[0].misclass_success, None);
        assert_eq!(records[0].test_quality_label(), "phi");
        assert_eq!(records[0].train_quality_label(), "base");
    }

    #[test]
    fn evaluate_duplicate_quality_gives_identical_records() {
        let model = build_network(ArchId::Toy, (16, 16, 3), 3, 14).unwrap();
        let data = generate_synthetic(3, 4, (16, 16), 14).unwrap();
        let entries = [SweepEntry {
            id: "base".into(),
            train_quality: None,
            model: &model,
        }];
        let tq = TestQuality::Quality(q(70));
        let records = evaluate(&entries, &data, Some(&data), &[tq, tq], "none", 0.0, 2).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0], records[1]);
        // Clean set == evaluated set at the same predictions: success counts
        // instances correct on clean but wrong after compression.
        assert!(records[0].misclass_success.is_some());
    }

    #[test]
    fn evaluate_rejects_misaligned_clean_set() {
        let model = build_network(ArchId::Toy, (16, 16, 3), 3, 15).unwrap();
        let data = generate_synthetic(3, 4, (16, 16), 15).unwrap();
        let other = generate_synthetic(3, 3, (16, 16), 15).unwrap();
        let entries = [SweepEntry {
            id: "base".into(),
            train_quality: None,
            model: &model,
        }];
        assert!(matches!(
            evaluate(&entries, &data, Some(&other), &[TestQuality::Phi], "none", 0.0, 1),
            Err(DefenseError::Attack(AttackError::MisalignedSets))
        ));
    }

    #[test]
    fn transfer_matrix_shape_and_zero_epsilon_columns() {
        let base = build_network(ArchId::Toy, (16, 16, 3), 3, 16).unwrap();
        let data = generate_synthetic(3, 4, (16, 16), 16).unwrap();
        let grid = QualityGrid::parse("90:70:20").unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let suite = vaccinate(&base, &data, &grid, &cfg).unwrap();

        let matrix = transferability_matrix(&suite, &data, &AttackConfig::fgsm(0.0), 2).unwrap();
        assert_eq!(matrix.model_ids.len(), suite.len() + 1, "base model included");
        assert_eq!(matrix.accuracy.len(), 3);
        assert!(matrix.accuracy.iter().all(|row| row.len() == 3));

        // Epsilon zero: the "adversarial" set is the clean set, so each
        // column is constant at the evaluator's clean accuracy.
        for j in 0..matrix.model_ids.len() {
            let clean_acc = accuracy(
                if j == 0 { suite.base() } else { &suite.models()[j - 1].1 },
                &data,
                1,
            )
            .unwrap();
            for row in &matrix.accuracy {
                assert_eq!(row[j], clean_acc);
            }
        }
    }

    #[test]
    fn compress_dataset_is_deterministic_and_tagged() {
        let data = generate_synthetic(2, 3, (16, 16), 17).unwrap();
        let a = compress_dataset(&data, q(40));
        let b = compress_dataset(&data, q(40));
        assert_eq!(a, b);
        assert_eq!(a.name(), "synthetic@q40");
        assert_eq!(a.labels(), data.labels());
    }

    #[test]
    fn test_quality_parsing() {
        assert_eq!(TestQuality::parse("phi").unwrap(), TestQuality::Phi);
        assert_eq!(TestQuality::parse("85").unwrap(), TestQuality::Quality(q(85)));
        assert!(TestQuality::parse("0").is_err());
        assert!(TestQuality::parse("disabled").is_err());
    }
}
