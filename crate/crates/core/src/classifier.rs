//! End-to-end classifiers: D-trace + GIC (`dtrace`) and D-trace + NLL with
//! cross-validation (`dtrace-nll`), prediction, evaluation metrics and band
//! summaries of the fitted differences.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dtrace::{default_lambda_grid, gic_select_refined, AdamConfig, DifferenceStack, DtraceProblem, GicPoint};
use crate::error::{Error, Result, StageExt};
use crate::nll::{cv_select_lambda, logistic, CvPoint, PosteriorModel, Priors, ScreenConfig, CV_SEED};
use crate::par;
use crate::screening::ScreeningResult;
use crate::simulate::GroundTruth;
use crate::spectral::{average_sdm_from_dfts, dft_matrix, ClassLabel, FourierGrid, MultivariateSeries};
use crate::tilde::realify;
use crate::RMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Per-frequency D-trace fits, `lambda` by GIC.
    Dtrace,
    /// Joint cross-entropy + D-trace fit, `lambda` by validation error.
    DtraceNll,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dtrace => "dtrace",
            Method::DtraceNll => "dtrace-nll",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dtrace" => Ok(Method::Dtrace),
            "dtrace-nll" => Ok(Method::DtraceNll),
            other => Err(Error::input(format!("unknown method {other:?} (expected dtrace or dtrace-nll)"))),
        }
    }
}

/// How `lambda` is chosen and the optimizer run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    pub lambda_grid: Vec<f64>,
    /// Extra GIC points between the coarse winner's neighbours (`dtrace` only).
    pub refine: usize,
    pub adam: AdamConfig,
    pub screen: ScreenConfig,
    /// Seed of the stratified split (`dtrace-nll` only).
    pub cv_seed: u64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            lambda_grid: default_lambda_grid(),
            refine: 4,
            adam: AdamConfig::default(),
            screen: ScreenConfig::default(),
            cv_seed: CV_SEED,
        }
    }
}

/// Everything prediction needs, plus how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub method: Method,
    pub series_len: usize,
    pub bandwidth: usize,
    pub lambda: f64,
    pub screening: ScreeningResult,
    posterior: PosteriorModel,
}

impl TrainedModel {
    /// Assembles a model; the active set is `screening.selected`.
    pub fn new(
        method: Method,
        series_len: usize,
        bandwidth: usize,
        lambda: f64,
        priors: Priors,
        sdm1: Vec<crate::RealAugmented>,
        stack: DifferenceStack,
        screening: ScreeningResult,
    ) -> Result<Self> {
        let grid = FourierGrid::new(series_len)?;
        if stack.len() != grid.n_freq() || screening.d.len() != grid.n_freq() {
            return Err(Error::dim(format!(
                "series length {series_len} has {} frequencies, stack has {} and screening {}",
                grid.n_freq(),
                stack.len(),
                screening.d.len()
            )));
        }
        let posterior = PosteriorModel::new(priors, sdm1, stack, screening.selected.clone())?;
        Ok(TrainedModel {
            method,
            series_len,
            bandwidth,
            lambda,
            screening,
            posterior,
        })
    }

    pub fn grid(&self) -> FourierGrid {
        FourierGrid::new(self.series_len).expect("validated on construction")
    }

    pub fn channels(&self) -> usize {
        self.posterior.channels()
    }

    pub fn priors(&self) -> Priors {
        self.posterior.priors()
    }

    pub fn stack(&self) -> &DifferenceStack {
        self.posterior.stack()
    }

    pub fn sdm1(&self) -> &[crate::RealAugmented] {
        self.posterior.sdm1()
    }

    pub fn active(&self) -> &[usize] {
        self.posterior.active()
    }

    pub fn posterior_model(&self) -> &PosteriorModel {
        &self.posterior
    }
}

/// `lambda` path explored during fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "criterion", content = "points", rename_all = "kebab-case")]
pub enum LambdaPath {
    Gic(Vec<GicPoint>),
    Validation(Vec<CvPoint>),
}

#[derive(Clone, Debug)]
pub struct Fitted {
    pub model: TrainedModel,
    pub path: LambdaPath,
}

fn class_counts(samples: &[MultivariateSeries]) -> Result<(usize, usize)> {
    let mut counts = (0, 0);
    for (i, s) in samples.iter().enumerate() {
        match s.label() {
            Some(ClassLabel::One) => counts.0 += 1,
            Some(ClassLabel::Two) => counts.1 += 1,
            None => return Err(Error::input(format!("training sample {i} has no label"))),
        }
    }
    if counts.0 < 2 || counts.1 < 2 {
        return Err(Error::input(format!(
            "each class needs at least 2 training samples, found {} and {}",
            counts.0, counts.1
        )));
    }
    Ok(counts)
}

/// Fits either classifier.
pub fn fit(
    samples: &[MultivariateSeries],
    method: Method,
    grid: &FourierGrid,
    bandwidth: usize,
    tuning: &TuningConfig,
) -> Result<Fitted> {
    let (n1, n2) = class_counts(samples)?;
    let p = samples[0].channels();
    if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.channels() != p) {
        return Err(Error::dim(format!("sample {i} has {} channels, sample 0 has {p}", s.channels())));
    }
    let priors = Priors::from_counts(n1, n2)?;

    let dfts = par::try_map_slice(samples, |s| dft_matrix(s, grid)).stage("spectra")?;
    let class = |c: ClassLabel| {
        dfts.iter()
            .zip(samples)
            .filter(|(_, s)| s.label() == Some(c))
            .map(|(d, _)| d)
            .collect::<Vec<_>>()
    };
    let s1 = average_sdm_from_dfts(&class(ClassLabel::One), bandwidth).stage("spectra")?;
    let s2 = average_sdm_from_dfts(&class(ClassLabel::Two), bandwidth).stage("spectra")?;
    let s1: Vec<_> = s1.iter().map(realify).collect();
    let s2: Vec<_> = s2.iter().map(realify).collect();

    let (lambda, stack, path) = match method {
        Method::Dtrace => {
            let problems = s1
                .iter()
                .zip(&s2)
                .map(|(a, b)| DtraceProblem::new(a.clone(), b.clone(), 0.0))
                .collect::<Result<Vec<_>>>()
                .stage("estimation")?;
            let sel = gic_select_refined(&problems, &tuning.lambda_grid, tuning.refine, n1 + n2, &tuning.adam)
                .stage("estimation")?;
            (sel.lambda, sel.stack, LambdaPath::Gic(sel.path))
        }
        Method::DtraceNll => {
            let sel = cv_select_lambda(
                samples,
                grid,
                bandwidth,
                &tuning.lambda_grid,
                &tuning.adam,
                &tuning.screen,
                tuning.cv_seed,
            )
            .stage("estimation")?;
            (sel.lambda, sel.fit.stack, LambdaPath::Validation(sel.path))
        }
    };
    let screening = tuning.screen.apply(&stack).stage("screening")?;
    let model = TrainedModel::new(method, grid.series_len(), bandwidth, lambda, priors, s1, stack, screening)
        .stage("posterior")?;
    Ok(Fitted { model, path })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: ClassLabel,
    pub score: f64,
    /// Posterior probability of class 1.
    pub posterior: f64,
}

/// Class 1 iff the discriminant is strictly positive.
pub fn predict(model: &TrainedModel, series: &MultivariateSeries) -> Result<Prediction> {
    let score = model.posterior.discriminant(series, &model.grid())?;
    Ok(Prediction {
        label: if score > 0.0 { ClassLabel::One } else { ClassLabel::Two },
        score,
        posterior: logistic(score),
    })
}

pub fn predict_all(model: &TrainedModel, samples: &[MultivariateSeries]) -> Result<Vec<Prediction>> {
    par::try_map_slice(samples, |s| predict(model, s))
}

/// True positive, true negative and true discovery rates. A rate whose
/// denominator is zero is absent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRates {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub td: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl RecoveryRates {
    /// From the counts of a confusion table.
    pub fn from_counts(true_pos: usize, false_neg: usize, true_neg: usize, false_pos: usize) -> Self {
        RecoveryRates {
            tp: ratio(true_pos, true_pos + false_neg),
            tn: ratio(true_neg, true_neg + false_pos),
            td: ratio(true_pos, true_pos + false_pos),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub misclassification: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class1_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class2_error: Option<f64>,
    pub selected: Vec<usize>,
    /// Entry-level recovery of the augmented differences over all `(k, i, j)`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub support: Option<RecoveryRates>,
    /// Recovery of the set of signal frequencies.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub frequency: Option<RecoveryRates>,
}

/// Misclassification over a labeled test set and, given the truth, support
/// and frequency recovery. The estimated support is the one prediction
/// uses: nonzero entries of `D~_k` at selected frequencies.
pub fn evaluate(model: &TrainedModel, samples: &[MultivariateSeries], truth: Option<&GroundTruth>) -> Result<EvalReport> {
    let labels = samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.label().ok_or_else(|| Error::input(format!("test sample {i} has no label"))))
        .collect::<Result<Vec<_>>>()?;
    let preds = predict_all(model, samples)?;
    report_from_predictions(model, &preds, &labels, truth)
}

pub fn report_from_predictions(
    model: &TrainedModel,
    preds: &[Prediction],
    labels: &[ClassLabel],
    truth: Option<&GroundTruth>,
) -> Result<EvalReport> {
    if preds.len() != labels.len() {
        return Err(Error::dim("one prediction per label required"));
    }
    let mut wrong = [0usize; 2];
    let mut total = [0usize; 2];
    for (p, &y) in preds.iter().zip(labels) {
        let c = usize::from(y.as_u8()) - 1;
        total[c] += 1;
        wrong[c] += usize::from(p.label != y);
    }
    let n = labels.len();
    let (support, frequency) = match truth {
        None => (None, None),
        Some(t) => {
            let (s, f) = recovery(model, t)?;
            (Some(s), Some(f))
        }
    };
    Ok(EvalReport {
        n,
        misclassification: if n == 0 { 0.0 } else { (wrong[0] + wrong[1]) as f64 / n as f64 },
        class1_error: ratio(wrong[0], total[0]),
        class2_error: ratio(wrong[1], total[1]),
        selected: model.screening.selected.clone(),
        support,
        frequency,
    })
}

/// Support and frequency recovery rates against a simulation truth.
pub fn recovery(model: &TrainedModel, truth: &GroundTruth) -> Result<(RecoveryRates, RecoveryRates)> {
    let n_freq = model.stack().len();
    if truth.p != model.channels() || truth.n_freq != n_freq {
        return Err(Error::input(format!(
            "truth describes p={} with {} frequencies, model has p={} with {n_freq}",
            truth.p,
            truth.n_freq,
            model.channels()
        )));
    }
    let dim = 2 * truth.p;
    let mut planted = vec![false; dim * dim];
    for &(i, j) in &truth.support {
        planted[i * dim + j] = true;
    }
    let planted_count = truth.support.len();
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    let (mut ftp, mut ffp, mut ffn, mut ftn) = (0, 0, 0, 0);
    for k in 1..=n_freq {
        let signal = truth.is_signal(k);
        let selected = model.screening.is_selected(k);
        match (selected, signal) {
            (true, true) => ftp += 1,
            (true, false) => ffp += 1,
            (false, true) => ffn += 1,
            (false, false) => ftn += 1,
        }
        if !selected {
            // the effective estimate is zero here
            if signal {
                fn_ += planted_count;
                tn += dim * dim - planted_count;
            } else {
                tn += dim * dim;
            }
            continue;
        }
        let m = model.stack().get(k).as_matrix();
        for i in 0..dim {
            for j in 0..dim {
                let est = m[(i, j)] != 0.0;
                let tru = signal && planted[i * dim + j];
                match (est, tru) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
        }
    }
    Ok((
        RecoveryRates::from_counts(tp, fn_, tn, fp),
        RecoveryRates::from_counts(ftp, ffn, ftn, ffp),
    ))
}

/// A named set of frequency indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    /// 1-based Fourier indices; empty when `first > last`.
    pub first: usize,
    pub last: usize,
}

impl Band {
    pub fn new(name: impl Into<String>, range: RangeInclusive<usize>) -> Self {
        Band {
            name: name.into(),
            first: *range.start(),
            last: *range.end(),
        }
    }

    pub fn indices(&self) -> RangeInclusive<usize> {
        self.first..=self.last
    }

    pub fn is_empty(&self) -> bool {
        self.first > self.last
    }
}

/// EEG band edges in Hz; the last band runs to the Nyquist frequency.
pub const EEG_BANDS: [(&str, f64, f64); 5] = [
    ("delta", 0.5, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 13.0),
    ("beta", 13.0, 30.0),
    ("gamma", 30.0, f64::INFINITY),
];

/// Maps the EEG bands onto Fourier indices: `k` belongs to `[lo, hi)` Hz
/// when `lo <= k * rate / T < hi`.
pub fn eeg_bands(sampling_rate: f64, grid: &FourierGrid) -> Result<Vec<Band>> {
    if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
        return Err(Error::input(format!("sampling rate must be positive, got {sampling_rate}")));
    }
    let hz = |k: usize| k as f64 * sampling_rate / grid.series_len() as f64;
    Ok(EEG_BANDS
        .iter()
        .map(|&(name, lo, hi)| {
            let ks: Vec<usize> = grid.indices().filter(|&k| hz(k) >= lo && hz(k) < hi).collect();
            match (ks.first(), ks.last()) {
                (Some(&a), Some(&b)) => Band::new(name, a..=b),
                _ => Band::new(name, 1..=0),
            }
        })
        .collect())
}

/// For each band, the entrywise sum of `|D(omega_k)|` over the band's
/// selected frequencies (`p x p`, nonnegative).
pub fn aggregate_bands(model: &TrainedModel, bands: &[Band]) -> Result<Vec<(String, RMatrix)>> {
    let n_freq = model.stack().len();
    let p = model.channels();
    bands
        .iter()
        .map(|b| {
            if !b.is_empty() && (b.first == 0 || b.last > n_freq) {
                return Err(Error::input(format!(
                    "band {} = {}..={} is outside 1..={n_freq}",
                    b.name, b.first, b.last
                )));
            }
            let mut out = RMatrix::zeros(p, p);
            for k in b.indices().filter(|&k| model.screening.is_selected(k)) {
                let d = model.stack().get(k).complexify();
                out += d.map(|z| z.norm());
            }
            Ok((b.name.clone(), out))
        })
        .collect()
}
