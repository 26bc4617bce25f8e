//! The `hamnet` subcommands. Each returns its headline result so callers
//! (the binary, tests) decide what to print.

use std::path::Path;

use hamnet_core::convnet::mnist_model;
use hamnet_core::data::{augment_features, gen_double_moons, gen_swiss_roll, Benchmark, Dataset, TEST_SEED_OFFSET};
use hamnet_core::diagnostics::{
    audit_network_spectrum, every_tenth_layer, mean_sensitivity_norms, richardson_study, GradNormTrace, RichardsonRow,
    SpectrumReport,
};
use hamnet_core::layers::{Architecture, Model, NetworkParams, OutputHead, Variant};
use hamnet_core::training::{evaluate_with, predict_all, train_with, BatchExecutor, History};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::csv_io::{self, GridWriter};
use crate::error::{CliError, Result};
use crate::mnist::{self, Split};
use crate::model_file::{load_model, save_model};
use crate::spec::{DatasetSource, ExperimentSpec};

/// Samples used by `diagnose` when no data file is given, and the cap on
/// samples read from one.
pub const DIAGNOSE_SAMPLES: usize = 128;
/// Network sizes compared against the integrated flow in the lemma1 mode.
pub const RICHARDSON_LAYERS: [usize; 5] = [4, 8, 16, 32, 64];
pub const RICHARDSON_REFERENCE_STEPS: usize = 4096;

/// A benchmark sample set at the given noise, standardized and padded to
/// `n` features.
pub fn benchmark_data(b: Benchmark, s: usize, noise: Option<f64>, n: usize, seed: u64) -> Result<Dataset> {
    let noise = noise.unwrap_or_else(|| b.default_noise());
    let d = match b {
        Benchmark::DoubleMoons => gen_double_moons(s, noise, seed)?,
        Benchmark::SwissRoll => gen_swiss_roll(s, noise, seed)?,
    };
    Ok(augment_features(&d, n.max(d.n()))?)
}

/// Train and test sets for `spec`. CSV data is padded to `spec.features`
/// when narrower; without a test file the training set is reused.
pub fn load_datasets(spec: &ExperimentSpec) -> Result<(Dataset, Dataset)> {
    let seed = spec.train.seed;
    match &spec.dataset {
        DatasetSource::Benchmark(b) => Ok((
            benchmark_data(*b, spec.samples, spec.noise, spec.features, seed)?,
            benchmark_data(*b, spec.test_samples, spec.noise, spec.features, seed.wrapping_add(TEST_SEED_OFFSET))?,
        )),
        DatasetSource::Mnist => {
            let dir = spec.mnist_dir.clone().unwrap_or_else(mnist::default_dir);
            Ok((
                mnist::load_split(&dir, Split::Train, spec.train_limit)?,
                mnist::load_split(&dir, Split::Test, spec.test_limit)?,
            ))
        }
        DatasetSource::Csv { train, test } => {
            let pad = |d: Dataset| -> Result<Dataset> { Ok(augment_features(&d, spec.features.max(d.n()))?) };
            let tr = pad(csv_io::read_dataset(train)?)?;
            let te = match test {
                Some(p) => pad(csv_io::read_dataset(p)?)?,
                None => tr.clone(),
            };
            if te.n() != tr.n() {
                return Err(CliError::Usage(format!(
                    "train data has {} features but test data has {}",
                    tr.n(),
                    te.n()
                )));
            }
            let classes = tr.classes.max(te.classes);
            Ok((Dataset { classes, ..tr }, Dataset { classes, ..te }))
        }
    }
}

/// A freshly initialized model for `train`, seeded from `seed`.
pub fn build_model(spec: &ExperimentSpec, variant: Variant, n_layers: usize, train: &Dataset, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if spec.dataset == DatasetSource::Mnist {
        if spec.time_invariant {
            return Err(CliError::Usage("time_invariant is not supported for the digit network".into()));
        }
        return Ok(mnist_model(variant, n_layers, spec.h, &mut rng)?);
    }
    let arch = Architecture::new(variant, train.n())?;
    let net = NetworkParams::random(arch, n_layers, spec.h, spec.time_invariant, &mut rng)?;
    Ok(Model::new(net, OutputHead::zeros(train.n(), train.classes)?)?)
}

pub fn cmd_gen(b: Benchmark, samples: usize, seed: u64, noise: Option<f64>, features: usize, out: &Path) -> Result<Dataset> {
    let d = benchmark_data(b, samples, noise, features, seed)?;
    csv_io::write_dataset(out, &d)?;
    Ok(d)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
    pub test_accuracy: f64,
    pub trace: Option<GradNormTrace>,
}

/// Trains one model per `spec`, writing the model file, the history and,
/// when requested, the gradient-norm trace.
pub fn cmd_train<E: BatchExecutor>(spec: &ExperimentSpec, exec: &E) -> Result<TrainOutcome> {
    let n_layers = spec.single_layers()?;
    let (train, test) = load_datasets(spec)?;
    let mut model = build_model(spec, spec.variant, n_layers, &train, spec.train.seed)?;
    let mut trace = spec.gradnorm_out.as_ref().map(|_| GradNormTrace::default());
    if trace.is_some() && model.expand.is_some() {
        return Err(CliError::Usage("gradnorm_out needs a dense network".into()));
    }
    let audit: Vec<usize> = (0..spec.audit_samples.min(train.len())).collect();
    let tracked = every_tenth_layer(n_layers);
    let history = train_with(&mut model, &train, &spec.train, exec, &mut |rec, m| {
        if let Some(t) = trace.as_mut() {
            for (j, norm) in mean_sensitivity_norms(m, &train, &audit, &tracked, exec)? {
                t.push(rec.iter, j, norm);
            }
        }
        Ok(())
    })?;
    let test_accuracy = evaluate_with(&model, &test, exec)?;
    save_model(&spec.model_out, &model)?;
    csv_io::write_history(&spec.history_out, &history)?;
    if let (Some(path), Some(t)) = (&spec.gradnorm_out, &trace) {
        csv_io::write_gradnorms(path, t)?;
    }
    Ok(TrainOutcome {
        model,
        history,
        test_accuracy,
        trace,
    })
}

/// Loads evaluation data: an MNIST directory (test split) or a dataset CSV.
pub fn load_eval_data(path: &Path) -> Result<Dataset> {
    if path.is_dir() {
        mnist::load_split(path, Split::Test, None)
    } else {
        csv_io::read_dataset(path)
    }
}

fn check_compatible(model: &Model, d: &Dataset, data_path: &Path) -> Result<Dataset> {
    let want = model.input_dim();
    let d = if d.n() < want && model.expand.is_none() {
        augment_features(d, want)?
    } else {
        d.clone()
    };
    if d.n() != want {
        return Err(CliError::Data {
            path: data_path.to_path_buf(),
            msg: format!("dimension mismatch: model expects {want} features, data has {}", d.n()),
        });
    }
    if let Some(&bad) = d.labels.iter().find(|&&c| c >= model.head.classes) {
        return Err(CliError::Data {
            path: data_path.to_path_buf(),
            msg: format!("label {bad} out of range for a {}-class model", model.head.classes),
        });
    }
    Ok(Dataset {
        classes: model.head.classes,
        ..d
    })
}

/// Accuracy of the model at `model_path` on `data_path`; per-sample
/// probabilities go to `pred_out`.
pub fn cmd_eval<E: BatchExecutor>(model_path: &Path, data_path: &Path, pred_out: &Path, exec: &E) -> Result<f64> {
    let model = load_model(model_path)?;
    let data = check_compatible(&model, &load_eval_data(data_path)?, data_path)?;
    let probs = predict_all(&model, &data, exec)?;
    csv_io::write_predictions(pred_out, &data, &probs)?;
    let correct = probs
        .iter()
        .zip(&data.labels)
        .filter(|(p, c)| hamnet_core::layers::argmax(p) == **c)
        .count();
    Ok(if data.is_empty() { 0.0 } else { correct as f64 / data.len() as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnoseMode {
    GradNorms,
    Spectrum,
    Convergence,
}

impl std::str::FromStr for DiagnoseMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gradnorms" => Ok(DiagnoseMode::GradNorms),
            "spectrum" => Ok(DiagnoseMode::Spectrum),
            "lemma1" => Ok(DiagnoseMode::Convergence),
            _ => Err(format!("unknown mode {s:?} (expected gradnorms, spectrum or lemma1)")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Diagnosis {
    GradNorms(GradNormTrace),
    Spectrum(Vec<(String, SpectrumReport)>),
    Convergence(Vec<RichardsonRow>),
}

/// Probe inputs: the first samples of `data_path`, or seeded double moons.
fn probe_inputs(model: &Model, data_path: Option<&Path>, seed: u64) -> Result<Dataset> {
    match data_path {
        Some(p) => {
            let d = check_compatible(model, &load_eval_data(p)?, p)?;
            Ok(d.head(DIAGNOSE_SAMPLES.min(d.len())))
        }
        None if model.expand.is_some() => Err(CliError::Usage("--data is required for this model".into())),
        None => benchmark_data(Benchmark::DoubleMoons, DIAGNOSE_SAMPLES, None, model.input_dim(), seed),
    }
}

/// Runs one diagnostic on a saved model and writes its CSV.
pub fn cmd_diagnose<E: BatchExecutor>(
    model_path: &Path,
    mode: DiagnoseMode,
    data_path: Option<&Path>,
    out: &Path,
    seed: u64,
    exec: &E,
) -> Result<Diagnosis> {
    let model = load_model(model_path)?;
    if model.expand.is_some() {
        return Err(CliError::Usage("diagnostics need a dense network".into()));
    }
    let probes = probe_inputs(&model, data_path, seed)?;
    if probes.is_empty() {
        return Err(CliError::Usage("no probe samples".into()));
    }
    let diagnosis = match mode {
        DiagnoseMode::GradNorms => {
            let samples: Vec<usize> = (0..probes.len()).collect();
            let layers = every_tenth_layer(model.net.n_layers);
            let mut trace = GradNormTrace::default();
            for (j, norm) in mean_sensitivity_norms(&model, &probes, &samples, &layers, exec)? {
                trace.push(0, j, norm);
            }
            csv_io::write_gradnorms(out, &trace)?;
            Diagnosis::GradNorms(trace)
        }
        DiagnoseMode::Spectrum => {
            let per_sample = exec.map_indexed(probes.len(), |i| {
                let y0 = model.initial_state(probes.sample(i).0)?;
                audit_network_spectrum(&model.net, &y0)
            });
            let mut rows = Vec::new();
            for (i, reports) in per_sample.into_iter().enumerate() {
                for (l, r) in reports?.into_iter().enumerate() {
                    rows.push((format!("sample{i}_layer{l}"), r));
                }
            }
            csv_io::write_spectrum(out, &rows)?;
            Diagnosis::Spectrum(rows)
        }
        DiagnoseMode::Convergence => {
            if model.net.n_layers == 0 {
                return Err(CliError::Usage("lemma1 needs at least one layer".into()));
            }
            let net = frozen_first_layer(&model.net);
            let y0 = model.initial_state(probes.sample(0).0)?;
            let horizon = net.h * net.n_layers.max(1) as f64;
            let rows = richardson_study(&net, &y0, horizon, &RICHARDSON_LAYERS, RICHARDSON_REFERENCE_STEPS)?;
            csv_io::write_richardson(out, &rows)?;
            Diagnosis::Convergence(rows)
        }
    };
    Ok(diagnosis)
}

/// The time-invariant network that repeats layer 0 of `net`; the
/// convergence study needs constant `(K, b)`.
pub fn frozen_first_layer(net: &NetworkParams) -> NetworkParams {
    NetworkParams {
        layers: vec![net.layer(0).clone()],
        time_invariant: true,
        ..net.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub arch: Variant,
    pub layers: usize,
    /// `None` when the cell failed.
    pub test_accuracy: Option<f64>,
    pub params_per_layer: usize,
    pub error: Option<String>,
}

/// Trains every `(arch, layers)` cell of `spec` and writes one CSV row per
/// cell as it finishes. Failed cells are recorded as `nan` and reported
/// together at the end.
pub fn cmd_grid<E: BatchExecutor>(spec: &ExperimentSpec, exec: &E, on_cell: &mut dyn FnMut(&GridCell)) -> Result<Vec<GridCell>> {
    let mut writer = GridWriter::create(&spec.grid_out)?;
    if spec.layers.is_empty() {
        return Ok(Vec::new());
    }
    let (train, test) = load_datasets(spec)?;
    let mut cells = Vec::new();
    for &arch in &spec.archs {
        for &n_layers in &spec.layers {
            let run = || -> Result<(f64, usize)> {
                let mut model = build_model(spec, arch, n_layers, &train, spec.train.seed)?;
                let ppl = model.net.params_per_layer();
                train_with(&mut model, &train, &spec.train, exec, &mut |_, _| Ok(()))?;
                Ok((evaluate_with(&model, &test, exec)?, ppl))
            };
            let cell = match run() {
                Ok((acc, ppl)) => GridCell {
                    arch,
                    layers: n_layers,
                    test_accuracy: Some(acc),
                    params_per_layer: ppl,
                    error: None,
                },
                Err(e) => GridCell {
                    arch,
                    layers: n_layers,
                    test_accuracy: None,
                    params_per_layer: expected_params_per_layer(spec, arch, &train),
                    error: Some(e.to_string()),
                },
            };
            writer.row(arch.name(), n_layers, cell.test_accuracy, cell.params_per_layer)?;
            on_cell(&cell);
            cells.push(cell);
        }
    }
    let failed = cells.iter().filter(|c| c.test_accuracy.is_none()).count();
    if failed > 0 {
        return Err(CliError::GridFailures {
            failed,
            total: cells.len(),
        });
    }
    Ok(cells)
}

fn expected_params_per_layer(spec: &ExperimentSpec, arch: Variant, train: &Dataset) -> usize {
    if spec.dataset == DatasetSource::Mnist {
        0
    } else {
        arch.params_per_layer(train.n())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hamnet_core::training::Sequential;

    fn spec_in(dir: &Path, text: &str) -> ExperimentSpec {
        let p = dir.join("exp.spec");
        std::fs::write(&p, text).unwrap();
        ExperimentSpec::parse_file(&p).unwrap()
    }

    #[test]
    fn zero_epochs_saves_the_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_in(dir.path(), "arch = H2\nlayers = 3\nepochs = 0\nsamples = 20\ntest_samples = 10\n");
        let out = cmd_train(&spec, &Sequential).unwrap();
        let (train, _) = load_datasets(&spec).unwrap();
        let fresh = build_model(&spec, Variant::H2, 3, &train, spec.train.seed).unwrap();
        assert_eq!(crate::model_file::encode_model(&fresh), std::fs::read(&spec.model_out).unwrap());
        assert!(out.history.records.is_empty());
    }

    #[test]
    fn eval_matches_recount_of_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_in(dir.path(), "layers = 2\nepochs = 1\nsamples = 250\ntest_samples = 50\n");
        cmd_train(&spec, &Sequential).unwrap();
        let data = dir.path().join("d.csv");
        cmd_gen(Benchmark::DoubleMoons, 50, 7, None, 2, &data).unwrap();
        let pred = dir.path().join("pred.csv");
        let acc = cmd_eval(&spec.model_out, &data, &pred, &Sequential).unwrap();
        let text = std::fs::read_to_string(&pred).unwrap();
        let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 50);
        let hits = rows.iter().filter(|r| r[1] == r[2]).count();
        assert_eq!(acc, hits as f64 / 50.0);
    }

    #[test]
    fn eval_names_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_in(dir.path(), "layers = 1\nepochs = 0\nsamples = 10\ntest_samples = 10\n");
        cmd_train(&spec, &Sequential).unwrap();
        let data = dir.path().join("wide.csv");
        cmd_gen(Benchmark::SwissRoll, 6, 1, None, 6, &data).unwrap();
        let e = cmd_eval(&spec.model_out, &data, &dir.path().join("p.csv"), &Sequential).unwrap_err();
        assert!(e.to_string().contains("dimension mismatch"), "{e}");
    }

    #[test]
    fn empty_grid_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_in(dir.path(), "layers =\nout = g.csv\n");
        assert!(cmd_grid(&spec, &Sequential, &mut |_| {}).unwrap().is_empty());
        let text = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
        assert_eq!(text, "arch,layers,test_acc,params_per_layer\n");
    }

    #[test]
    fn grid_keeps_going_after_a_failed_cell() {
        let dir = tempfile::tempdir().unwrap();
        // n = 3 is odd, so MS1 cannot be built; H2 cells still run.
        let spec = spec_in(
            dir.path(),
            "archs = MS1, H2\nlayers = 1\nn = 3\nepochs = 0\nsamples = 10\ntest_samples = 10\nout = g.csv\n",
        );
        match cmd_grid(&spec, &Sequential, &mut |_| {}) {
            Err(CliError::GridFailures { failed: 1, total: 2 }) => {}
            other => panic!("{other:?}"),
        }
        let text = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("MS1,1,nan,"));
        assert!(lines[2].starts_with("H2,1,0."));
    }
}
