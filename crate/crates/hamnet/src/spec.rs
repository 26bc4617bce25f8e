//! Experiment spec files: one `key = value` per line, `#` starts a comment.
//!
//! ```text
//! dataset = swiss_roll        # double_moons | swiss_roll | mnist | csv
//! arch = H1                   # grid: archs = H1,H2,MS1,MS2
//! layers = 64                 # grid: a comma-separated list
//! h = 0.02
//! epochs = 50
//! model_out = model.hdnn
//! ```
//!
//! Relative paths are resolved against the spec file's directory. Defaults
//! depend on the dataset: `mnist` gets the digit settings, everything else
//! the 2-D benchmark settings.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hamnet_core::data::{Benchmark, BENCHMARK_STEP};
use hamnet_core::training::{Scheme, TrainConfig};
use hamnet_core::Variant;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Benchmark(Benchmark),
    Mnist,
    /// CSV files; without a test file, accuracy is reported on the training set.
    Csv { train: PathBuf, test: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    pub variant: Variant,
    /// Layer counts; `cmd_train` requires exactly one.
    pub layers: Vec<usize>,
    /// Architectures swept by `cmd_grid` (defaults to `[variant]`).
    pub archs: Vec<Variant>,
    pub h: f64,
    /// Hidden state dimension after zero padding (2-D data only).
    pub features: usize,
    pub time_invariant: bool,
    pub samples: usize,
    pub test_samples: usize,
    pub noise: Option<f64>,
    pub mnist_dir: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub train: TrainConfig,
    pub model_out: PathBuf,
    pub history_out: PathBuf,
    pub gradnorm_out: Option<PathBuf>,
    pub grid_out: PathBuf,
    /// Training samples averaged by the gradient-norm trace.
    pub audit_samples: usize,
}

impl ExperimentSpec {
    /// Defaults for `dataset`, with outputs in `base`.
    pub fn defaults(dataset: DatasetSource, base: &Path) -> Self {
        let mnist = dataset == DatasetSource::Mnist;
        ExperimentSpec {
            variant: if mnist { Variant::H2 } else { Variant::H1 },
            layers: vec![if mnist { 2 } else { 4 }],
            archs: Vec::new(),
            h: if mnist { 0.05 } else { BENCHMARK_STEP },
            features: 4,
            time_invariant: false,
            samples: 5000,
            test_samples: 5000,
            noise: None,
            mnist_dir: None,
            train_limit: None,
            test_limit: None,
            train: if mnist { TrainConfig::mnist() } else { TrainConfig::default() },
            model_out: base.join("model.hdnn"),
            history_out: base.join("history.csv"),
            gradnorm_out: None,
            grid_out: base.join("grid.csv"),
            audit_samples: 125,
            dataset,
        }
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Self::parse_str(&text, path, &base)
    }

    /// Parses spec text; `path` labels errors and `base` resolves relative
    /// paths.
    pub fn parse_str(text: &str, path: &Path, base: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| CliError::Spec {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(err(line, format!("expected `key = value`, found {content:?}")));
            };
            let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
            if k.is_empty() {
                return Err(err(line, "empty key".into()));
            }
            if let Some(first) = seen.insert(k.clone(), line) {
                return Err(err(line, format!("duplicate key {k:?} (first set on line {first})")));
            }
            entries.push((line, k, v));
        }

        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let lookup = |key: &str| entries.iter().find(|(_, k, _)| k == key);
        let dataset = match lookup("dataset") {
            None => DatasetSource::Benchmark(Benchmark::DoubleMoons),
            Some((line, _, v)) => match v.to_ascii_lowercase().as_str() {
                "mnist" => DatasetSource::Mnist,
                "csv" => {
                    let Some((_, _, train)) = lookup("train_data") else {
                        return Err(err(*line, "dataset = csv needs train_data".into()));
                    };
                    DatasetSource::Csv {
                        train: resolve(train),
                        test: lookup("test_data").map(|(_, _, t)| resolve(t)),
                    }
                }
                other => DatasetSource::Benchmark(Benchmark::from_str(other).map_err(|e| err(*line, e.to_string()))?),
            },
        };
        let mut spec = ExperimentSpec::defaults(dataset, base);

        for (line, key, value) in &entries {
            let line = *line;
            let bad = |what: &str| err(line, format!("{key}: {what} {value:?}"));
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad("expected a number, found"));
            let int = |v: &str| v.parse::<usize>().map_err(|_| bad("expected a non-negative integer, found"));
            let t = &mut spec.train;
            match key.as_str() {
                "dataset" | "train_data" | "test_data" => {}
                "arch" => spec.variant = Variant::from_str(value).map_err(|e| err(line, e.to_string()))?,
                "archs" => {
                    spec.archs = list(value)
                        .map(|s| Variant::from_str(s).map_err(|e| err(line, e.to_string())))
                        .collect::<Result<_>>()?
                }
                "layers" => spec.layers = list(value).map(int).collect::<Result<_>>()?,
                "h" => spec.h = num(value)?,
                "n" => spec.features = int(value)?,
                "time_invariant" => spec.time_invariant = parse_bool(value).ok_or_else(|| bad("expected true/false, found"))?,
                "samples" => spec.samples = int(value)?,
                "test_samples" => spec.test_samples = int(value)?,
                "noise" => spec.noise = Some(num(value)?),
                "mnist_dir" => spec.mnist_dir = Some(resolve(value)),
                "train_limit" => spec.train_limit = Some(int(value)?),
                "test_limit" => spec.test_limit = Some(int(value)?),
                "lr" => t.lr = num(value)?,
                "lr_decay_gamma" | "gamma" => t.lr_decay_gamma = num(value)?,
                "epochs" => t.epochs = int(value)?,
                "batch_size" => t.batch_size = int(value)?,
                "alpha" => t.alpha = num(value)?,
                "alpha_c" | "weight_decay" => t.alpha_c = num(value)?,
                "beta1" => t.beta1 = num(value)?,
                "beta2" => t.beta2 = num(value)?,
                "adam_eps" => t.adam_eps = num(value)?,
                "inner_head_iters" => t.inner_head_iters = int(value)?,
                "seed" => t.seed = value.parse().map_err(|_| bad("expected an unsigned integer, found"))?,
                "scheme" => {
                    t.scheme = match value.to_ascii_lowercase().as_str() {
                        "coordinate" | "coordinate_descent" => Scheme::CoordinateDescent,
                        "joint" => Scheme::Joint,
                        _ => return Err(bad("expected coordinate or joint, found")),
                    }
                }
                "model_out" => spec.model_out = resolve(value),
                "history_out" => spec.history_out = resolve(value),
                "gradnorm_out" => spec.gradnorm_out = Some(resolve(value)),
                "out" | "grid_out" => spec.grid_out = resolve(value),
                "audit_samples" => spec.audit_samples = int(value)?,
                _ => return Err(err(line, format!("unknown key {key:?}"))),
            }
        }

        let line_of = |key: &str| lookup(key).map_or(0, |(l, _, _)| *l);
        if !(spec.h > 0.0 && spec.h.is_finite()) {
            return Err(err(line_of("h"), format!("h must be positive, found {}", spec.h)));
        }
        if spec.archs.is_empty() {
            spec.archs = vec![spec.variant];
        }
        if spec.train.batch_size == 0 {
            return Err(err(line_of("batch_size"), "batch_size must be positive".into()));
        }
        spec.train
            .validate()
            .map_err(|e| err(0, format!("invalid training settings: {e}")))?;
        if matches!(spec.dataset, DatasetSource::Benchmark(_)) && spec.features < 2 {
            return Err(err(line_of("n"), "n must be at least 2 for 2-D data".into()));
        }
        Ok(spec)
    }

    /// The single layer count of a training spec.
    pub fn single_layers(&self) -> Result<usize> {
        match self.layers.as_slice() {
            [n] => Ok(*n),
            _ => Err(CliError::Usage(format!("train needs exactly one layer count, got {:?}", self.layers))),
        }
    }
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentSpec> {
        ExperimentSpec::parse_str(text, Path::new("t.spec"), Path::new("/base"))
    }

    #[test]
    fn defaults_follow_dataset() {
        let s = parse("dataset = swiss_roll\n").unwrap();
        assert_eq!(s.dataset, DatasetSource::Benchmark(Benchmark::SwissRoll));
        assert_eq!(s.train, TrainConfig::default());
        assert_eq!(s.h, BENCHMARK_STEP);
        let m = parse("dataset = mnist\n").unwrap();
        assert_eq!(m.train, TrainConfig::mnist());
        assert_eq!((m.variant, m.layers.clone(), m.h), (Variant::H2, vec![2], 0.05));
    }

    #[test]
    fn keys_comments_and_paths() {
        let s = parse(
            "# table cell\narch = ms2   # trailing\nlayers = 4, 8,16\n\nh=0.1\nepochs = 3\nscheme = joint\nmodel_out = out/m.hdnn\nhistory_out = /abs/h.csv\ntime_invariant = yes\n",
        )
        .unwrap();
        assert_eq!(s.variant, Variant::MS2);
        assert_eq!(s.archs, vec![Variant::MS2]);
        assert_eq!(s.layers, vec![4, 8, 16]);
        assert_eq!(s.h, 0.1);
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.train.scheme, Scheme::Joint);
        assert_eq!(s.model_out, PathBuf::from("/base/out/m.hdnn"));
        assert_eq!(s.history_out, PathBuf::from("/abs/h.csv"));
        assert!(s.time_invariant);
        assert!(s.single_layers().is_err());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("arch = H1\nbogus = 3\n", 2),
            ("epochs = 1\nepochs = 2\n", 2),
            ("\n\nlr = fast\n", 3),
            ("arch = H9\n", 1),
            ("no equals sign\n", 1),
            ("h = -1\n", 1),
        ];
        for (text, line) in cases {
            match parse(text) {
                Err(CliError::Spec { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn csv_dataset_needs_train_file() {
        assert!(parse("dataset = csv\n").is_err());
        let s = parse("dataset = csv\ntrain_data = a.csv\n").unwrap();
        assert_eq!(
            s.dataset,
            DatasetSource::Csv {
                train: PathBuf::from("/base/a.csv"),
                test: None
            }
        );
    }
}
