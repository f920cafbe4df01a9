use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde_json::json;
use tensorkit::cpd::{cp_als, jennrich as jennrich_cpd, CpConfig, CpInit};
use tensorkit::io::{self, ResultDocument, RunStatus};
use tensorkit::metrics::{match_columns, total_variation};
use tensorkit::moments::{
    estimate_mixture_run, gmm_generate, topic_generate, EstimateConfig, GmmSpec, ModelKind, SampleMatrix,
    ThirdMomentPath, TopicSpec,
};
use tensorkit::tucker::{hooi, hosvd, HooiConfig};
use tensorkit::{Error, Result};

use crate::{CpArgs, EstimateArgs, GenerateArgs, InitArg, JennrichArgs, ModelArg, OutputArgs, PathArg, TuckerArgs, TuckerMethod};

pub const OUTPUT_DIR_VAR: &str = "TENSORKIT_OUTPUT_DIR";

fn default_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_VAR).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn result_path(out: &OutputArgs, cmd: &str) -> PathBuf {
    out.output
        .clone()
        .unwrap_or_else(|| default_dir().join(format!("{cmd}-result.json")))
}

fn finish(doc: &mut ResultDocument, out: &OutputArgs, started: Instant) -> Result<PathBuf> {
    if out.record_timing {
        doc.wall_time_seconds = Some(started.elapsed().as_secs_f64());
    }
    let path = result_path(out, &doc.command);
    io::write_result(&path, doc)?;
    Ok(path)
}

fn describe(path: &Path, doc: &ResultDocument) {
    match doc.relative_error {
        Some(e) => println!("{}: wrote {} (relative error {:.3e})", doc.command, path.display(), e),
        None => println!("{}: wrote {}", doc.command, path.display()),
    }
}

pub fn cp(a: &CpArgs) -> Result<()> {
    let started = Instant::now();
    let t = io::read_tensor(&a.input)?;
    let cfg = CpConfig {
        rank: a.rank,
        max_iters: a.max_iters,
        tol: a.tol,
        init: match a.init {
            InitArg::Random => CpInit::Random,
            InitArg::Hosvd => CpInit::HosvdLeadingVectors,
        },
        seed: a.seed,
        normalize: a.normalize,
    };
    let res = cp_als(&t, &cfg)?;
    let mut doc = ResultDocument::new("cp", Some(a.seed), json!({ "input": a.input, "cp": cfg }));
    doc.input_shape = Some(t.shape().to_vec());
    doc.weights = Some(res.model.weights.iter().cloned().collect());
    doc.factors = res.model.factors.iter().map(Into::into).collect();
    doc.relative_error = res.fit_history.last().copied();
    doc.history = res.fit_history.clone();
    doc.iterations = Some(res.iterations);
    doc.status = if res.converged {
        RunStatus::Converged
    } else {
        RunStatus::NotConverged
    };
    let path = finish(&mut doc, &a.out, started)?;
    describe(&path, &doc);
    if !res.converged {
        return Err(Error::Convergence(format!(
            "CP-ALS stopped after {} sweeps without meeting tol {:e}; best model written to {}",
            res.iterations,
            a.tol,
            path.display()
        )));
    }
    Ok(())
}

pub fn jennrich(a: &JennrichArgs) -> Result<()> {
    let started = Instant::now();
    let t = io::read_tensor(&a.input)?;
    let model = jennrich_cpd(&t, a.rank, a.seed)?;
    let mut doc = ResultDocument::new(
        "jennrich",
        Some(a.seed),
        json!({ "input": a.input, "rank": a.rank }),
    );
    doc.input_shape = Some(t.shape().to_vec());
    doc.relative_error = Some(t.relative_error(&model.to_dense()?)?);
    doc.weights = Some(model.weights.iter().cloned().collect());
    doc.factors = model.factors.iter().map(Into::into).collect();
    let path = finish(&mut doc, &a.out, started)?;
    describe(&path, &doc);
    Ok(())
}

pub fn tucker(a: &TuckerArgs) -> Result<()> {
    let started = Instant::now();
    let t = io::read_tensor(&a.input)?;
    let (model, history, iterations, converged) = match a.method {
        TuckerMethod::Hosvd => (hosvd(&t, &a.ranks)?, Vec::new(), None, true),
        TuckerMethod::Hooi => {
            let cfg = HooiConfig {
                max_iters: a.max_iters,
                tol: a.tol,
            };
            let r = hooi(&t, &a.ranks, &cfg)?;
            (r.model, r.error_history, Some(r.iterations), r.converged)
        }
    };
    let method = match a.method {
        TuckerMethod::Hosvd => "hosvd",
        TuckerMethod::Hooi => "hooi",
    };
    let mut doc = ResultDocument::new(
        "tucker",
        None,
        json!({
            "input": a.input,
            "ranks": a.ranks,
            "method": method,
            "max_iters": a.max_iters,
            "tol": a.tol,
        }),
    );
    doc.input_shape = Some(t.shape().to_vec());
    doc.relative_error = Some(t.relative_error(&model.to_dense()?)?);
    doc.core = Some((&model.core).into());
    doc.factors = model.factors.iter().map(Into::into).collect();
    doc.history = history;
    doc.iterations = iterations;
    doc.status = if converged {
        RunStatus::Converged
    } else {
        RunStatus::NotConverged
    };
    let path = finish(&mut doc, &a.out, started)?;
    describe(&path, &doc);
    if !converged {
        return Err(Error::Convergence(format!(
            "HOOI stopped after {} sweeps without meeting tol {:e}; best model written to {}",
            a.max_iters,
            a.tol,
            path.display()
        )));
    }
    Ok(())
}

fn model_kind(m: ModelArg) -> ModelKind {
    match m {
        ModelArg::Gmm => ModelKind::Gmm,
        ModelArg::Topic => ModelKind::Topic,
    }
}

/// Recovery errors against a `generate` sidecar, after column matching.
fn evaluate(
    truth_path: &Path,
    kind: ModelKind,
    components: &nalgebra::DMatrix<f64>,
    weights: &DVector<f64>,
    sigma2: Option<f64>,
) -> Result<serde_json::Value> {
    let truth = io::load_result(truth_path)?;
    let true_a = truth
        .factor_matrices()?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Data("truth sidecar has no component matrix".into()))?;
    let true_w = truth
        .weights
        .clone()
        .ok_or_else(|| Error::Data("truth sidecar has no weights".into()))?;
    if true_a.nrows() != components.nrows() || true_w.len() != true_a.ncols() {
        return Err(Error::Data(format!(
            "truth sidecar is {}x{}, estimate is {}x{}",
            true_a.nrows(),
            true_a.ncols(),
            components.nrows(),
            components.ncols()
        )));
    }
    let perm = match_columns(components, &true_a);
    let column_errors: Vec<f64> = (0..true_a.ncols())
        .map(|t| {
            let est = components.column(perm[t]).into_owned();
            let tru = true_a.column(t).into_owned();
            match kind {
                ModelKind::Gmm => (est - tru).norm(),
                ModelKind::Topic => total_variation(&est, &tru),
            }
        })
        .collect();
    let weight_errors: Vec<f64> = (0..true_w.len())
        .map(|t| (weights[perm[t]] - true_w[t]).abs())
        .collect();
    let sigma2_relative_error = match (sigma2, truth.sigma2) {
        (Some(est), Some(tru)) if tru > 0.0 => Some((est - tru).abs() / tru),
        _ => None,
    };
    let metric = match kind {
        ModelKind::Gmm => "euclidean",
        ModelKind::Topic => "total-variation",
    };
    Ok(json!({
        "matching": perm,
        "column_metric": metric,
        "column_errors": column_errors,
        "weight_errors": weight_errors,
        "sigma2_relative_error": sigma2_relative_error,
    }))
}

pub fn estimate(a: &EstimateArgs) -> Result<()> {
    let started = Instant::now();
    let kind = model_kind(a.model);
    let samples = match a.model {
        ModelArg::Gmm => io::read_points(&a.input)?,
        ModelArg::Topic => io::read_documents(&a.input)?,
    };
    let cfg = EstimateConfig {
        k: a.k,
        max_iters: a.max_iters,
        tol: a.tol,
        restarts: a.restarts,
        seed: a.seed,
        path: match a.path {
            PathArg::Implicit => ThirdMomentPath::Implicit,
            PathArg::Materialized => ThirdMomentPath::Materialized,
        },
        renormalize_weights: a.renormalize_weights,
    };
    let run = estimate_mixture_run(&samples, kind, &cfg)?;
    let mut doc = ResultDocument::new(
        "estimate",
        Some(a.seed),
        json!({ "input": a.input, "model": kind, "estimate": cfg }),
    );
    doc.input_shape = Some(vec![samples.n_samples(), samples.dim()]);
    doc.sigma2 = run.sigma2;
    let mut diagnostics = serde_json::to_value(&run.diagnostics)?;
    match (&run.estimate, &run.failure) {
        (Some(est), None) => {
            doc.factors = vec![(&est.components).into()];
            doc.weights = Some(est.weights.iter().cloned().collect());
            if let Some(truth) = &a.truth {
                diagnostics["evaluation"] = evaluate(truth, kind, &est.components, &est.weights, est.sigma2)?;
            }
        }
        (_, failure) => {
            doc.status = RunStatus::Failed;
            doc.error = failure.as_ref().map(ToString::to_string);
        }
    }
    doc.diagnostics = diagnostics;
    let path = finish(&mut doc, &a.out, started)?;
    describe(&path, &doc);
    run.into_result().map(|_| ())
}

fn sample_file_name(model: ModelArg) -> &'static str {
    match model {
        ModelArg::Gmm => "gmm-samples.csv",
        ModelArg::Topic => "topic-samples.txt",
    }
}

pub fn truth_path(samples: &Path) -> PathBuf {
    let mut s = samples.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    if a.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let weights = match &a.weights {
        Some(w) if w.len() != a.k => {
            return Err(Error::Config(format!("{} weights given for k = {}", w.len(), a.k)))
        }
        Some(w) => DVector::from_vec(w.clone()),
        None => DVector::from_element(a.k, 1.0 / a.k as f64),
    };
    let spec_seed = a.spec_seed.unwrap_or(a.seed);
    let (samples, labels, components, sigma2) = match a.model {
        ModelArg::Gmm => {
            let spec = GmmSpec::orthonormal_means(a.d, weights.clone(), a.sigma, spec_seed)?;
            let (s, l) = gmm_generate(&spec, a.n, a.seed)?;
            (s, l, spec.means, Some(a.sigma * a.sigma))
        }
        ModelArg::Topic => {
            let spec = TopicSpec::block_topics(a.d, weights.clone(), a.words_per_doc, spec_seed)?;
            let (s, l) = topic_generate(&spec, a.n, a.seed)?;
            (s, l, spec.topics, None)
        }
    };
    let path = a
        .output
        .clone()
        .unwrap_or_else(|| default_dir().join(sample_file_name(a.model)));
    io::write_samples(&path, &samples)?;

    let mut counts = vec![0usize; a.k];
    for &h in &labels {
        counts[h] += 1;
    }
    let mut doc = ResultDocument::new(
        "generate",
        Some(a.seed),
        json!({
            "model": model_kind(a.model),
            "d": a.d,
            "k": a.k,
            "n": a.n,
            "sigma": if a.model == ModelArg::Gmm { Some(a.sigma) } else { None },
            "words_per_doc": if a.model == ModelArg::Topic { Some(a.words_per_doc) } else { None },
            "spec_seed": spec_seed,
        }),
    );
    doc.input_shape = Some(vec![samples.n_samples(), samples.dim()]);
    doc.factors = vec![(&components).into()];
    doc.weights = Some(weights.iter().cloned().collect());
    doc.sigma2 = sigma2;
    doc.diagnostics = json!({ "label_counts": counts });
    let truth = truth_path(&path);
    io::write_result(&truth, &doc)?;
    let kind = match &samples {
        SampleMatrix::Points(_) => "points",
        SampleMatrix::Documents { .. } => "documents",
    };
    println!(
        "generate: wrote {} {} to {} and ground truth to {}",
        a.n,
        kind,
        path.display(),
        truth.display()
    );
    Ok(())
}
