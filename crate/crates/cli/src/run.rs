use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde_json::{json, Value};
use sofic::algebra::GroupAlgebraElement;
use sofic::entropy::{entropy_sweep, CellCache, EntropyEstimate, SweepMethod};
use sofic::spectral::{certify_with_witness, fejer_witness};

use crate::cache::FileCache;
use crate::config::{Experiment, Method};

/// Finite values as numbers, infinities as the strings `"-inf"` / `"inf"`.
pub fn log_json(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x < 0.0 {
        json!("-inf")
    } else {
        json!("inf")
    }
}

pub struct Outcome {
    pub summary: Value,
    pub cell_errors: usize,
}

fn cells_json(method: &str, est: &EntropyEstimate) -> Vec<Value> {
    est.cells
        .iter()
        .map(|c| {
            let k = &c.key;
            let mut v = json!({
                "method": method,
                "d": k.d,
                "epsilon": k.epsilon,
                "F_radius": k.f_radius,
                "delta": k.delta,
                "L_id": k.l_id,
            });
            let obj = v.as_object_mut().unwrap();
            match &c.result {
                Ok(r) => {
                    obj.insert("mode".into(), json!(r.mode.as_str()));
                    obj.insert("direction".into(), json!(r.direction.as_str()));
                    obj.insert("log_count".into(), log_json(r.log_count));
                    obj.insert("normalized_value".into(), log_json(r.normalized()));
                    obj.insert("microstate_count".into(), json!(r.microstate_count));
                    obj.insert("log_covering".into(), json!(r.log_covering));
                    obj.insert("violated_constraints".into(), json!(r.violated_constraints));
                    obj.insert("diagnostics".into(), json!(r.diagnostics));
                }
                Err(e) => {
                    obj.insert("error".into(), json!(e));
                }
            }
            v
        })
        .collect()
}

fn error_count(est: &EntropyEstimate) -> usize {
    est.cells.iter().filter(|c| c.result.is_err()).count()
}

fn sweep(exp: &Experiment, method: SweepMethod, cache_root: Option<&Path>, hash: &str) -> Result<EntropyEstimate> {
    let system = exp.system.as_ref().ok_or_else(|| anyhow!("field 'system': missing"))?;
    let family = exp.family()?;
    let grids = match method {
        SweepMethod::Metric => exp.grids()?,
        SweepMethod::Observable => exp.observable_grids()?,
    };
    let scope = match method {
        SweepMethod::Metric => "metric",
        SweepMethod::Observable => "observable",
    };
    let cache = cache_root
        .map(|root| FileCache::new(root.to_path_buf(), hash, scope))
        .transpose()
        .context("creating cache directory")?;
    let est = entropy_sweep(
        system,
        &family,
        &grids,
        method,
        exp.strategy()?,
        cache.as_ref().map(|c| c as &dyn CellCache),
    )?;
    Ok(est)
}

fn counts_json(est: &EntropyEstimate) -> Value {
    let m: serde_json::Map<String, Value> = est
        .microstate_counts()
        .into_iter()
        .map(|(d, c)| (d.to_string(), json!(c)))
        .collect();
    Value::Object(m)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
}

pub fn run(exp: &Experiment, output: &Path, cache_root: Option<&Path>) -> Result<Outcome> {
    std::fs::create_dir_all(output).with_context(|| format!("creating output directory {}", output.display()))?;
    let hash = exp.hash()?;
    let method = exp.config.method;
    let mut summary = json!({
        "config_hash": hash,
        "method": method.as_str(),
        "family": exp.family()?.provenance(),
        "seed": exp.config.seed,
    });
    let obj = summary.as_object_mut().unwrap();
    let mut cell_errors = 0;
    match method {
        Method::Metric | Method::Observable => {
            let sm = if method == Method::Metric {
                SweepMethod::Metric
            } else {
                SweepMethod::Observable
            };
            let est = sweep(exp, sm, cache_root, &hash)?;
            cell_errors += error_count(&est);
            write(output, &format!("{}.csv", method.as_str()), &est.to_csv())?;
            obj.insert("estimate".into(), log_json(est.value));
            obj.insert("direction".into(), json!(est.direction.as_str()));
            obj.insert("plateau".into(), json!(est.plateau));
            obj.insert("monotone".into(), json!(est.monotone));
            obj.insert("microstate_count".into(), counts_json(&est));
            obj.insert("cells".into(), json!(cells_json(method.as_str(), &est)));
            obj.insert("warnings".into(), json!(est.warnings));
            obj.insert("provenance".into(), json!(est.provenance));
        }
        Method::Both => {
            let m = sweep(exp, SweepMethod::Metric, cache_root, &hash)?;
            let o = sweep(exp, SweepMethod::Observable, cache_root, &hash)?;
            cell_errors += error_count(&m) + error_count(&o);
            write(output, "metric.csv", &m.to_csv())?;
            write(output, "observable.csv", &o.to_csv())?;
            let gap = (m.value.is_finite() && o.value.is_finite()).then(|| (m.value - o.value).abs());
            let mut cells = cells_json("metric", &m);
            cells.extend(cells_json("observable", &o));
            let mut warnings = m.warnings.clone();
            warnings.extend(o.warnings.iter().cloned());
            let mut provenance: Vec<String> = m.provenance.iter().map(|p| format!("metric: {p}")).collect();
            provenance.extend(o.provenance.iter().map(|p| format!("observable: {p}")));
            obj.insert("estimate".into(), log_json(m.value));
            obj.insert("direction".into(), json!(m.direction.as_str()));
            obj.insert("observable_estimate".into(), log_json(o.value));
            obj.insert("observable_direction".into(), json!(o.direction.as_str()));
            obj.insert("gap".into(), json!(gap));
            obj.insert("microstate_count".into(), counts_json(&m));
            obj.insert("cells".into(), json!(cells));
            obj.insert("warnings".into(), json!(warnings));
            obj.insert("provenance".into(), json!(provenance));
        }
        Method::SpectralCertificate => {
            let (cells, csv, estimate, warnings) = certificate(exp)?;
            write(output, "spectral-certificate.csv", &csv)?;
            obj.insert("estimate".into(), log_json(estimate));
            obj.insert("direction".into(), json!("upper"));
            obj.insert("cells".into(), json!(cells));
            obj.insert("warnings".into(), json!(warnings));
            obj.insert(
                "provenance".into(),
                json!([format!(
                    "minimum certified bound over epsilon at d = {}",
                    exp.family()?.dims().last().unwrap()
                )]),
            );
        }
    }
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    write(output, "summary.json", &text)?;
    Ok(Outcome { summary, cell_errors })
}

type CertificateOutput = (Vec<Value>, String, f64, Vec<String>);

fn certificate(exp: &Experiment) -> Result<CertificateOutput> {
    let c = &exp.config;
    let family = exp.family()?;
    let alpha = match exp.witness_text() {
        Some(text) => {
            let v: Value = serde_json::from_str(text).context("field 'witness_file': not JSON")?;
            GroupAlgebraElement::from_json(family.group(), &v).map_err(|e| anyhow!("field 'witness_file': {e}"))?
        }
        None => fejer_witness(c.witness_length.unwrap_or(1), c.witness_frequency)?,
    };
    let mut cells = Vec::new();
    let mut csv = String::from("d,epsilon,trace_p,trace_a,trace_bound,trace_ok,bound\n");
    let mut warnings = Vec::new();
    let mut estimate = f64::INFINITY;
    let last = family.len() - 1;
    for i in 0..family.len() {
        let sigma = family.map(i)?;
        for &eps in &c.epsilon {
            let r = certify_with_witness(&alpha, &sigma, eps, c.nets, c.m)?;
            let w = &r.window;
            if !w.trace_ok {
                warnings.push(format!("trace bound failed at d = {}, epsilon = {eps}", w.d));
            }
            if i == last {
                estimate = estimate.min(r.bound);
            }
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                w.d, eps, w.trace_p, w.trace_a, w.trace_bound, w.trace_ok, r.bound
            ));
            cells.push(json!({
                "d": w.d,
                "epsilon": eps,
                "trace_p": w.trace_p,
                "trace_a": w.trace_a,
                "trace_bound": w.trace_bound,
                "trace_ok": w.trace_ok,
                "bound": r.bound,
            }));
        }
    }
    Ok((cells, csv, estimate, warnings))
}

pub fn output_dir(exp: &Experiment, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| exp.dir.join(&exp.config.output))
}
