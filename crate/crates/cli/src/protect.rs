use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use impasto_core::image::{encode_png, save_plane_png, BitDepth};
use impasto_core::oracle::{Endpoint, GuidanceOracle, RemoteOracle, SurrogateOracle};
use impasto_core::protect::{grid_target, protect_run, Preset, ProtectionConfig, RunError, StepRecord};
use impasto_core::{ImageTensor, Plane, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Failure, OracleMode, ProtectArgs};

#[derive(Debug, Clone)]
enum TargetSpec {
    Grid,
    File(PathBuf),
}

/// Everything resolved and checked before the first image is touched.
#[derive(Debug)]
struct Manifest {
    jobs: Vec<Job>,
    target: TargetSpec,
    config: ProtectionConfig,
    endpoint: Option<Endpoint>,
    depth: BitDepth,
}

#[derive(Debug)]
struct Job {
    input: PathBuf,
    out: PathBuf,
}

/// Contents of `summary.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub input: PathBuf,
    pub target: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub oracle: String,
    pub config: ProtectionConfig,
    pub steps_completed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_lsp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_lsp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linf: Option<f64>,
    pub iwr_events: usize,
    pub dap_events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
    pub elapsed_secs: f64,
}

fn load_config(args: &ProtectArgs) -> anyhow::Result<ProtectionConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ProtectionConfig::default(),
    };
    if let Some(p) = &args.preset {
        cfg.preset = p.parse::<Preset>()?;
    }
    if let Some(v) = args.eta {
        cfg.eta = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.interval {
        cfg.interval = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dirs(inputs: &[PathBuf], out: &Path) -> Vec<PathBuf> {
    let mut seen = HashSet::new();
    inputs
        .iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
            let mut name = stem.clone();
            let mut k = 1;
            while !seen.insert(name.clone()) {
                k += 1;
                name = format!("{stem}-{k}");
            }
            out.join(name)
        })
        .collect()
}

fn resolve(args: &ProtectArgs) -> anyhow::Result<Manifest> {
    for p in &args.inputs {
        if !p.is_file() {
            return Err(anyhow!("input {} is not a file", p.display()));
        }
    }
    let target = if args.target == "grid" {
        TargetSpec::Grid
    } else {
        let p = PathBuf::from(&args.target);
        if !p.is_file() {
            return Err(anyhow!("target {} is not a file", p.display()));
        }
        TargetSpec::File(p)
    };
    let config = load_config(args)?;
    let endpoint = match args.oracle {
        OracleMode::Surrogate => None,
        OracleMode::Remote => {
            let e = args
                .endpoint
                .as_deref()
                .ok_or_else(|| anyhow!("remote oracle needs --endpoint or IMPASTO_ENDPOINT"))?;
            Some(e.parse::<Endpoint>()?)
        }
    };
    if args.out.exists() && !args.out.is_dir() {
        return Err(anyhow!("output {} exists and is not a directory", args.out.display()));
    }
    let jobs = args
        .inputs
        .iter()
        .cloned()
        .zip(output_dirs(&args.inputs, &args.out))
        .map(|(input, out)| Job { input, out })
        .collect();
    Ok(Manifest {
        jobs,
        target,
        config,
        endpoint,
        depth: if args.bits == 8 { BitDepth::Eight } else { BitDepth::Sixteen },
    })
}

pub fn run(args: ProtectArgs) -> Result<(), Failure> {
    let manifest = resolve(&args).map_err(Failure::usage)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(Failure::usage)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(Failure::usage)?;
    let outcomes: Vec<(PathBuf, anyhow::Result<()>)> = pool.install(|| {
        manifest
            .jobs
            .par_iter()
            .map(|job| (job.input.clone(), protect_one(job, &manifest)))
            .collect()
    });

    let mut failed = 0;
    for (input, res) in &outcomes {
        match res {
            Ok(()) => println!("ok     {}", input.display()),
            Err(e) => {
                failed += 1;
                println!("failed {}: {e:#}", input.display());
            }
        }
    }
    if failed > 0 {
        return Err(Failure::run(anyhow!("{failed} of {} images failed", outcomes.len())));
    }
    Ok(())
}

/// Area-resample each channel of `t` to `h×w` and match the channel count.
fn fit_target(t: &Tensor, h: usize, w: usize, c: usize) -> Tensor {
    let planes: Vec<Plane> = (0..t.channels()).map(|k| t.channel(k).area_resample(h, w)).collect();
    Tensor::from_fn(h, w, c, |y, x, k| {
        if planes.len() == c {
            planes[k].get(y, x)
        } else {
            planes.iter().map(|p| p.get(y, x)).sum::<f64>() / planes.len() as f64
        }
    })
}

fn load_target(spec: &TargetSpec, x: &ImageTensor) -> anyhow::Result<ImageTensor> {
    let (h, w, c) = (x.height(), x.width(), x.channels());
    Ok(match spec {
        TargetSpec::Grid => grid_target(h, w, c)?,
        TargetSpec::File(p) => {
            let t = ImageTensor::load_png(p).with_context(|| format!("reading target {}", p.display()))?;
            if t.shape() == x.shape() {
                t
            } else {
                ImageTensor::new(fit_target(&t, h, w, c))?
            }
        }
    })
}

/// `32768 + δ·32767` per sample.
fn delta_png(delta: &Tensor) -> impasto_core::Result<Vec<u8>> {
    let offset = delta.map(|d| (32768.0 + d.clamp(-1.0, 1.0) * 32767.0) / 65535.0);
    encode_png(&offset, BitDepth::Sixteen)
}

fn trace_jsonl(trace: &[StepRecord]) -> anyhow::Result<String> {
    let mut s = String::new();
    for r in trace {
        writeln!(s, "{}", serde_json::to_string(r)?)?;
    }
    Ok(s)
}

fn protect_one(job: &Job, m: &Manifest) -> anyhow::Result<()> {
    let x = ImageTensor::load_png(&job.input).with_context(|| format!("reading {}", job.input.display()))?;
    let y = load_target(&m.target, &x)?;
    let mut oracle: Box<dyn GuidanceOracle> = match &m.endpoint {
        None => Box::new(SurrogateOracle::new()),
        Some(e) => Box::new(RemoteOracle::new(e.clone())),
    };
    let outcome = protect_run(&x, &y, &m.config, &mut oracle);

    std::fs::create_dir_all(&job.out).with_context(|| format!("creating {}", job.out.display()))?;
    let mut summary = RunSummary {
        input: job.input.clone(),
        target: match &m.target {
            TargetSpec::Grid => "grid".into(),
            TargetSpec::File(p) => p.display().to_string(),
        },
        status: "ok".into(),
        error: None,
        oracle: m.endpoint.as_ref().map_or("surrogate".into(), |e| format!("remote {e}")),
        config: m.config.clone(),
        steps_completed: 0,
        initial_lsp: None,
        final_lsp: None,
        linf: None,
        iwr_events: 0,
        dap_events: 0,
        omega: None,
        elapsed_secs: 0.0,
    };
    let write_summary = |s: &RunSummary| -> anyhow::Result<()> {
        std::fs::write(job.out.join("summary.json"), serde_json::to_string_pretty(s)? + "\n")?;
        Ok(())
    };

    let r = match outcome {
        Ok(r) => r,
        Err(RunError { error, trace }) => {
            std::fs::write(job.out.join("trace.jsonl"), trace_jsonl(&trace)?)?;
            summary.status = "failed".into();
            summary.error = Some(error.to_string());
            summary.steps_completed = trace.len();
            write_summary(&summary)?;
            return Err(anyhow!(error).context(format!("after {} steps", trace.len())));
        }
    };

    std::fs::write(job.out.join("protected.png"), r.protected.to_png_bytes(m.depth)?)?;
    std::fs::write(job.out.join("delta.png"), delta_png(&r.delta)?)?;
    save_plane_png(&r.sensitivity, job.out.join("sensitivity.png"), BitDepth::Sixteen)?;
    save_plane_png(&r.fused_map, job.out.join("fused.png"), BitDepth::Sixteen)?;
    save_plane_png(r.difficulty.plane(), job.out.join("difficulty.png"), BitDepth::Sixteen)?;
    std::fs::write(job.out.join("trace.jsonl"), trace_jsonl(&r.trace)?)?;
    std::fs::write(job.out.join("omega.log"), &r.weight_log)?;

    summary.steps_completed = r.trace.len();
    summary.initial_lsp = Some(r.initial_lsp);
    summary.final_lsp = Some(r.final_lsp);
    summary.linf = Some(r.delta.max_abs());
    summary.iwr_events = r.iwr_events;
    summary.dap_events = r.dap_events;
    summary.omega = r.weights.as_ref().map(|w| w.omega().to_vec());
    summary.elapsed_secs = r.elapsed.as_secs_f64();
    write_summary(&summary)
}
