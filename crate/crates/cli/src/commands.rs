use std::fmt::Display;

use flurka::analysis::{
    error_bound_experiment, kernel_label, kernelized_rank_profile, ErrorExperiment, ProjectionChoice,
    TolPolicy,
};
use flurka::attention::{AttentionConfig, FeatureMapSpec, KernelKind, ModelKind};
use flurka::bench::{time_interleaved, BenchRecord, BenchSetup, Variant};
use flurka::costmodel::{crossover_n, CostRow, COST_CSV_HEADER};
use flurka::grad::{gradient_check, toy_train, GradCheckConfig, TrainConfig, Uptrain, GRAD_TOLERANCE};
use flurka::Error;
use serde::Serialize;

use crate::output::{parallel_map, worker_count, CsvOut};
use crate::{
    BaseArg, BenchArgs, CostArgs, ErrArgs, GradArgs, KernelArg, KernelChoice, ProjArg, RankArgs, TrainArgs,
    VariantArg,
};

pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn assertion(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Assertion(_) | Error::Divergence { .. } => 1,
            Error::Config(_) | Error::Transfer(_) => 2,
            Error::Overflow(_) | Error::FeatureOverflow { .. } => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(e: impl Display) -> Failure {
    Failure::usage(format!("cannot write output: {e}"))
}

type CmdResult = Result<(), Failure>;

fn write_all<T: Serialize>(out: Option<&std::path::Path>, rows: &[T]) -> CmdResult {
    let mut csv = CsvOut::open(out).map_err(io_failure)?;
    for r in rows {
        csv.row(r).map_err(io_failure)?;
    }
    csv.finish().map_err(io_failure)
}

fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Full => Variant::Full,
        VariantArg::Lowrank => Variant::LowRank,
        VariantArg::Kernel => Variant::Kernel,
        VariantArg::Flurka => Variant::Flurka,
        VariantArg::FlurkaNaive => Variant::FlurkaNaive,
    }
}

fn kernel_kind(k: KernelArg, features: usize) -> KernelKind {
    match k {
        KernelArg::Prf => KernelKind::Prf { features },
        KernelArg::Elu => KernelKind::Elu,
    }
}

pub fn bench(a: BenchArgs) -> CmdResult {
    if a.reps == 0 {
        return Err(Failure::usage("--reps must be at least 1"));
    }
    let mut configs = Vec::new();
    for &n in a.n.values() {
        for &dk in a.dk.values() {
            for &dh in a.dh.values() {
                for &heads in a.heads.values() {
                    if let Some(dm) = &a.dm {
                        if let Some(bad) = dm.values().iter().find(|&&d| d != heads * dh) {
                            return Err(Failure::usage(format!(
                                "d_m {bad} must equal heads * d_h = {heads} * {dh}"
                            )));
                        }
                    }
                    configs.push(AttentionConfig::new(n, dh, heads, dk, a.seed)?);
                }
            }
        }
    }
    let variants: Vec<Variant> = a.variant.iter().map(|&v| variant(v)).collect();
    let mut records = Vec::new();
    // Timed runs stay on this thread.
    for cfg in &configs {
        let spec = FeatureMapSpec {
            kind: kernel_kind(a.kernel, a.features.unwrap_or(cfg.d_head)),
            seed: a.seed,
            scale_inputs: true,
        };
        let setup = BenchSetup::sample(cfg, &spec, a.input_std)?;
        let timings = time_interleaved(&setup, &variants, a.warmup, a.reps)?;
        for (&v, t) in variants.iter().zip(timings) {
            records.push(BenchRecord::new(v, &spec, cfg, a.warmup, t));
        }
    }
    write_all(a.out.out.as_deref(), &records)
}

pub fn costmodel(a: CostArgs) -> CmdResult {
    let mut points = Vec::new();
    for &n in a.n.values() {
        for &dm in a.dm.values() {
            for &dk in a.dk.values() {
                for &dh in a.dh.values() {
                    for &h in a.heads.values() {
                        points.push([n, dm, dk, dh, h].map(|x| x as u64));
                    }
                }
            }
        }
    }
    let crossover = a.crossover.then_some(a.n_max);
    let rows = parallel_map(&points, worker_count(), |&[n, dm, dk, dh, h]| {
        let row = CostRow::evaluate(n, dm, dk, dh, h)?;
        let cross = match crossover {
            Some(n_max) => Some(crossover_n(dm, dk, dh, h, n_max)?),
            None => None,
        };
        Ok::<_, Error>((row, cross))
    });
    let mut csv = CsvOut::open(a.out.out.as_deref()).map_err(io_failure)?;
    let mut header: Vec<String> = COST_CSV_HEADER.split(',').map(String::from).collect();
    if crossover.is_some() {
        header.push("crossover_n".into());
    }
    csv.raw(&header).map_err(io_failure)?;
    for r in rows {
        let (row, cross) = r?;
        let mut fields: Vec<String> = [
            row.n,
            row.d_m,
            row.d_k,
            row.d_h,
            row.h,
            row.flops_full,
            row.flops_lowrank,
            row.flops_kernel,
            row.flops_flurka,
            row.claim1 as u64,
            row.claim2 as u64,
            row.claim3 as u64,
        ]
        .iter()
        .map(u64::to_string)
        .collect();
        if let Some(c) = cross {
            fields.push(c.map_or(String::new(), |v| v.to_string()));
        }
        csv.raw(&fields).map_err(io_failure)?;
    }
    csv.finish().map_err(io_failure)
}

fn parse_tol(s: &str) -> Result<TolPolicy, Failure> {
    let bad = || Failure::usage(format!("--tol must be machine, rel:<x> or abs:<x>, got `{s}`"));
    if s == "machine" {
        return Ok(TolPolicy::Machine);
    }
    let (kind, value) = s.split_once(':').ok_or_else(bad)?;
    let v: f64 = value.parse().map_err(|_| bad())?;
    if v.is_nan() || v < 0.0 {
        return Err(bad());
    }
    match kind {
        "rel" => Ok(TolPolicy::Relative(v)),
        "abs" => Ok(TolPolicy::Absolute(v)),
        _ => Err(bad()),
    }
}

pub fn rank(a: RankArgs) -> CmdResult {
    let tol = parse_tol(&a.tol)?;
    let dh = a.dh.unwrap_or(a.dp);
    let spec = match a.kernel {
        KernelArg::Prf => FeatureMapSpec::prf(a.dp, a.seed),
        KernelArg::Elu if dh != a.dp => {
            return Err(Failure::usage(format!(
                "the ELU map has d_p = d_h; got --dp {} and --dh {dh}",
                a.dp
            )))
        }
        KernelArg::Elu => FeatureMapSpec::elu(),
    };
    let cfg = AttentionConfig::new(a.n, dh, a.heads, 1, a.seed)?;
    let records = kernelized_rank_profile(&cfg, &spec, a.layers, tol, a.input_std)?;
    write_all(a.out.out.as_deref(), &records)?;
    if let Some(r) = records.iter().find(|r| r.rank > r.d_p.min(r.n)) {
        return Err(Failure::assertion(format!(
            "layer {} head {}: rank {} exceeds min(n, d_p) = {}",
            r.layer,
            r.head,
            r.rank,
            r.d_p.min(r.n)
        )));
    }
    Ok(())
}

pub fn errbound(a: ErrArgs) -> CmdResult {
    let projection = match a.proj {
        ProjArg::Practical => ProjectionChoice::Practical,
        ProjArg::Identity => ProjectionChoice::Identity,
        ProjArg::Theorem => ProjectionChoice::Theorem { delta: a.delta },
    };
    let dk = a.dk.unwrap_or(match projection {
        ProjectionChoice::Identity => a.n,
        _ => (a.n / 4).max(1),
    });
    let exp = ErrorExperiment {
        cfg: AttentionConfig::new(a.n, a.dh, a.heads, dk, a.seed)?,
        spec: FeatureMapSpec {
            kind: kernel_kind(a.kernel, a.m),
            seed: a.seed,
            scale_inputs: true,
        },
        projection,
        trials: a.trials,
        seed: a.seed,
        input_std: a.input_std,
    };
    let records = error_bound_experiment(&exp)?;
    write_all(a.out.out.as_deref(), &records)
}

#[derive(Serialize)]
struct GradRow {
    variant: &'static str,
    kernel: &'static str,
    seed: u64,
    entries: usize,
    max_rel_error: f64,
    worst: String,
}

pub fn gradcheck(a: GradArgs) -> CmdResult {
    let kernels: Vec<KernelKind> = match a.kernel {
        KernelChoice::Prf => vec![KernelKind::Prf { features: a.features }],
        KernelChoice::Elu => vec![KernelKind::Elu],
        KernelChoice::Both => vec![KernelKind::Elu, KernelKind::Prf { features: a.features }],
    };
    let mut jobs = Vec::new();
    for &v in &a.variant {
        let kind = match v {
            VariantArg::Full => ModelKind::Full,
            VariantArg::Lowrank => ModelKind::LowRank,
            VariantArg::Kernel => ModelKind::Kernel,
            VariantArg::Flurka => ModelKind::Flurka,
            VariantArg::FlurkaNaive => {
                return Err(Failure::usage("no backward pass for flurka-naive"));
            }
        };
        for &kernel in &kernels {
            for seed in 0..a.seeds {
                jobs.push(GradCheckConfig {
                    n: a.n,
                    d_k: a.dk,
                    d_head: a.dh,
                    heads: a.heads,
                    ..GradCheckConfig::new(kind, kernel, seed)
                });
            }
        }
    }
    let reports = parallel_map(&jobs, worker_count(), gradient_check)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<GradRow> = reports
        .iter()
        .map(|r| GradRow {
            variant: variant_name(r.kind),
            kernel: kernel_label(r.kernel),
            seed: r.seed,
            entries: r.entries,
            max_rel_error: r.max_rel_error,
            worst: r.worst.clone(),
        })
        .collect();
    write_all(a.out.out.as_deref(), &rows)?;
    let worst = reports
        .iter()
        .max_by(|x, y| x.max_rel_error.total_cmp(&y.max_rel_error))
        .ok_or_else(|| Failure::usage("nothing to check"))?;
    eprintln!(
        "max relative error: {:.3e} ({})",
        worst.max_rel_error, worst.worst
    );
    if !worst.passes() {
        return Err(Failure::assertion(format!(
            "{} {} seed {}: relative error {:.3e} at {} exceeds {GRAD_TOLERANCE:e}",
            variant_name(worst.kind),
            kernel_label(worst.kernel),
            worst.seed,
            worst.max_rel_error,
            worst.worst
        )));
    }
    Ok(())
}

fn variant_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Full => "full",
        ModelKind::LowRank => "lowrank",
        ModelKind::Kernel => "kernel",
        ModelKind::Flurka => "flurka",
    }
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

pub fn train(a: TrainArgs) -> CmdResult {
    let kind = match a.variant {
        VariantArg::Full => ModelKind::Full,
        VariantArg::Lowrank => ModelKind::LowRank,
        VariantArg::Kernel => ModelKind::Kernel,
        VariantArg::Flurka => ModelKind::Flurka,
        VariantArg::FlurkaNaive => return Err(Failure::usage("flurka-naive cannot be trained")),
    };
    let mut tc = TrainConfig::new(kind, a.steps, a.lr, a.seed);
    tc.kernel = kernel_kind(a.kernel, a.features);
    tc.n = a.n;
    tc.d_k = a.dk;
    tc.d_head = a.dh;
    tc.heads = a.heads;
    if let (Some(alpha), Some(base)) = (a.alpha, a.base) {
        tc.uptrain = Some(Uptrain {
            base: match base {
                BaseArg::Lowrank => ModelKind::LowRank,
                BaseArg::Kernel => ModelKind::Kernel,
            },
            alpha,
        });
    }
    let report = toy_train(&tc)?;
    let rows: Vec<LossRow> = report
        .losses
        .iter()
        .enumerate()
        .map(|(step, &loss)| LossRow { step, loss })
        .collect();
    write_all(a.out.out.as_deref(), &rows)?;
    if let Some(s) = report.transfer_step {
        eprintln!("transferred to the fused model at step {s}");
    }
    Ok(())
}
