use crate::config::RunConfig;
use crate::{Command, Global, Sampling};
use anyhow::{Context, Result};
use bvmdesign_core::bart::{self, BartPosterior};
use bvmdesign_core::oc::plan::stream;
use bvmdesign_core::oc::{
    integrated_power_curve, optimize_design, psi_grid, OcReport, SamplingPlan, TrialDesign,
};
use bvmdesign_core::oracle::{mc_gsd, OracleConfig, ThetaSource};
use bvmdesign_core::rng::derive_seed;
use bvmdesign_core::training::{build_training_set, DesignBox, LambdaConfig, TrainingSet};
use bvmdesign_core::{Error, Model, ModelSpec, ModelVisitor};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

const DEFAULT_CURVE_POINTS: usize = 41;

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn new(global: &Global) -> Result<Self> {
        let path = global
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
        let cfg = RunConfig::load(path)?;
        let seed = global.seed.unwrap_or(cfg.seed);
        let out = match (&global.out, &cfg.out) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => cfg.resolve(o),
            (None, None) => PathBuf::from("out"),
        };
        std::fs::create_dir_all(&out)
            .with_context(|| format!("cannot create output directory {}", out.display()))?;
        Ok(Self { cfg, seed, out })
    }

    fn plan(&self, s: Sampling) -> Result<SamplingPlan> {
        Ok(SamplingPlan::new(
            self.seed,
            s.prior_draws.unwrap_or(self.cfg.evaluate.prior_draws),
            s.mvn_draws.unwrap_or(self.cfg.evaluate.mvn_draws),
        )?)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn run(global: &Global, command: Command) -> Result<()> {
    if let Command::Serve { port, root } = &command {
        return serve(global, *port, root.clone());
    }
    let ctx = Ctx::new(global)?;
    match command {
        Command::Train { k, replicates } => train(&ctx, k, replicates),
        Command::Fit => fit(&ctx),
        Command::Loocv => loocv(&ctx),
        Command::Evaluate {
            sampling,
            designs,
            no_uncertainty,
        } => evaluate(&ctx, sampling, &designs, !no_uncertainty),
        Command::Curve {
            sampling,
            designs,
            grid,
            points,
        } => curve(&ctx, sampling, &designs, grid, points),
        Command::Compare { sampling, designs } => compare(&ctx, sampling, &designs),
        Command::Optimize { sampling } => optimize(&ctx, sampling),
        Command::Oracle { designs, nsim } => oracle(&ctx, &designs, nsim),
        Command::Serve { .. } => unreachable!(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))
}

/// File-name-safe design label.
fn slug(d: &TrialDesign) -> String {
    let s: String = d
        .label()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    s.trim_matches('-').to_string()
}

struct Train<'a> {
    design_box: &'a DesignBox,
    k: usize,
    lambda: &'a LambdaConfig,
    seed: u64,
}

impl ModelVisitor for Train<'_> {
    type Output = bvmdesign_core::Result<TrainingSet>;
    fn visit<M: Model>(self, m: &M) -> Self::Output {
        build_training_set(m, &m.default_analysis_prior(), self.design_box, self.k, self.lambda, self.seed)
    }
}

fn train(ctx: &Ctx, k: Option<usize>, replicates: Option<usize>) -> Result<()> {
    let spec = ctx.cfg.model_spec()?;
    let design_box = ctx.cfg.design_box(&spec)?;
    let mut lambda = ctx.cfg.train.lambda.clone();
    if let Some(r) = replicates {
        lambda.replicates = r;
    }
    let k = k.unwrap_or(ctx.cfg.train.k);
    log::info!("training {k} points, n = {}, R = {}", lambda.n, lambda.replicates);
    let set = spec.dispatch(Train {
        design_box: &design_box,
        k,
        lambda: &lambda,
        seed: derive_seed(ctx.seed, &[stream::TRAINING]),
    })?;
    let path = ctx.path("training.csv");
    set.save(&path)?;
    println!("wrote {} ({} points)", path.display(), set.len());
    Ok(())
}

fn fit(ctx: &Ctx) -> Result<()> {
    let set = ctx.cfg.load_training(&ctx.out)?;
    let cfg = ctx.cfg.bart.with_seed(derive_seed(ctx.seed, &[stream::BART]));
    let names: Vec<String> = set.names.to_vec();
    let ens = bart::fit_named(&set.x(), &set.log_lambda(), &names, &cfg)?;
    let path = ctx.path("ensemble.json");
    ens.save(&path)?;
    println!("wrote {} ({} states, mean sigma {:.4})", path.display(), ens.n_states(), ens.mean_sigma());
    for (n, p) in names.iter().zip(ens.inclusion_proportions()) {
        println!("  inclusion {n:>8}: {p:.3}");
    }
    Ok(())
}

fn loocv(ctx: &Ctx) -> Result<()> {
    let set = ctx.cfg.load_training(&ctx.out)?;
    let cfg = ctx.cfg.bart.with_seed(derive_seed(ctx.seed, &[stream::BART]));
    let points = bart::loocv(&set.x(), &set.log_lambda(), &cfg)?;
    let path = ctx.path("loocv.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header: Vec<String> = vec!["index".into()];
    header.extend(set.names.iter().cloned());
    header.extend(["observed", "mean", "lower", "upper"].map(String::from));
    w.write_record(&header)?;
    let mut covered = 0;
    for (p, e) in points.iter().zip(&set.estimates) {
        let mut rec = vec![p.index.to_string()];
        rec.extend(e.theta.values().iter().map(|v| v.to_string()));
        rec.extend([p.observed, p.mean, p.lower, p.upper].map(|v| v.to_string()));
        w.write_record(&rec)?;
        covered += usize::from(p.lower <= p.observed && p.observed <= p.upper);
    }
    w.flush()?;
    println!(
        "wrote {} ({covered}/{} observed log lambda inside the 95% interval)",
        path.display(),
        points.len()
    );
    Ok(())
}

/// Everything an evaluation needs, loaded once.
struct Loaded {
    spec: ModelSpec,
    ensemble: BartPosterior,
    plan: SamplingPlan,
}

fn load(ctx: &Ctx, s: Sampling) -> Result<Loaded> {
    Ok(Loaded {
        spec: ctx.cfg.model_spec()?,
        ensemble: ctx.cfg.load_ensemble(&ctx.out)?,
        plan: ctx.plan(s)?,
    })
}

fn assurance_reports(
    ctx: &Ctx,
    s: Sampling,
    designs: &[TrialDesign],
    uncertainty: bool,
) -> Result<Vec<OcReport>> {
    let l = load(ctx, s)?;
    let ev = l.plan.evaluator(&l.spec, &l.ensemble)?;
    if ev.n_extrapolated() > 0 {
        log::warn!("{} of {} prior draws extrapolate beyond the training box", ev.n_extrapolated(), ev.len());
    }
    let mvn = l.plan.mvn();
    designs
        .iter()
        .map(|d| Ok(ev.assurance(d, &mvn, ctx.cfg.cost.as_ref(), uncertainty)?))
        .collect()
}

fn evaluate(ctx: &Ctx, s: Sampling, paths: &[PathBuf], uncertainty: bool) -> Result<()> {
    let designs = ctx.cfg.load_designs(paths)?;
    for (d, r) in designs.iter().zip(assurance_reports(ctx, s, &designs, uncertainty)?) {
        let base = format!("evaluate-{}", slug(d));
        write_json(&ctx.path(&format!("{base}.json")), &r)?;
        r.write_csv(create(&ctx.path(&format!("{base}.csv")))?)?;
        let ba: Vec<String> = r.cumulative_efficacy().iter().map(|v| format!("{v:.3}")).collect();
        println!(
            "{}: cumulative efficacy ({}), IESS {:.1}{}",
            r.design,
            ba.join(", "),
            r.iess,
            r.iec_total().map(|v| format!(", IEC {v:.1}")).unwrap_or_default()
        );
        for f in r.warnings.iter().chain(&r.flags) {
            println!("  {f}");
        }
    }
    Ok(())
}

fn curve(
    ctx: &Ctx,
    s: Sampling,
    paths: &[PathBuf],
    grid: Option<Vec<f64>>,
    points: Option<usize>,
) -> Result<()> {
    let l = load(ctx, s)?;
    let grid = match (grid, points, &ctx.cfg.curve.grid, ctx.cfg.curve.points) {
        (Some(g), ..) => g,
        (None, Some(n), ..) => psi_grid(&l.spec, n),
        (None, None, Some(g), _) => g.clone(),
        (None, None, None, n) => psi_grid(&l.spec, n.unwrap_or(DEFAULT_CURVE_POINTS)),
    };
    let sample = l.plan.prior_sample(&l.spec)?;
    for d in ctx.cfg.load_designs(paths)? {
        let c = integrated_power_curve(
            &grid,
            &d,
            &sample,
            l.spec.model.psi_index(),
            &l.ensemble,
            &l.plan.mvn(),
        )?;
        let base = format!("curve-{}", slug(&d));
        c.write_csv(create(&ctx.path(&format!("{base}.csv")))?)?;
        write_json(&ctx.path(&format!("{base}.json")), &c)?;
        println!("wrote {} ({} grid points)", ctx.path(&format!("{base}.csv")).display(), grid.len());
    }
    Ok(())
}

fn compare(ctx: &Ctx, s: Sampling, paths: &[PathBuf]) -> Result<()> {
    let designs = ctx.cfg.load_designs(paths)?;
    let reports = assurance_reports(ctx, s, &designs, false)?;
    let t_max = designs.iter().map(TrialDesign::n_analyses).max().unwrap_or(0);
    let path = ctx.path("compare.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec!["design".to_string(), "schedule".to_string()];
    header.extend((1..=t_max).map(|t| format!("ba_{t}")));
    header.extend(["iess", "iess_efficacy_only", "iec"].map(String::from));
    w.write_record(&header)?;

    let mut out = std::io::stdout().lock();
    let ba_head: Vec<String> = (1..=t_max).map(|t| format!("{:>7}", format!("BA{t}"))).collect();
    writeln!(out, "{:<10} {} {:>8} {:>8} {:>8}", "design", ba_head.join(" "), "IESS", "IESS*", "IEC")?;
    for (d, r) in designs.iter().zip(&reports) {
        let ba = r.cumulative_efficacy();
        let cell = |t: usize| ba.get(t).map(|v| v.to_string()).unwrap_or_default();
        let iec = r.iec_total().map(|v| v.to_string()).unwrap_or_default();
        let sched: Vec<String> = d.schedule.iter().map(|n| n.to_string()).collect();
        let mut rec = vec![r.design.clone(), sched.join(";")];
        rec.extend((0..t_max).map(cell));
        rec.extend([r.iess.to_string(), r.iess_efficacy_only.to_string(), iec]);
        w.write_record(&rec)?;

        let shown: Vec<String> = (0..t_max)
            .map(|t| ba.get(t).map(|v| format!("{v:>7.3}")).unwrap_or_else(|| format!("{:>7}", "")))
            .collect();
        let iec = r.iec_total().map(|v| format!("{v:>8.1}")).unwrap_or_else(|| format!("{:>8}", "-"));
        writeln!(
            out,
            "{:<10} {} {:>8.1} {:>8.1} {iec}",
            r.design,
            shown.join(" "),
            r.iess,
            r.iess_efficacy_only
        )?;
    }
    w.flush()?;
    writeln!(out, "IESS* counts efficacy stops only; wrote {}", path.display())?;
    Ok(())
}

fn optimize(ctx: &Ctx, s: Sampling) -> Result<()> {
    let section = ctx
        .cfg
        .optimize
        .as_ref()
        .ok_or_else(|| Error::Config("the config has no optimize section".into()))?;
    let paths: Vec<PathBuf> = section.candidates.iter().map(|p| ctx.cfg.resolve(p)).collect();
    let designs = ctx.cfg.load_designs(&paths)?;
    let l = load(ctx, s)?;
    let ev = l.plan.evaluator(&l.spec, &l.ensemble)?;
    let ranking = optimize_design(&ev, &designs, section.objective, ctx.cfg.cost.as_ref(), &l.plan.mvn())?;
    ranking.write_csv(create(&ctx.path("ranking.csv"))?)?;
    write_json(&ctx.path("ranking.json"), &ranking)?;
    if let Some(msg) = &ranking.diagnostic {
        println!("{msg}");
    }
    for r in &ranking.ranked {
        println!(
            "{:>3}. {:<10} score {:>9.2}  assurance {:.3}  IESS {:.1}",
            r.rank, r.design, r.score, r.assurance, r.iess
        );
    }
    Ok(())
}

struct Oracle<'a> {
    spec: &'a ModelSpec,
    design: &'a TrialDesign,
    config: &'a OracleConfig,
    cost: Option<&'a bvmdesign_core::oc::CostSpec>,
}

impl ModelVisitor for Oracle<'_> {
    type Output = bvmdesign_core::Result<OcReport>;
    fn visit<M: Model>(self, m: &M) -> Self::Output {
        let r = mc_gsd(
            m,
            &m.default_analysis_prior(),
            ThetaSource::DesignPrior(&self.spec.design_prior),
            self.design,
            self.config,
            self.cost,
        )?;
        Ok(r.report)
    }
}

fn oracle(ctx: &Ctx, paths: &[PathBuf], nsim: Option<usize>) -> Result<()> {
    let spec = ctx.cfg.model_spec()?;
    for (i, d) in ctx.cfg.load_designs(paths)?.iter().enumerate() {
        let mut config = ctx.cfg.oracle.with_seed(derive_seed(ctx.seed, &[stream::ORACLE, i as u64]));
        if let Some(n) = nsim {
            config.nsim = n;
        }
        let r = spec.dispatch(Oracle {
            spec: &spec,
            design: d,
            config: &config,
            cost: ctx.cfg.cost.as_ref(),
        })?;
        let base = format!("oracle-{}", slug(d));
        write_json(&ctx.path(&format!("{base}.json")), &r)?;
        r.write_csv(create(&ctx.path(&format!("{base}.csv")))?)?;
        let ba: Vec<String> = r
            .analyses
            .iter()
            .map(|a| format!("{:.3} +/- {:.3}", a.efficacy_cumulative, a.se_efficacy_cumulative))
            .collect();
        println!("{} (nsim {}): cumulative efficacy {}", r.design, config.nsim, ba.join(", "));
    }
    Ok(())
}

fn serve(global: &Global, port: u16, root: Option<PathBuf>) -> Result<()> {
    let root = match (root, &global.config) {
        (Some(r), _) => r,
        (None, Some(c)) => c.parent().map(Path::to_path_buf).unwrap_or_default(),
        (None, None) => std::env::current_dir()?,
    };
    let state = bvmdesign_service::AppState::new(root);
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(bvmdesign_service::serve(addr, state))?;
    Ok(())
}
