use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use perk::analysis::{conditional_cov, monte_carlo_bias_cov, worst_case_crlb, BiasCovReport, FisherResult};
use perk::config::{Paths, RunConfig};
use perk::estimator::{generate_training_set, predict_map, train_exact, Estimator};
use perk::holdout::{holdout_search, HoldoutSeeds};
use perk::io::{fmt_f64, map_to_mask, mask_to_map, read_rff, write_rff, Channel, CsvWriter, MapFile};
use perk::oracle::{oracle_grid_check, support_grid};
use perk::phantom::{masked_values, roi_stats, snr};
use perk::pipeline::{acquisition, make_phantom, train_perk, training_inputs, TestImages};
use perk::prior::{T1_TIGHT, T2_TIGHT};
use perk::signal::{KnownParams, LatentParams, LATENT_DIM};
use perk::{Error, Result};

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

const LATENT: [(&str, &str); LATENT_DIM] = [("M0", "a.u."), ("T1", "ms"), ("T2", "ms")];

impl Context {
    fn input(&self, p: &Path) -> PathBuf {
        Paths::resolve(p, &self.out)
    }

    fn output(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn single_channel(&self, p: &Path) -> Result<Array2<f64>> {
        let path = self.input(p);
        let m = MapFile::read(&path)?;
        if m.data.len() != 1 {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: format!("expected 1 channel, found {}", m.data.len()),
            });
        }
        Ok(m.data.into_iter().next().expect("one channel"))
    }

    fn test_images(&self, d: usize) -> Result<TestImages> {
        let data = MapFile::read(&self.input(&self.cfg.paths.data))?;
        Error::check_len(d, data.data.len())?;
        let kappa = self.single_channel(&self.cfg.paths.kappa)?;
        let mask = map_to_mask(&self.single_channel(&self.cfg.paths.mask)?);
        TestImages::new(data.data, kappa, mask)
    }

    /// Background mask if the file exists.
    fn background(&self) -> Result<Option<Array2<bool>>> {
        let path = self.input(&self.cfg.paths.background);
        if path.exists() {
            Ok(Some(map_to_mask(&self.single_channel(&self.cfg.paths.background)?)))
        } else {
            Ok(None)
        }
    }
}

fn latent_map(maps: Vec<Array2<f64>>) -> Result<MapFile> {
    MapFile::new(LATENT.iter().map(|(n, u)| Channel::new(n, u)).collect(), maps)
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

pub fn phantom(ctx: &Context) -> Result<u8> {
    let cfg = &ctx.cfg;
    let acq = acquisition(cfg)?;
    let run = make_phantom(&cfg.phantom, &acq, cfg.seeds().phantom)?;
    let d = acq.n_datasets();
    let data = MapFile::new(
        (1..=d).map(|i| Channel::new(&format!("y{i}"), "a.u.")).collect(),
        run.synthesis.magnitudes.clone(),
    )?;
    let scene = &run.scene;
    let singles = [
        ("data.map", data),
        ("kappa.map", MapFile::new(vec![Channel::new("kappa", "1")], vec![scene.kappa_map.clone()])?),
        ("mask.map", MapFile::new(vec![Channel::new("mask", "1")], vec![mask_to_map(&scene.tissue_mask())])?),
        (
            "background.map",
            MapFile::new(vec![Channel::new("background", "1")], vec![mask_to_map(&scene.background_mask())])?,
        ),
        ("truth.map", latent_map(scene.truth.clone())?),
        (
            "rois.map",
            MapFile::new(
                scene.rois.keys().map(|n| Channel::new(n, "1")).collect(),
                scene.rois.values().map(mask_to_map).collect(),
            )?,
        ),
    ];
    for (name, map) in singles {
        let path = ctx.output(name);
        map.write(&path)?;
        wrote(&path);
    }
    let path = ctx.output("snr.csv");
    let mut csv = CsvWriter::create(&path, &["roi", "dataset", "snr"])?;
    for (name, mask) in &scene.rois {
        for k in 0..d {
            let y = masked_values(&run.synthesis.magnitudes[k], mask)?;
            let e = masked_values(&run.synthesis.noise[k], mask)?;
            let s = snr(&y, &e)?;
            println!("snr {name} y{}: {s:.1}", k + 1);
            csv.row(&[name.clone(), format!("y{}", k + 1), fmt_f64(s)])?;
        }
    }
    csv.finish()?;
    wrote(&path);
    Ok(0)
}

pub fn train(ctx: &Context) -> Result<u8> {
    let cfg = &ctx.cfg;
    let seeds = cfg.seeds();
    let acq = acquisition(cfg)?;
    let images = ctx.test_images(acq.n_datasets())?;
    let (priors, kernel, noise) = training_inputs(cfg, &images, ctx.background()?.as_ref())?;
    println!("noise sigma: {}", noise.sigmas.iter().map(|s| format!("{s:e}")).collect::<Vec<_>>().join(" "));
    let e = &cfg.estimator;
    let (est, timing) =
        train_perk(&priors, &acq, &noise, &kernel, e.n_train, e.features, cfg.rho(), (seeds.train, seeds.features))?;
    let path = ctx.input(&cfg.paths.estimator);
    write_rff(&est, &path)?;
    wrote(&path);
    println!(
        "training: simulate {:.2}s, fit {:.2}s (N = {}, Z = {})",
        timing.simulate.as_secs_f64(),
        timing.fit.as_secs_f64(),
        e.n_train,
        e.features
    );
    Ok(0)
}

/// Writes ROI statistics of `maps` when ROI and truth files are present.
fn roi_report(ctx: &Context, maps: &[Array2<f64>], name: &str) -> Result<()> {
    let (rois, truth) = (ctx.input(&ctx.cfg.paths.rois), ctx.input(&ctx.cfg.paths.truth));
    if !(rois.exists() && truth.exists()) {
        return Ok(());
    }
    let rois = MapFile::read(&rois)?;
    let truth = MapFile::read(&truth)?;
    Error::check_len(LATENT_DIM, truth.data.len())?;
    let path = ctx.output(name);
    let mut csv =
        CsvWriter::create(&path, &["roi", "param", "n", "truth", "mean", "std", "rmse", "se_mean", "se_std"])?;
    for (ch, mask) in rois.channels.iter().zip(&rois.data) {
        let mask = map_to_mask(mask);
        let Some(ix) = mask.indexed_iter().find(|(_, m)| **m).map(|(i, _)| i) else {
            continue;
        };
        for (l, (param, _)) in LATENT.iter().enumerate() {
            let t = truth.data[l][ix];
            let s = roi_stats(&maps[l], t, &mask)?;
            println!("{} {param}: {:.4} ± {:.4} (rmse {:.4}, truth {t})", ch.name, s.mean, s.std, s.rmse);
            let mut row = vec![ch.name.clone(), param.to_string(), s.n.to_string()];
            row.extend([t, s.mean, s.std, s.rmse, s.se_mean, s.se_std].map(fmt_f64));
            csv.row(&row)?;
        }
    }
    csv.finish()?;
    wrote(&path);
    Ok(())
}

pub fn estimate(ctx: &Context) -> Result<u8> {
    let cfg = &ctx.cfg;
    let acq = acquisition(cfg)?;
    let est = read_rff(&ctx.input(&cfg.paths.estimator))?;
    let images = ctx.test_images(acq.n_datasets())?;
    let t0 = Instant::now();
    let maps = predict_map(&est, &images.datasets, std::slice::from_ref(&images.kappa), &images.mask)?;
    println!("testing: {:.2}s over {} voxels", t0.elapsed().as_secs_f64(), images.n_masked());
    let path = ctx.output("perk.map");
    latent_map(maps.clone())?.write(&path)?;
    wrote(&path);
    roi_report(ctx, &maps, "perk_stats.csv")?;
    Ok(0)
}

pub fn vpm(ctx: &Context) -> Result<u8> {
    let cfg = &ctx.cfg;
    let acq = acquisition(cfg)?;
    let images = ctx.test_images(acq.n_datasets())?;
    let t0 = Instant::now();
    let res = perk::vpm::vpm_map(&acq, &images.datasets, &images.kappa, &images.mask, &cfg.vpm_config())?;
    println!(
        "vpm: {:.2}s over {} voxels, {} kappa clusters",
        t0.elapsed().as_secs_f64(),
        images.n_masked(),
        res.clusters.centers.len()
    );
    let path = ctx.output("vpm.map");
    latent_map(res.maps.clone())?.write(&path)?;
    wrote(&path);
    roi_report(ctx, &res.maps, "vpm_stats.csv")?;
    Ok(0)
}

pub fn holdout(ctx: &Context) -> Result<u8> {
    let cfg = &ctx.cfg;
    let seeds = cfg.seeds();
    let acq = acquisition(cfg)?;
    let images = ctx.test_images(acq.n_datasets())?;
    let (priors, kernel, noise) = training_inputs(cfg, &images, ctx.background()?.as_ref())?;
    let h = &cfg.holdout;
    let t0 = Instant::now();
    let surface = holdout_search(
        &h.to_config(),
        &priors,
        &acq,
        &noise,
        &kernel,
        h.n_train,
        h.features,
        HoldoutSeeds { train: seeds.holdout_train, holdout: seeds.holdout_test, features: seeds.holdout_features },
    )?;
    let path = ctx.output("holdout.csv");
    let mut csv = CsvWriter::create(&path, &["lambda_log2", "rho_log2", "lambda", "rho", "cost"])?;
    for (i, lam) in surface.lambda_grid.iter().enumerate() {
        for (j, rho) in surface.rho_grid.iter().enumerate() {
            csv.numbers(&[lam.log2(), rho.log2(), *lam, *rho, surface.cost[[i, j]]])?;
        }
    }
    csv.finish()?;
    wrote(&path);
    println!(
        "holdout: {:.2}s; best lambda = 2^{:.2}, rho = 2^{:.2}, cost = {:.6}",
        t0.elapsed().as_secs_f64(),
        surface.best_lambda().log2(),
        surface.best_rho().log2(),
        surface.min_cost()
    );
    Ok(0)
}

fn fisher_row(i: usize, x: &LatentParams, nu: &KnownParams, f: &FisherResult) -> Vec<String> {
    let mut row = vec![i.to_string()];
    row.extend([x.m0, x.t1, x.t2, nu.kappa, f.cond].map(fmt_f64));
    row.extend(f.crlb_std().iter().map(|v| fmt_f64(*v)));
    row.push(f.is_singular().to_string());
    row
}

const FISHER_HEADER: [&str; 10] =
    ["point", "m0", "t1", "t2", "kappa", "cond", "crlb_std_m0", "crlb_std_t1", "crlb_std_t2", "singular"];

fn bias_cov_row(point: usize, estimator: &str, r: &BiasCovReport) -> Vec<String> {
    let method = match r.method {
        perk::analysis::Method::ClosedForm => "closed_form",
        perk::analysis::Method::MonteCarlo => "monte_carlo",
    };
    let mut row = vec![point.to_string(), estimator.to_string(), method.to_string(), fmt_f64(r.min_snr)];
    row.extend(r.bias.iter().map(|v| fmt_f64(*v)));
    row.extend(r.cov.iter().map(|v| fmt_f64(*v)));
    row
}

pub fn analyze(ctx: &Context) -> Result<u8> {
    let cfg = &ctx.cfg;
    let a = &cfg.analysis;
    let seeds = cfg.seeds();
    let acq = acquisition(cfg)?;
    let images = ctx.test_images(acq.n_datasets())?;
    let (priors, kernel, noise) = training_inputs(cfg, &images, ctx.background()?.as_ref())?;
    let points: Vec<(LatentParams, KnownParams)> = a
        .points
        .iter()
        .map(|p| Ok((LatentParams::new(p.m0, p.t1, p.t2)?, KnownParams::new(p.kappa)?)))
        .collect::<Result<_>>()?;

    let path = ctx.output("fisher.csv");
    let mut csv = CsvWriter::create(&path, &FISHER_HEADER)?;
    let at_points = if points.is_empty() { None } else { Some(worst_case_crlb(&acq, &points, &noise)?) };
    for (i, ((x, nu), f)) in points.iter().zip(at_points.iter().flat_map(|s| &s.points)).enumerate() {
        csv.row(&fisher_row(i, x, nu, f))?;
    }
    csv.finish()?;
    wrote(&path);

    let (n1, n2, nk) = a.crlb_grid;
    let amp = cfg.phantom.kappa_amplitude;
    let grid = support_grid((T1_TIGHT.0, T1_TIGHT.1, n1), (T2_TIGHT.0, T2_TIGHT.1, n2), (1.0 - amp, 1.0 + amp, nk));
    let summary = worst_case_crlb(&acq, &grid, &noise)?;
    let path = ctx.output("crlb.csv");
    let mut csv = CsvWriter::create(&path, &FISHER_HEADER)?;
    for (i, ((x, nu), f)) in grid.iter().zip(&summary.points).enumerate() {
        csv.row(&fisher_row(i, x, nu, f))?;
    }
    csv.finish()?;
    wrote(&path);
    println!("crlb: worst condition number {:e} at grid point {}", summary.worst_cond.1, summary.worst_cond.0);
    for ((name, unit), (i, v)) in LATENT.iter().zip(&summary.worst_crlb) {
        println!("crlb: worst {name} std {:.4} {unit} at grid point {i}", v.sqrt());
    }
    if !summary.singular.is_empty() {
        println!("crlb: {} singular grid points", summary.singular.len());
    }

    let ts = generate_training_set(&priors, &acq, &noise, a.n_train, seeds.analysis)?;
    let exact = train_exact(&ts, &kernel, &[a.rho_log2.exp2(); LATENT_DIM])?;
    let rff_path = ctx.input(&cfg.paths.estimator);
    let rff = if rff_path.exists() { Some(read_rff(&rff_path)?) } else { None };
    let path = ctx.output("bias_cov.csv");
    let mut header = vec!["point", "estimator", "method", "min_snr", "bias_m0", "bias_t1", "bias_t2"];
    let cov_names: Vec<String> =
        (0..LATENT_DIM).flat_map(|i| (0..LATENT_DIM).map(move |j| format!("cov_{}{}", i, j))).collect();
    header.extend(cov_names.iter().map(String::as_str));
    let mut csv = CsvWriter::create(&path, &header)?;
    for (i, (x, nu)) in points.iter().enumerate() {
        let closed = conditional_cov(&exact, &acq, x, nu, &noise)?;
        csv.row(&bias_cov_row(i, "exact", &closed))?;
        if a.trials > 0 {
            let mc_seed = perk::rng::child_seed(seeds.analysis, i as u64 + 1);
            let mc = monte_carlo_bias_cov(&exact, &acq, x, nu, &noise, a.trials, mc_seed)?;
            csv.row(&bias_cov_row(i, "exact", &mc))?;
            if let Some(rff) = &rff {
                Error::check_len(rff.regressor_dim(), acq.n_datasets() + 1)?;
                let mc = monte_carlo_bias_cov(rff, &acq, x, nu, &noise, a.trials, mc_seed)?;
                csv.row(&bias_cov_row(i, "rff", &mc))?;
            }
        }
    }
    csv.finish()?;
    wrote(&path);
    Ok(0)
}

pub fn oracle_check(ctx: &Context) -> Result<u8> {
    let cfg = &ctx.cfg;
    let o = &cfg.oracle;
    let acq = acquisition(cfg)?;
    let (n1, n2, nk) = o.grid;
    let (k_lo, k_hi) = o.kappa_range;
    let grid = support_grid((T1_TIGHT.0, T1_TIGHT.1, n1), (T2_TIGHT.0, T2_TIGHT.1, n2), (k_lo, k_hi, nk));
    let t0 = Instant::now();
    let report = oracle_grid_check(&acq.scans, &grid, &o.simulator, cfg.seeds().oracle)?;
    let path = ctx.output("oracle.csv");
    let mut csv = CsvWriter::create(&path, &["t1", "t2", "kappa", "scan", "echo", "analytic", "simulated", "rel_err"])?;
    for r in &report.rows {
        csv.row(&[
            fmt_f64(r.x.t1),
            fmt_f64(r.x.t2),
            fmt_f64(r.nu.kappa),
            r.scan.to_string(),
            r.echo.to_string(),
            fmt_f64(r.analytic),
            fmt_f64(r.simulated),
            fmt_f64(r.rel_err),
        ])?;
    }
    csv.finish()?;
    wrote(&path);
    let worst = &report.rows[report.worst];
    let pass = report.max_rel_err() <= o.threshold;
    println!(
        "oracle: {:.2}s; max relative error {:e} (T1 {}, T2 {}, kappa {}, scan {}, echo {}); threshold {:e}: {}",
        t0.elapsed().as_secs_f64(),
        worst.rel_err,
        worst.x.t1,
        worst.x.t2,
        worst.nu.kappa,
        worst.scan,
        worst.echo,
        o.threshold,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 3 })
}
