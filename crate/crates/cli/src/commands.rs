//! The five subcommands. Every command echoes its resolved settings into the
//! output directory first, then writes artifacts whose bytes depend only on
//! the settings, so reruns reproduce files exactly.

use std::path::Path;

use vaelab::data::checkpoint::{load_vae, save_vae};
use vaelab::data::mnist::load_mnist;
use vaelab::data::pgm::write_sample_grid;
use vaelab::data::report::{
    fmt_g6, write_csv, write_history_csv, write_sweep_csv, SweepRow, SWEEP_HEADER,
};
use vaelab::metrics::{
    build_context, conditional_p_values, fit_stats, frechet_distance, load_context,
    load_or_build_context, quartiles, save_context, unconditional_p_values, ClassifierContext,
    Quartiles,
};
use vaelab::rng::{derive, Rng, Stream};
use vaelab::trainer::{run_training_with, sample_population, sweep_run};
use vaelab::vae::sample_prior;
use vaelab::{par, Tensor};

use crate::settings::Settings;
use crate::{CliError, CliResult};

/// Images per per-epoch sample grid (8 by 8).
const EPOCH_GRID_N: usize = 64;
const EPOCH_GRID_COLS: usize = 8;

/// Samples per β row in the sweep montage.
const MONTAGE_COLS: usize = 16;

/// Images shown per repetition row in the repeat grids.
const REPEAT_GRID_COLS: usize = 16;

/// Generator-stream offset for montage tiles. Training evaluation uses
/// offset 0, per-epoch grids 1 through epochs, metric populations 1000.
const GEN_OFFSET_MONTAGE: u64 = 2000;

pub fn cmd_train(settings: &Settings) -> CliResult<()> {
    settings.echo()?;
    let dataset = load_mnist(&settings.data_dir)?;
    let config = settings.train_config();
    let out = settings.out_dir.clone();
    let seed = settings.seed;
    let epochs = config.epochs;
    let (model, history) = run_training_with(&config, &dataset, |epoch, model, records| {
        let mut rng = Rng::new(seed, Stream::Gen, 1 + epoch as u64);
        let images = model.decode(&sample_prior(EPOCH_GRID_N, &mut rng)?)?;
        let path = out.join(format!("samples_epoch{}.pgm", epoch + 1));
        write_sample_grid(&path, &images, EPOCH_GRID_COLS)?;
        if let Some(r) = records.last() {
            println!(
                "epoch {}/{} step {} train {} test {} gen {}",
                epoch + 1,
                epochs,
                r.step,
                fmt_g6(r.train.total),
                fmt_g6(r.test.total),
                fmt_g6(r.gen.total)
            );
        }
        Ok(())
    })?;
    save_vae(&settings.out_dir.join("model.ckpt"), &model)?;
    write_history_csv(&settings.out_dir.join("history.csv"), &history.records)?;
    let s = &history.summary;
    println!(
        "last-epoch averages: train {} test {} gen {}",
        fmt_g6(s.train.total),
        fmt_g6(s.test.total),
        fmt_g6(s.gen.total)
    );
    Ok(())
}

pub fn cmd_sweep(settings: &Settings) -> CliResult<()> {
    settings.echo()?;
    let names: Vec<String> = settings
        .betas
        .iter()
        .map(|b| format!("beta_{}", fmt_g6(*b)))
        .collect();
    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(CliError::Usage(format!(
                "beta grid contains {} twice",
                fmt_g6(settings.betas[i])
            )));
        }
    }
    let dataset = load_mnist(&settings.data_dir)?;
    let ctx = load_or_build_context(&settings.classifier_cache, &dataset, settings.seed)?;
    let base = settings.train_config();

    // Per-run seeds derive from the position in the full grid, so resuming
    // a partial sweep trains exactly the models a fresh sweep would.
    let mut pending = Vec::new();
    for (i, &beta) in settings.betas.iter().enumerate() {
        let dir = settings.out_dir.join(&names[i]);
        if dir.join("row.csv").exists() && dir.join("model.ckpt").exists() {
            println!("{} complete, skipping", names[i]);
        } else {
            pending.push((i, beta));
        }
    }
    let outcomes = par::run_jobs(pending, settings.jobs, |(index, beta)| {
        (index, sweep_run(index, beta, &base, &dataset, &ctx))
    });
    let mut failures = Vec::new();
    for (index, outcome) in outcomes {
        let dir = settings.out_dir.join(&names[index]);
        match outcome {
            Ok(run) => {
                std::fs::create_dir_all(&dir).map_err(|e| CliError::runtime(&dir, e))?;
                save_vae(&dir.join("model.ckpt"), &run.model)?;
                write_history_csv(&dir.join("history.csv"), &run.history.records)?;
                let row = SweepRow {
                    beta: run.beta,
                    summary: run.history.summary,
                    fid: run.fid,
                };
                write_sweep_csv(&dir.join("row.csv"), &[row])?;
                println!(
                    "beta {} test {} gen {} fid {}",
                    fmt_g6(run.beta),
                    fmt_g6(run.history.summary.test.total),
                    fmt_g6(run.history.summary.gen.total),
                    fmt_g6(run.fid)
                );
            }
            Err(e) => {
                eprintln!("beta {} failed: {e}", fmt_g6(settings.betas[index]));
                failures.push(fmt_g6(settings.betas[index]));
            }
        }
    }

    // The summary table and montage are rebuilt from the per-β artifacts on
    // disk, covering both this invocation's runs and resumed ones.
    let mut done: Vec<(f64, usize, String)> = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let path = settings.out_dir.join(name).join("row.csv");
        let Ok(text) = std::fs::read_to_string(&path) else {
            continue;
        };
        let Some(line) = text.lines().nth(1) else {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "{} has no data row",
                path.display()
            )));
        };
        done.push((settings.betas[i], i, line.to_string()));
    }
    done.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut table = String::from(SWEEP_HEADER);
    for (_, _, line) in &done {
        table.push('\n');
        table.push_str(line);
    }
    table.push('\n');
    let table_path = settings.out_dir.join("sweep.csv");
    std::fs::write(&table_path, table).map_err(|e| CliError::runtime(&table_path, e))?;

    if !done.is_empty() {
        let mut tiles: Option<Tensor<f32>> = None;
        for (_, index, _) in &done {
            let model = load_vae(&settings.out_dir.join(&names[*index]).join("model.ckpt"))?;
            let mut rng = Rng::new(
                derive(settings.seed, *index as u64),
                Stream::Gen,
                GEN_OFFSET_MONTAGE,
            );
            let row = model.decode(&sample_prior(MONTAGE_COLS, &mut rng)?)?;
            tiles = Some(match tiles {
                None => row,
                Some(grid) => grid.concat_rows(&row)?,
            });
        }
        let grid = tiles.expect("done is nonempty");
        write_sample_grid(&settings.out_dir.join("montage.pgm"), &grid, MONTAGE_COLS)?;
    }

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow::anyhow!(
            "sweep failed for beta {}",
            failures.join(", ")
        )))
    }
}

pub fn cmd_metrics(settings: &Settings, checkpoint: &Path) -> CliResult<()> {
    settings.echo()?;
    let ctx = scoring_context(settings)?;
    let model = load_vae(checkpoint)?;
    let samples = sample_population(&model, settings.metrics.n_samples, settings.seed)?;
    let logits = ctx.model.logits(&samples)?;
    let fid = frechet_distance(&ctx.global, &fit_stats(&logits)?)?;
    let cond: Vec<f64> = conditional_p_values(&logits, &ctx.per_class)?
        .iter()
        .map(|r| r.p)
        .collect();
    let uncond = unconditional_p_values(&logits, &ctx.global)?;
    let cq = quartiles(&cond)?;
    let uq = quartiles(&uncond)?;

    let mut rows: Vec<(String, f64)> = vec![("fid".into(), fid)];
    push_quartiles(&mut rows, "cond_p", &cq);
    push_quartiles(&mut rows, "uncond_p", &uq);
    rows.push(("classifier_accuracy".into(), ctx.accuracy));
    for (name, value) in &rows {
        println!("{name} {}", fmt_g6(*value));
    }
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, value)| vec![name.clone(), fmt_g6(*value)])
        .collect();
    write_csv(
        &settings.out_dir.join("metrics.csv"),
        "quantity,value",
        &cells,
    )?;
    Ok(())
}

pub fn cmd_repeat(settings: &Settings, checkpoint: &Path) -> CliResult<()> {
    settings.echo()?;
    let dataset = load_mnist(&settings.data_dir)?;
    let n = settings.metrics.n_samples;
    if n > dataset.train_len() {
        return Err(CliError::Usage(format!(
            "n-samples {} exceeds the training split of {}",
            n,
            dataset.train_len()
        )));
    }
    let ctx = load_or_build_context(&settings.classifier_cache, &dataset, settings.seed)?;
    let model = load_vae(checkpoint)?;
    let generated = sample_population(&model, n, settings.seed)?;
    let picks = Rng::new(settings.seed, Stream::Stats, 1).sample_distinct(n, dataset.train_len());
    let originals = dataset.train_images.gather_rows(&picks)?;

    let mut cells = Vec::new();
    for (population, start) in [("generated", &generated), ("train", &originals)] {
        let chain = model.repeated_autoencode(start, settings.metrics.n_reps)?;
        for (rep, batch) in chain.iter().enumerate() {
            let logits = ctx.model.logits(batch)?;
            let ps: Vec<f64> = conditional_p_values(&logits, &ctx.per_class)?
                .iter()
                .map(|r| r.p)
                .collect();
            let q = quartiles(&ps)?;
            println!(
                "{population} rep {rep} median {} mean {}",
                fmt_g6(q.median),
                fmt_g6(q.mean)
            );
            cells.push(vec![
                population.to_string(),
                rep.to_string(),
                fmt_g6(q.min),
                fmt_g6(q.q1),
                fmt_g6(q.median),
                fmt_g6(q.q3),
                fmt_g6(q.max),
                fmt_g6(q.mean),
            ]);
        }
        let cols = REPEAT_GRID_COLS.min(n);
        let head: Vec<usize> = (0..cols).collect();
        let mut grid = chain[0].gather_rows(&head)?;
        for batch in &chain[1..] {
            grid = grid.concat_rows(&batch.gather_rows(&head)?)?;
        }
        let path = settings.out_dir.join(format!("repeat_{population}.pgm"));
        write_sample_grid(&path, &grid, cols)?;
    }
    write_csv(
        &settings.out_dir.join("repeat_pvalues.csv"),
        "population,repetition,min,q1,median,q3,max,mean",
        &cells,
    )?;
    Ok(())
}

pub fn cmd_classifier_train(settings: &Settings) -> CliResult<()> {
    settings.echo()?;
    let dataset = load_mnist(&settings.data_dir)?;
    let ctx = build_context(&dataset, settings.seed)?;
    if let Some(parent) = settings.classifier_cache.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::runtime(parent, e))?;
        }
    }
    save_context(&settings.classifier_cache, &ctx)?;
    println!("classifier accuracy {}", fmt_g6(ctx.accuracy));
    println!("cache written to {}", settings.classifier_cache.display());
    Ok(())
}

/// Loads the classifier cache, training and saving it first when absent.
/// Only a cache miss touches the dataset files.
fn scoring_context(settings: &Settings) -> CliResult<ClassifierContext> {
    if settings.classifier_cache.exists() {
        Ok(load_context(&settings.classifier_cache)?)
    } else {
        let dataset = load_mnist(&settings.data_dir)?;
        Ok(load_or_build_context(
            &settings.classifier_cache,
            &dataset,
            settings.seed,
        )?)
    }
}

fn push_quartiles(rows: &mut Vec<(String, f64)>, prefix: &str, q: &Quartiles) {
    rows.push((format!("{prefix}_min"), q.min));
    rows.push((format!("{prefix}_q1"), q.q1));
    rows.push((format!("{prefix}_median"), q.median));
    rows.push((format!("{prefix}_q3"), q.q3));
    rows.push((format!("{prefix}_max"), q.max));
    rows.push((format!("{prefix}_mean"), q.mean));
}
