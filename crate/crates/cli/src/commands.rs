use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use shapprune::attribution::{attribute, shapley_attribution, AttributionOptions, Metric, RankMode, ShapleyMode};
use shapprune::experiments::toy::{build_max_network, sample_uniform_dataset, MaxVariant};
use shapprune::experiments::{
    auc, build_architecture, finetune_comparison, layerwise_robustness, random_init_pruning, sv_distribution,
    Architecture, FinetuneComparison, RandomInitConfig,
};
use shapprune::io::report::{
    attribution_report, distribution_report, finetune_report, prunelog_report, randinit_report, robustness_report,
};
use shapprune::io::{
    format_float, load_model, load_split, robustness_svg, save_model, write_csv, write_svg, Report, Split,
};
use shapprune::nn::{sgd_train_in_place, Model, SgdConfig, SgdState};
use shapprune::pruning::{prune_pipeline, FineTune, PruneConfig};
use shapprune::rng::sub_seed;
use shapprune::shapley::{axiom_residuals, AxiomChecks};
use shapprune::{Dataset, Error, Result};

use crate::{Command, Opts, Variant};

/// The one-line `key=value` report printed on success.
pub struct Summary(Vec<(&'static str, String)>);

impl Summary {
    fn new(command: &str) -> Self {
        Summary(vec![("command", command.to_string())])
    }

    fn with(mut self, key: &'static str, value: impl fmt::Display) -> Self {
        self.0.push((key, value.to_string()));
        self
    }

    fn float(self, key: &'static str, value: f64) -> Self {
        self.with(key, format_float(value))
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

pub fn run(command: Command, opts: &Opts) -> Result<Summary> {
    match command {
        Command::Train => train(opts),
        Command::Attribute => attribute_cmd(opts),
        Command::Prune => prune(opts),
        Command::Robustness => robustness(opts),
        Command::Toy => toy(opts),
        Command::Randinit => randinit(opts),
        Command::FinetuneCompare => finetune_compare(opts),
        Command::SvDist => sv_dist(opts),
    }
}

fn out_file(opts: &Opts, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&opts.out).map_err(|source| Error::Io { path: opts.out.clone(), source })?;
    Ok(opts.out.join(name))
}

fn data_dir(opts: &Opts) -> Result<&Path> {
    opts.data.as_deref().ok_or_else(|| Error::Config("--data DIR is required for this command".into()))
}

fn model(opts: &Opts) -> Result<Model> {
    let path =
        opts.model.as_deref().ok_or_else(|| Error::Config("--model PATH is required for this command".into()))?;
    load_model(path)
}

fn metrics(opts: &Opts, default: &[Metric]) -> Result<Vec<Metric>> {
    match opts.metric.as_deref() {
        None => Ok(default.to_vec()),
        Some("all") => Ok(Metric::ALL.to_vec()),
        Some(list) => list.split(',').map(|m| m.trim().parse()).collect(),
    }
}

fn single_metric(opts: &Opts) -> Result<Metric> {
    match metrics(opts, &[Metric::Shapley])?.as_slice() {
        [m] => Ok(*m),
        _ => Err(Error::Config("this command takes exactly one --metric".into())),
    }
}

fn shapley_mode(opts: &Opts) -> ShapleyMode {
    if opts.exact {
        ShapleyMode::Exact
    } else {
        ShapleyMode::Sampled { permutations: opts.samples, seed: opts.seed }
    }
}

fn attribution_options(opts: &Opts) -> AttributionOptions {
    AttributionOptions { shapley: shapley_mode(opts), seed: opts.seed }
}

/// Training split and the seeded attribution subset drawn from it.
fn attribution_data(opts: &Opts) -> Result<(Dataset, Dataset)> {
    let train = load_split(data_dir(opts)?, Split::Train)?;
    let attr = train.sample(opts.attrib_samples, sub_seed(opts.seed, "attribution-data"))?;
    Ok((train, attr))
}

fn eval_data(opts: &Opts) -> Result<Dataset> {
    load_split(data_dir(opts)?, Split::Test)?.take(opts.eval_samples)
}

/// Fine-tuning set and a disjoint validation set of 1000 samples.
fn fine_tune_data(opts: &Opts, train: &Dataset) -> Result<(Dataset, Dataset)> {
    let pool = train.sample(opts.train_samples + 1000, sub_seed(opts.seed, "fine-tune-data"))?;
    let n = pool.len().saturating_sub(1000).max(1);
    pool.split_at(n)
}

fn sites(opts: &Opts, model: &Model) -> Result<Vec<usize>> {
    match opts.site {
        Some(s) => model.site(s).map(|_| vec![s]),
        None => Ok((0..model.sites().len()).collect()),
    }
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn train(opts: &Opts) -> Result<Summary> {
    let arch: Architecture = opts.arch.parse()?;
    let dir = data_dir(opts)?;
    let train = load_split(dir, Split::Train)?.sample(opts.train_samples, sub_seed(opts.seed, "train-data"))?;
    let test = eval_data(opts)?;
    let input = train.inputs().shape()[1..].to_vec();
    let mut model = build_architecture(arch, &input, 10, sub_seed(opts.seed, "init"))?;
    let mut state = SgdState::new(&model);
    let mut report = Report::new(&["epoch", "train_loss", "test_loss", "test_acc"]);
    let mut last = model.evaluate(&test)?;
    for epoch in 0..opts.epochs {
        let cfg = SgdConfig {
            lr: opts.lr,
            momentum: 0.9,
            epochs: 1,
            seed: sub_seed(opts.seed, &format!("train/epoch-{epoch}")),
            ..SgdConfig::default()
        };
        let history = sgd_train_in_place(&mut model, &train, &cfg, &mut state)?;
        last = model.evaluate(&test)?;
        report.push(vec![
            (epoch + 1).to_string(),
            format_float(history[0]),
            format_float(last.loss),
            opt_float(last.accuracy),
        ]);
    }
    let path = out_file(opts, "model.atpr")?;
    save_model(&model, &path)?;
    write_csv(&report, out_file(opts, "train.csv")?)?;
    Ok(Summary::new("train")
        .with("arch", &opts.arch)
        .with("epochs", opts.epochs)
        .float("test_loss", last.loss)
        .with("test_accuracy", opt_float(last.accuracy))
        .with("model", path.display()))
}

fn attribute_cmd(opts: &Opts) -> Result<Summary> {
    let metrics = metrics(opts, &[Metric::Shapley])?;
    let model = model(opts)?;
    let (_, data) = attribution_data(opts)?;
    let options = attribution_options(opts);
    let sites = sites(opts, &model)?;
    let mut results = Vec::new();
    for &site in &sites {
        for &metric in &metrics {
            results.push(attribute(&model, site, &data, metric, &options)?);
        }
    }
    let report = attribution_report(&results)?;
    write_csv(&report, out_file(opts, "attribution.csv")?)?;
    Ok(Summary::new("attribute")
        .with("metrics", metrics.iter().map(|m| m.name()).collect::<Vec<_>>().join(","))
        .with("sites", sites.len())
        .with("samples", data.len())
        .with("rows", report.rows.len()))
}

fn prune(opts: &Opts) -> Result<Summary> {
    let metric = single_metric(opts)?;
    let ranking: RankMode = opts.ranking.parse()?;
    let model = model(opts)?;
    let (train, attr) = attribution_data(opts)?;
    let eval = eval_data(opts)?;
    let config = PruneConfig::outermost_first(&model, metric, ranking, opts.ratio, attribution_options(opts));
    let tuning = if opts.fine_tune_epochs > 0 { Some(fine_tune_data(opts, &train)?) } else { None };
    let fine = tuning.as_ref().map(|(ft, val)| FineTune {
        train: ft,
        validation: Some(val),
        sgd: SgdConfig { lr: opts.lr, epochs: opts.fine_tune_epochs, seed: opts.seed, ..SgdConfig::default() },
    });
    let (pruned, log) = prune_pipeline(&model, &attr, &eval, &config, fine.as_ref())?;
    write_csv(&prunelog_report(&log), out_file(opts, "prunelog.csv")?)?;
    save_model(&pruned, out_file(opts, "pruned.atpr")?)?;
    let first = log.steps.first().map(|s| s.before);
    let last = log.steps.last().map(|s| s.fine_tuned.unwrap_or(s.after));
    Ok(Summary::new("prune")
        .with("metric", metric)
        .with("ranking", ranking.name())
        .with("ratio", format_float(opts.ratio))
        .with("steps", log.steps.len())
        .with("params_before", model.parameter_count())
        .with("params_after", pruned.parameter_count())
        .with("acc_before", opt_float(first.and_then(|e| e.accuracy)))
        .with("acc_after", opt_float(last.and_then(|e| e.accuracy))))
}

fn robustness(opts: &Opts) -> Result<Summary> {
    let metrics = metrics(opts, &Metric::ALL)?;
    let requested: RankMode = opts.ranking.parse()?;
    let model = model(opts)?;
    let (_, attr) = attribution_data(opts)?;
    let eval = eval_data(opts)?;
    let options = attribution_options(opts);
    let baseline = model.evaluate(&eval)?.loss;
    let sites = sites(opts, &model)?;
    let mut curves = Vec::new();
    let mut areas = Report::new(&["metric", "ranking", "units", "auc"]);
    let mut summary = Summary::new("robustness");
    for &metric in &metrics {
        let ranking = if metric.is_data_free() { RankMode::Mean } else { requested };
        let per_metric = sites
            .iter()
            .map(|&s| layerwise_robustness(&model, &eval, &attr, metric, ranking, s, &options))
            .collect::<Result<Vec<_>>>()?;
        let area = auc(&per_metric, baseline)?;
        areas.push(vec![
            metric.to_string(),
            ranking.name().to_string(),
            area.units.to_string(),
            format_float(area.total),
        ]);
        summary = summary.float(metric.name(), area.total);
        curves.extend(per_metric);
    }
    write_csv(&robustness_report(&curves), out_file(opts, "robustness.csv")?)?;
    write_csv(&areas, out_file(opts, "auc.csv")?)?;
    write_svg(&robustness_svg("loss as units are removed", &curves), out_file(opts, "robustness.svg")?)?;
    Ok(summary.float("baseline_loss", baseline))
}

fn toy(opts: &Opts) -> Result<Summary> {
    let variant = match opts.variant {
        Variant::Exact => MaxVariant::Exact,
        Variant::Biased => MaxVariant::Biased,
    };
    let model = build_max_network(variant);
    let data = sample_uniform_dataset(opts.attrib_samples, sub_seed(opts.seed, "toy-data"))?;
    let sv = shapley_attribution(&model, 0, &data, shapley_mode(opts))?;
    let game = shapprune::attribution::PruningGame::new(&model, 0, &data)?;
    let checks = AxiomChecks {
        symmetric_pairs: vec![(0, 1)],
        null_players: if variant == MaxVariant::Exact { vec![3] } else { Vec::new() },
        linearity: None,
    };
    let matrix = sv.per_sample.as_ref().expect("Shapley values are per sample");
    let axioms = axiom_residuals(&game, matrix, &checks)?;

    let options = attribution_options(opts);
    let mut results = vec![sv.clone()];
    for metric in [Metric::Lrp, Metric::Apoz, Metric::WeightNorm, Metric::Sensitivity, Metric::Taylor] {
        results.push(attribute(&model, 0, &data, metric, &options)?);
    }
    write_csv(&attribution_report(&results)?, out_file(opts, "toy.csv")?)?;

    let join = |v: &[f64]| v.iter().map(|&x| format_float(x)).collect::<Vec<_>>().join(",");
    let mut summary = Summary::new("toy")
        .with("variant", format!("{:?}", opts.variant).to_lowercase())
        .with("mode", if opts.exact { "exact" } else { "sampled" })
        .with("samples", data.len())
        .with("sv", join(&sv.mean))
        .with("lrp", join(&results[1].mean))
        .float("efficiency_gap", axioms.efficiency_gap);
    for ((i, j), gap) in &axioms.symmetry_gaps {
        summary = summary.with("symmetry_gap", format!("{i}:{j}:{}", format_float(*gap)));
    }
    for (i, gap) in &axioms.null_player_gaps {
        summary = summary.with("null_player_gap", format!("{i}:{}", format_float(*gap)));
    }
    Ok(summary)
}

fn randinit(opts: &Opts) -> Result<Summary> {
    let dir = data_dir(opts)?;
    let train = load_split(dir, Split::Train)?;
    let test = eval_data(opts)?;
    let config = RandomInitConfig {
        hidden: vec![opts.hidden; 2],
        permutations: opts.samples,
        samples: opts.attrib_samples,
        seeds: (0..opts.runs as u64).map(|i| opts.seed + i).collect(),
        ..RandomInitConfig::default()
    };
    let runs = random_init_pruning(&train, &test, &config)?;
    write_csv(&randinit_report(&runs), out_file(opts, "randinit.csv")?)?;
    let best = runs.iter().map(|r| r.accuracy_after).fold(f64::NEG_INFINITY, f64::max);
    let mean =
        |f: fn(&shapprune::experiments::RandomInitRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    Ok(Summary::new("randinit")
        .with("runs", runs.len())
        .float("mean_acc_before", mean(|r| r.accuracy_before))
        .float("mean_acc_after", mean(|r| r.accuracy_after))
        .float("best_acc_after", best))
}

fn finetune_compare(opts: &Opts) -> Result<Summary> {
    let metrics = metrics(
        opts,
        &[Metric::WeightNorm, Metric::Apoz, Metric::Sensitivity, Metric::Taylor, Metric::Shapley, Metric::Random],
    )?;
    let ranking: RankMode = opts.ranking.parse()?;
    let model = model(opts)?;
    let (train, attr) = attribution_data(opts)?;
    let eval = eval_data(opts)?;
    let (ft, val) = fine_tune_data(opts, &train)?;
    let cmp = FinetuneComparison {
        attribution: &attr,
        eval: &eval,
        fine_tune: FineTune {
            train: &ft,
            validation: Some(&val),
            sgd: SgdConfig { lr: opts.lr, epochs: opts.fine_tune_epochs, ..SgdConfig::default() },
        },
        metrics,
        ranking,
        ratio: opts.ratio,
        permutations: opts.samples,
        seeds: (0..opts.runs as u64).map(|i| opts.seed + i).collect(),
    };
    let rows = finetune_comparison(&model, &cmp)?;
    write_csv(&finetune_report(&rows), out_file(opts, "finetune.csv")?)?;
    let last_step = rows.iter().map(|r| r.step).max().unwrap_or(0);
    let finals: Vec<_> = rows.iter().filter(|r| r.step == last_step).collect();
    let improved = finals.iter().filter(|r| r.accuracy_finetuned >= r.accuracy_pruned).count();
    Ok(Summary::new("finetune-compare")
        .with("cells", finals.len())
        .with("not_worse", improved)
        .with("rows", rows.len()))
}

fn sv_dist(opts: &Opts) -> Result<Summary> {
    let model = model(opts)?;
    let site = opts.site.unwrap_or(0);
    let (_, attr) = attribution_data(opts)?;
    let dist = sv_distribution(&model, site, &attr, opts.samples, opts.seed)?;
    write_csv(&distribution_report(site, &dist), out_file(opts, "sv_dist.csv")?)?;
    let negative = dist.iter().filter(|d| d.mean < 0.0).count();
    let max_std = dist.iter().map(|d| d.std).fold(0.0, f64::max);
    Ok(Summary::new("sv-dist")
        .with("site", site)
        .with("units", dist.len())
        .with("negative_mean", negative)
        .float("max_std", max_std))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_is_space_separated_pairs() {
        let s = Summary::new("toy").with("samples", 3).float("gap", 0.1);
        assert_eq!(s.to_string(), "command=toy samples=3 gap=0.1");
    }
}
