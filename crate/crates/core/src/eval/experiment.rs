//! Experiment orchestration: corpus preparation, per-repetition pipeline
//! (fit pool, train agent, evaluate on the held-out split), aggregation
//! into a report.
//!
//! Repetitions, pool fitting, per-index embedding passes, and per-farm
//! evaluation are all pure maps with seeds derived up front, so they run
//! under the parallel feature without changing a single bit of output.

use crate::basemodels::{fit_base, BaseModelSpec, FittedBase, GraphContext, LossHistory, LossKind};
use crate::config::{CorpusConfig, MetricScale, RunConfig};
use crate::data::csvio::{self, GapPolicy};
use crate::data::{
    build_graph, gen_synthetic, normalize_minmax, sliding_windows, split_by_date, RegimeLabel,
    Scaler, TimeSeriesFrame, WindFarmGraph, WindowSample,
};
use crate::diffcore::{ParamSet, Tape, Vec1};
use crate::embedding::{build_state, EmbeddingNet};
use crate::error::{Error, Result};
use crate::eval::metrics::MetricResult;
use crate::eval::report::{
    ForecastReport, ImprovementRow, RegimeAttribution, SeedRows, RL_MODEL, UNIFORM_MODEL,
};
use crate::par;
use crate::rlens::{
    actor_forward, ensemble_predict, train as train_agent, AgentParams, AgentSpec, EnvStreams,
    FarmStream, TrainLogRow,
};
use crate::seed;

/// Corpus after loading, splitting, and train-fitted normalization; frames
/// ordered to match the graph's node order.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub graph: WindFarmGraph,
    pub train: Vec<TimeSeriesFrame>,
    pub test: Vec<TimeSeriesFrame>,
    pub scalers: Vec<Scaler>,
    pub labels: Option<Vec<RegimeLabel>>,
    /// Index of the first test element in the original timeline.
    pub test_offset: usize,
}

/// Everything one repetition trains; the unit the CLI checkpoints.
pub struct TrainedArtifacts {
    pub pool: Vec<FittedBase>,
    pub pool_labels: Vec<String>,
    pub embed_net: EmbeddingNet,
    pub embed_params: ParamSet,
    /// One shared agent, or one per farm in graph-node order.
    pub agents: Vec<AgentParams>,
    pub log: Vec<TrainLogRow>,
}

/// Frozen-evaluation product for one repetition.
pub struct EvalOutcome {
    pub rows: Vec<MetricResult>,
    pub attribution: Vec<RegimeAttribution>,
}

pub struct RunOutcome {
    pub report: ForecastReport,
}

/// Unique report labels for the pool members.
pub fn pool_labels(pool: &[BaseModelSpec]) -> Vec<String> {
    let mut counts = std::collections::BTreeMap::new();
    for spec in pool {
        *counts.entry(spec.kind_name()).or_insert(0usize) += 1;
    }
    let mut seen = std::collections::BTreeMap::new();
    pool.iter()
        .map(|spec| {
            let kind = spec.kind_name();
            if counts[kind] == 1 {
                kind.to_string()
            } else {
                let i = seen.entry(kind).or_insert(0usize);
                let label = format!("{kind}_{i}");
                *seen.get_mut(kind).unwrap() += 1;
                label
            }
        })
        .collect()
}

fn boundary_timestamp(cfg: &RunConfig, frame: &TimeSeriesFrame) -> Result<i64> {
    if let Some(date) = cfg.split.date.as_deref() {
        return csvio::parse_timestamp_str(date).ok_or_else(|| {
            Error::config("split.date", format!("unparseable timestamp `{date}`"))
        });
    }
    let fraction = cfg.split.fraction.expect("validated");
    let cut = ((frame.len() as f64) * fraction).floor() as usize;
    let cut = cut.clamp(1, frame.len() - 1);
    Ok(frame.timestamp(cut))
}

/// Load (or synthesize) the corpus, split, and normalize on the train fit.
pub fn prepare_experiment(cfg: &RunConfig, master_seed: u64) -> Result<PreparedExperiment> {
    cfg.validate()?;
    let (frames, farms, labels) = match &cfg.corpus {
        CorpusConfig::Csv {
            series_path,
            meta_path,
            schema,
            forward_fill,
            forward_fill_cap,
        } => {
            let meta = std::path::Path::new(meta_path);
            if !meta.exists() {
                return Err(Error::File {
                    path: meta.into(),
                    message: "metadata file not found".into(),
                });
            }
            let series = std::path::Path::new(series_path);
            if !series.exists() {
                return Err(Error::File {
                    path: series.into(),
                    message: "series file not found".into(),
                });
            }
            let policy = if *forward_fill {
                GapPolicy::ForwardFill {
                    max_steps: *forward_fill_cap,
                }
            } else {
                GapPolicy::Reject
            };
            let (frames, _gaps) = csvio::load_series_csv(series, schema, policy)?;
            let farms = csvio::load_farm_meta(meta)?;
            (frames, farms, None)
        }
        CorpusConfig::Synthetic { spec } => {
            let corpus = gen_synthetic(spec, seed::derive(master_seed, "corpus"))?;
            (corpus.frames, corpus.farms, Some(corpus.labels))
        }
    };

    let graph = build_graph(&farms, cfg.graph.k)?;
    // one frame per graph node, aligned timelines
    let mut ordered = Vec::with_capacity(graph.node_count());
    for v in 0..graph.node_count() {
        let id = &graph.node(v).farm_id;
        let frame = frames
            .iter()
            .find(|f| &f.farm_id == id)
            .ok_or_else(|| Error::invalid(format!("no series for farm `{id}`")))?
            .clone();
        ordered.push(frame);
    }
    let reference = &ordered[0];
    for f in &ordered[1..] {
        if f.start != reference.start || f.step != reference.step || f.len() != reference.len() {
            return Err(Error::MisalignedStream {
                farm_id: f.farm_id.clone(),
                index: 0,
                message: "farms must share the timeline".into(),
            });
        }
    }

    let boundary = boundary_timestamp(cfg, reference)?;
    let min_len = cfg.windowing.window + cfg.windowing.horizon + 1;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut scalers = Vec::new();
    for frame in &ordered {
        let (tr, te) = split_by_date(frame, boundary)?;
        for (name, part) in [("train", &tr), ("test", &te)] {
            if part.len() < min_len {
                return Err(Error::Config {
                    field: "split".into(),
                    message: format!(
                        "{name} split of `{}` has {} points, needs at least {min_len}",
                        frame.farm_id,
                        part.len()
                    ),
                });
            }
        }
        let (tr_norm, scaler) = normalize_minmax(&tr)?;
        let te_norm = crate::data::frames::apply_scaler(&te, &scaler);
        train.push(tr_norm);
        test.push(te_norm);
        scalers.push(scaler);
    }
    let test_offset = train[0].len();

    Ok(PreparedExperiment {
        graph,
        train,
        test,
        scalers,
        labels,
        test_offset,
    })
}

/// Per-farm aligned streams plus, per stream position, the original-timeline
/// index of the forecast target (for regime attribution).
pub struct StreamBundle {
    pub streams: EnvStreams,
    pub target_timeline: Vec<usize>,
}

fn loss_row(forecasts: &[f64], truth: f64, kind: LossKind) -> Vec<f64> {
    forecasts
        .iter()
        .map(|f| match kind {
            LossKind::Absolute => (f - truth).abs(),
            LossKind::Squared => (f - truth) * (f - truth),
        })
        .collect()
}

/// Build aligned states/forecasts/truths over one split. The state at a
/// position uses only loss rows from strictly earlier positions, so the
/// first windowed position is consumed as history and streams start one
/// position later.
pub fn build_streams(
    prepared: &PreparedExperiment,
    cfg: &RunConfig,
    pool: &[FittedBase],
    net: &EmbeddingNet,
    embed_params: &ParamSet,
    frames: &[TimeSeriesFrame],
    timeline_offset: usize,
) -> Result<StreamBundle> {
    let graph = &prepared.graph;
    let n_farms = graph.node_count();
    let w = cfg.windowing.window;
    let h = cfg.windowing.horizon;
    let mut samples: Vec<Vec<WindowSample>> = Vec::with_capacity(n_farms);
    for frame in frames {
        samples.push(sliding_windows(frame, w, h)?);
    }
    let m = samples[0].len();
    for (f, s) in samples.iter().enumerate() {
        if s.len() != m {
            return Err(Error::MisalignedStream {
                farm_id: graph.node(f).farm_id.clone(),
                index: s.len().min(m),
                message: "window counts differ across farms".into(),
            });
        }
    }
    if m < 2 {
        return Err(Error::FrameTooShort {
            farm_id: graph.node(0).farm_id.clone(),
            required: w + h + 1,
            got: frames[0].len(),
        });
    }

    // Stage A: per-index joint passes (pure, parallelizable).
    // Yields (stse per farm, forecasts per farm) for every index.
    struct IndexSlice {
        stse: Vec<Vec<f64>>,
        forecasts: Vec<Vec<f64>>,
    }
    let slices: Vec<Result<IndexSlice>> = par::map_indices(m, |j| {
        let windows: Vec<Vec<f64>> = (0..n_farms).map(|f| samples[f][j].window.clone()).collect();
        let mut tape = Tape::new();
        let stse_nodes = net.compute_stse(&mut tape, embed_params, graph, &windows)?;
        let stse: Vec<Vec<f64>> = stse_nodes
            .iter()
            .map(|&id| tape.value(id).to_vec())
            .collect();
        let mut forecasts = Vec::with_capacity(n_farms);
        for f in 0..n_farms {
            let ctx = GraphContext {
                graph,
                windows: &windows,
                target_node: f,
            };
            let mut row = Vec::with_capacity(pool.len());
            for model in pool {
                row.push(model.predict(&samples[f][j], Some(&ctx))?);
            }
            forecasts.push(row);
        }
        Ok(IndexSlice { stse, forecasts })
    });
    let mut index_slices = Vec::with_capacity(m);
    for s in slices {
        index_slices.push(s?);
    }

    // Stage B: sequential loss bookkeeping and state assembly.
    let mut histories: Vec<LossHistory> = (0..n_farms)
        .map(|_| {
            LossHistory::new(
                net.spec.loss_horizon,
                pool.len(),
                cfg.run.loss_kind,
            )
        })
        .collect::<Result<_>>()?;
    let mut farm_streams: Vec<FarmStream> = (0..n_farms)
        .map(|f| FarmStream {
            farm_id: graph.node(f).farm_id.clone(),
            states: Vec::with_capacity(m - 1),
            forecasts: Vec::with_capacity(m - 1),
            truths: Vec::with_capacity(m - 1),
        })
        .collect();
    let mut target_timeline = Vec::with_capacity(m - 1);

    for (j, slice) in index_slices.iter().enumerate() {
        if j > 0 {
            target_timeline.push(timeline_offset + samples[0][j].t_index + h);
            for f in 0..n_farms {
                let mut tape = Tape::new();
                let mle_node = net.compute_mle(&mut tape, embed_params, &histories[f])?;
                let mle = Vec1::new(tape.value(mle_node).to_vec())?;
                let stse = Vec1::new(slice.stse[f].clone())?;
                let state = build_state(
                    stse,
                    mle,
                    graph.node(f).farm_id.clone(),
                    samples[f][j].t_index,
                );
                farm_streams[f].states.push(state);
                farm_streams[f].forecasts.push(slice.forecasts[f].clone());
                farm_streams[f].truths.push(samples[f][j].target);
            }
        }
        for f in 0..n_farms {
            let row = loss_row(&slice.forecasts[f], samples[f][j].target, cfg.run.loss_kind);
            histories[f].push_row(row)?;
        }
    }

    Ok(StreamBundle {
        streams: EnvStreams {
            farms: farm_streams,
        },
        target_timeline,
    })
}

/// Fit the pool and train the agent(s) for one repetition.
pub fn train_artifacts(
    prepared: &PreparedExperiment,
    cfg: &RunConfig,
    rep_seed: u64,
) -> Result<TrainedArtifacts> {
    let net = EmbeddingNet::new(cfg.embedding.clone())?;
    if cfg.windowing.window < net.receptive_field() {
        return Err(Error::Config {
            field: "windowing.window".into(),
            message: format!(
                "window {} shorter than the encoder receptive field {}",
                cfg.windowing.window,
                net.receptive_field()
            ),
        });
    }

    // pooled training windows across farms
    let mut pooled: Vec<WindowSample> = Vec::new();
    for frame in &prepared.train {
        pooled.extend(sliding_windows(
            frame,
            cfg.windowing.window,
            cfg.windowing.horizon,
        )?);
    }

    let fitted: Vec<Result<FittedBase>> = par::map_indices(cfg.pool.len(), |i| {
        fit_base(
            &cfg.pool[i],
            &pooled,
            Some(&prepared.graph),
            seed::derive_indexed(rep_seed, "pool", i as u64),
        )
    });
    let mut pool = Vec::with_capacity(fitted.len());
    for f in fitted {
        pool.push(f?);
    }

    let mut embed_rng = seed::rng(seed::derive(rep_seed, "embedding"));
    let embed_params = net.init_params(&mut embed_rng)?;

    let bundle = build_streams(prepared, cfg, &pool, &net, &embed_params, &prepared.train, 0)?;
    let spec = AgentSpec::new(cfg.embedding.state_len(), pool.len(), cfg.agent.hidden)?;

    let (agents, log) = if cfg.agent.shared_agent {
        let outcome = train_agent(
            &bundle.streams,
            &spec,
            &cfg.agent,
            seed::derive(rep_seed, "agent"),
        )?;
        (vec![outcome.agent], outcome.log)
    } else {
        let mut agents = Vec::with_capacity(bundle.streams.farms.len());
        let mut log = Vec::new();
        for (f, farm) in bundle.streams.farms.iter().enumerate() {
            let single = EnvStreams {
                farms: vec![farm.clone()],
            };
            let outcome = train_agent(
                &single,
                &spec,
                &cfg.agent,
                seed::derive_indexed(rep_seed, "agent.farm", f as u64),
            )?;
            agents.push(outcome.agent);
            log.extend(outcome.log);
        }
        (agents, log)
    };

    Ok(TrainedArtifacts {
        pool,
        pool_labels: pool_labels(&cfg.pool),
        embed_net: net,
        embed_params,
        agents,
        log,
    })
}

/// Score every base model, the uniform average, and the agent-weighted
/// ensemble on the test split.
pub fn evaluate_artifacts(
    prepared: &PreparedExperiment,
    cfg: &RunConfig,
    artifacts: &TrainedArtifacts,
    rep_seed: u64,
) -> Result<EvalOutcome> {
    let bundle = build_streams(
        prepared,
        cfg,
        &artifacts.pool,
        &artifacts.embed_net,
        &artifacts.embed_params,
        &prepared.test,
        prepared.test_offset,
    )?;
    let spec = AgentSpec::new(
        cfg.embedding.state_len(),
        artifacts.pool.len(),
        cfg.agent.hidden,
    )?;
    let n_models = artifacts.pool.len();
    let n_farms = bundle.streams.farms.len();

    struct FarmEval {
        rows: Vec<MetricResult>,
        weights: Vec<Vec<f64>>,
        base_abs_err: Vec<Vec<f64>>, // [model][pos]
    }
    let farm_results: Vec<Result<FarmEval>> = par::map_indices(n_farms, |f| {
        let farm = &bundle.streams.farms[f];
        let agent = if cfg.agent.shared_agent {
            &artifacts.agents[0]
        } else {
            &artifacts.agents[f]
        };
        let positions = farm.states.len();
        let mut rl_pred = Vec::with_capacity(positions);
        let mut uniform_pred = Vec::with_capacity(positions);
        let mut base_pred: Vec<Vec<f64>> = vec![Vec::with_capacity(positions); n_models];
        let mut weights = Vec::with_capacity(positions);
        for p in 0..positions {
            let state = farm.states[p].full();
            let w = actor_forward(&spec, &agent.actor, &state, None)?;
            let forecasts = &farm.forecasts[p];
            rl_pred.push(ensemble_predict(forecasts, &w)?);
            uniform_pred.push(forecasts.iter().sum::<f64>() / n_models as f64);
            for (mi, &fv) in forecasts.iter().enumerate() {
                base_pred[mi].push(fv);
            }
            weights.push(w);
        }
        // de-normalize when raw-scale metrics are requested
        let scaler = prepared.scalers[f];
        let transform = |series: &[f64]| -> Vec<f64> {
            match cfg.run.metric_scale {
                MetricScale::Normalized => series.to_vec(),
                MetricScale::Raw => series.iter().map(|&v| scaler.invert(v)).collect(),
            }
        };
        let truth = transform(&farm.truths);
        let mut rows = Vec::with_capacity(n_models + 2);
        for (mi, label) in artifacts.pool_labels.iter().enumerate() {
            rows.push(MetricResult::compute(
                label,
                &farm.farm_id,
                &truth,
                &transform(&base_pred[mi]),
            )?);
        }
        rows.push(MetricResult::compute(
            UNIFORM_MODEL,
            &farm.farm_id,
            &truth,
            &transform(&uniform_pred),
        )?);
        rows.push(MetricResult::compute(
            RL_MODEL,
            &farm.farm_id,
            &truth,
            &transform(&rl_pred),
        )?);
        // normalized-scale absolute errors for regime attribution
        let base_abs_err: Vec<Vec<f64>> = base_pred
            .iter()
            .map(|preds| {
                preds
                    .iter()
                    .zip(&farm.truths)
                    .map(|(p, y)| (p - y).abs())
                    .collect()
            })
            .collect();
        Ok(FarmEval {
            rows,
            weights,
            base_abs_err,
        })
    });
    let mut evals = Vec::with_capacity(n_farms);
    for e in farm_results {
        evals.push(e?);
    }

    let mut rows = Vec::new();
    for e in &evals {
        rows.extend(e.rows.iter().cloned());
    }

    // regime attribution over labeled corpora
    let mut attribution = Vec::new();
    if let Some(labels) = &prepared.labels {
        let mut slots: Vec<usize> = bundle
            .target_timeline
            .iter()
            .map(|&t| labels[t].slot)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        slots.sort_unstable();
        for slot in slots {
            let positions: Vec<usize> = bundle
                .target_timeline
                .iter()
                .enumerate()
                .filter(|(_, &t)| labels[t].slot == slot)
                .map(|(p, _)| p)
                .collect();
            if positions.is_empty() {
                continue;
            }
            let regime_name = labels[bundle.target_timeline[positions[0]]].name.clone();
            let mut model_mean_weight = Vec::with_capacity(n_models);
            let mut model_mae = Vec::with_capacity(n_models);
            for (mi, label) in artifacts.pool_labels.iter().enumerate() {
                let mut wsum = 0.0;
                let mut esum = 0.0;
                let mut count = 0usize;
                for e in &evals {
                    for &p in &positions {
                        wsum += e.weights[p][mi];
                        esum += e.base_abs_err[mi][p];
                        count += 1;
                    }
                }
                model_mean_weight.push((label.clone(), wsum / count as f64));
                model_mae.push((label.clone(), esum / count as f64));
            }
            attribution.push(RegimeAttribution {
                seed: rep_seed,
                slot,
                regime_name,
                model_mean_weight,
                model_mae,
            });
        }
    }

    Ok(EvalOutcome { rows, attribution })
}

fn run_rep(prepared: &PreparedExperiment, cfg: &RunConfig, rep_seed: u64) -> Result<EvalOutcome> {
    let artifacts = train_artifacts(prepared, cfg, rep_seed)?;
    evaluate_artifacts(prepared, cfg, &artifacts, rep_seed)
}

fn mean_rows(per_seed: &[SeedRows]) -> Vec<MetricResult> {
    let mut out: Vec<MetricResult> = Vec::new();
    if per_seed.is_empty() {
        return out;
    }
    let template = &per_seed[0].rows;
    for (i, row) in template.iter().enumerate() {
        let mut mae_sum = 0.0;
        let mut rmse_sum = 0.0;
        for seed_rows in per_seed {
            mae_sum += seed_rows.rows[i].mae;
            rmse_sum += seed_rows.rows[i].rmse;
        }
        out.push(MetricResult {
            model: row.model.clone(),
            farm_id: row.farm_id.clone(),
            mae: mae_sum / per_seed.len() as f64,
            rmse: rmse_sum / per_seed.len() as f64,
            n: row.n,
        });
    }
    out
}

fn improvements(
    rows_mean: &[MetricResult],
    farms: &[String],
    base_labels: &[String],
) -> Vec<ImprovementRow> {
    let mut out = Vec::new();
    for farm in farms {
        for metric in ["mae", "rmse"] {
            let value = |model: &str| -> Option<f64> {
                rows_mean
                    .iter()
                    .find(|r| r.model == model && &r.farm_id == farm)
                    .map(|r| if metric == "mae" { r.mae } else { r.rmse })
            };
            let rl = match value(RL_MODEL) {
                Some(v) => v,
                None => continue,
            };
            let uniform = match value(UNIFORM_MODEL) {
                Some(v) => v,
                None => continue,
            };
            let best = base_labels
                .iter()
                .filter_map(|m| value(m).map(|v| (m.clone(), v)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let (best_model, best_value) = match best {
                Some(b) => b,
                None => continue,
            };
            let pct = |baseline: f64| {
                if baseline > 0.0 {
                    (baseline - rl) / baseline * 100.0
                } else {
                    0.0
                }
            };
            out.push(ImprovementRow {
                farm_id: farm.clone(),
                metric: metric.into(),
                rl_value: rl,
                uniform_value: uniform,
                best_base_model: best_model,
                best_base_value: best_value,
                vs_uniform_pct: pct(uniform),
                vs_best_base_pct: pct(best_value),
            });
        }
    }
    out
}

/// Run the full comparison: R seeded repetitions of (fit pool, train agent,
/// evaluate), averaged into one report.
pub fn run_experiment(cfg: &RunConfig, master_seed: u64) -> Result<RunOutcome> {
    let prepared = prepare_experiment(cfg, master_seed)?;
    let reps = cfg.run.repetitions;
    let rep_seeds: Vec<u64> = (0..reps)
        .map(|r| seed::derive_indexed(master_seed, "rep", r as u64))
        .collect();
    let outcomes: Vec<Result<EvalOutcome>> =
        par::map_indices(reps, |r| run_rep(&prepared, cfg, rep_seeds[r]));

    let mut per_seed = Vec::with_capacity(reps);
    let mut attribution = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome?;
        per_seed.push(SeedRows {
            seed: rep_seeds[r],
            rows: outcome.rows,
        });
        attribution.extend(outcome.attribution);
    }
    let rows_mean = mean_rows(&per_seed);
    let farms: Vec<String> = (0..prepared.graph.node_count())
        .map(|v| prepared.graph.node(v).farm_id.clone())
        .collect();
    let base_labels = pool_labels(&cfg.pool);
    let mut models = base_labels.clone();
    models.push(UNIFORM_MODEL.into());
    models.push(RL_MODEL.into());

    let improvements = improvements(&rows_mean, &farms, &base_labels);
    let report = ForecastReport {
        fingerprint: cfg.fingerprint(),
        master_seed,
        metric_scale: match cfg.run.metric_scale {
            MetricScale::Normalized => "normalized".into(),
            MetricScale::Raw => "raw".into(),
        },
        repetitions: reps,
        models,
        farms,
        rows_mean,
        per_seed,
        improvements,
        attribution,
    };
    Ok(RunOutcome { report })
}
