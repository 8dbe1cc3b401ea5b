//! Staged, cached execution of the detector.
//!
//! Each stage writes its artifacts into a run directory and records their
//! digests, the digests of everything it read and a hash of the settings it
//! depends on in `manifest.json`. A stage is reused when all three still
//! match; otherwise it is rebuilt, or refused when it is only a dependency
//! and dependency building is off.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{cluster_motifs, ClusteringParams, EventCatalog};
use crate::config::{sha256_hex, PipelineConfig, ThresholdRule};
use crate::dtw::{similarity_tensor, DtwParams};
use crate::error::{Error, Result};
use crate::eval::{best_f1, evaluate, EvalReport};
use crate::model::{
    fresh_state, replay, train, Checkpoint, ModelParams, SeriesForecast, TrainConfig,
};
use crate::motif::discover_motifs;
use crate::plot::{event_bars_svg, score_trace_svg, BarGroup};
use crate::scoring::{fit_change_surprisal, score_windows, ScoreInputs, ScoreSeries};
use crate::series::{
    labels_to_csv, load_csv, load_labels, write_csv, CsvSchema, LabelSeries, MinMaxScaler,
    MultivariateSeries,
};
use crate::spot::SpotThreshold;
use crate::stream::{
    assemble_stream, best_match_edges, match_distances, residual_edges, BipartiteEdgeStream,
    EdgeKind,
};
use crate::synth::SynthDataset;

pub const MANIFEST: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Events,
    Graph,
    Train,
    Score,
    Eval,
    Plot,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Events,
        Stage::Graph,
        Stage::Train,
        Stage::Score,
        Stage::Eval,
        Stage::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Events => "events",
            Stage::Graph => "graph",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Eval => "eval",
            Stage::Plot => "plot",
        }
    }

    /// Direct upstream stages under `cfg`.
    pub fn deps(self, cfg: &PipelineConfig) -> Vec<Stage> {
        match self {
            Stage::Events => vec![],
            Stage::Graph => vec![Stage::Events],
            Stage::Train => vec![Stage::Graph],
            Stage::Score if cfg.score.surprisal_only => vec![Stage::Graph],
            Stage::Score => vec![Stage::Train],
            Stage::Eval => vec![Stage::Score],
            Stage::Plot if cfg.data.labels.is_some() => vec![Stage::Eval],
            Stage::Plot => vec![Stage::Score],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// Input name (data file or upstream artifact) to digest at build time.
    pub inputs: BTreeMap<String, String>,
    /// Artifact path relative to the run directory, to digest.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Cached,
    Built,
}

/// Test-window scores as stored by the score stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredScores {
    pub len: usize,
    pub ids: Vec<String>,
    pub scores: ScoreSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReport {
    pub rule: ThresholdRule,
    pub report: EvalReport,
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub struct Pipeline {
    cfg: PipelineConfig,
    dir: PathBuf,
    build_deps: bool,
    manifest: RunManifest,
    data: Option<(MultivariateSeries, MultivariateSeries)>,
}

impl Pipeline {
    /// Opens (or creates) a run directory for `cfg`.
    pub fn open(cfg: PipelineConfig, dir: impl Into<PathBuf>, build_deps: bool) -> Result<Self> {
        cfg.validate()?;
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(MANIFEST);
        let mut manifest = if path.exists() {
            let m: RunManifest = serde_json::from_str(&read_string(&path)?)?;
            if m.version != MANIFEST_VERSION {
                return Err(Error::Format(format!(
                    "manifest version {} is not supported",
                    m.version
                )));
            }
            m
        } else {
            RunManifest {
                version: MANIFEST_VERSION,
                config_hash: String::new(),
                stages: BTreeMap::new(),
            }
        };
        manifest.config_hash = cfg.hash();
        write(&dir.join("config.toml"), cfg.to_toml()?)?;
        Ok(Self {
            cfg,
            dir,
            build_deps,
            manifest,
            data: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Runs `stage`, reusing fresh upstream results. Returns the status of
    /// every stage touched, upstream first.
    pub fn run(&mut self, stage: Stage) -> Result<Vec<(Stage, StageStatus)>> {
        let mut log = Vec::new();
        self.ensure(stage, true, &mut log)?;
        Ok(log)
    }

    fn ensure(
        &mut self,
        stage: Stage,
        requested: bool,
        log: &mut Vec<(Stage, StageStatus)>,
    ) -> Result<()> {
        if log.iter().any(|(s, _)| *s == stage) {
            return Ok(());
        }
        for dep in stage.deps(&self.cfg) {
            self.ensure(dep, false, log)?;
        }
        let status = match self.freshness(stage)? {
            Ok(()) => StageStatus::Cached,
            Err(problem) if requested || self.build_deps => {
                log::info!("building {stage}: {problem}");
                self.build(stage)?;
                StageStatus::Built
            }
            Err(problem) => return Err(problem),
        };
        log.push((stage, status));
        Ok(())
    }

    /// `Ok(Ok(()))` when the recorded result is reusable, `Ok(Err(why))` when not.
    fn freshness(&self, stage: Stage) -> Result<std::result::Result<(), Error>> {
        let name = stage.name().to_string();
        let missing = |detail: String| Error::MissingStage {
            stage: name.clone(),
            detail,
        };
        let stale = |detail: String| Error::StaleStage {
            stage: name.clone(),
            detail,
        };
        let Some(rec) = self.manifest.stages.get(stage.name()) else {
            return Ok(Err(missing(format!(
                "no record in {}",
                self.dir.join(MANIFEST).display()
            ))));
        };
        for (rel, digest) in &rec.artifacts {
            let path = self.dir.join(rel);
            if !path.exists() {
                return Ok(Err(missing(format!("{} does not exist", path.display()))));
            }
            if file_digest(&path)? != *digest {
                return Ok(Err(stale(format!("{rel} was modified"))));
            }
        }
        if rec.config_hash != self.cfg.stage_hash(stage.name()) {
            return Ok(Err(stale("settings changed".into())));
        }
        let current = self.inputs(stage)?;
        if rec.inputs != current {
            let changed: Vec<&String> = current
                .keys()
                .chain(rec.inputs.keys())
                .filter(|k| current.get(*k) != rec.inputs.get(*k))
                .collect();
            return Ok(Err(stale(format!("inputs changed: {changed:?}"))));
        }
        Ok(Ok(()))
    }

    fn data_files(&self, stage: Stage) -> Vec<(&'static str, &Path)> {
        let d = &self.cfg.data;
        let mut out = Vec::new();
        match stage {
            Stage::Events => out.push(("data:train", d.train.as_path())),
            Stage::Graph | Stage::Score => {
                out.push(("data:train", d.train.as_path()));
                out.push(("data:test", d.test.as_path()));
            }
            Stage::Eval | Stage::Plot => {
                if let Some(l) = &d.labels {
                    out.push(("data:labels", l.as_path()));
                }
            }
            Stage::Train => {}
        }
        out
    }

    /// Digests of everything `stage` reads right now.
    fn inputs(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (key, path) in self.data_files(stage) {
            let digest = if path.exists() {
                file_digest(path)?
            } else {
                "absent".to_string()
            };
            out.insert(key.to_string(), digest);
        }
        for dep in stage.deps(&self.cfg) {
            if let Some(rec) = self.manifest.stages.get(dep.name()) {
                for (rel, digest) in &rec.artifacts {
                    out.insert(format!("{dep}:{rel}"), digest.clone());
                }
            }
        }
        Ok(out)
    }

    fn build(&mut self, stage: Stage) -> Result<()> {
        let artifacts = match stage {
            Stage::Events => self.build_events()?,
            Stage::Graph => self.build_graph()?,
            Stage::Train => self.build_train()?,
            Stage::Score => self.build_score()?,
            Stage::Eval => self.build_eval()?,
            Stage::Plot => self.build_plot()?,
        };
        let mut digests = BTreeMap::new();
        for rel in artifacts {
            digests.insert(rel.to_string(), file_digest(&self.dir.join(rel))?);
        }
        let record = StageRecord {
            config_hash: self.cfg.stage_hash(stage.name()),
            inputs: self.inputs(stage)?,
            artifacts: digests,
        };
        self.manifest
            .stages
            .insert(stage.name().to_string(), record);
        self.save_manifest()
    }

    fn save_manifest(&self) -> Result<()> {
        write(
            &self.dir.join(MANIFEST),
            serde_json::to_string_pretty(&self.manifest)?,
        )
    }

    fn series(&mut self) -> Result<&(MultivariateSeries, MultivariateSeries)> {
        if self.data.is_none() {
            let d = &self.cfg.data;
            let schema = CsvSchema {
                header: d.header,
                forward_fill: d.forward_fill,
            };
            let mut train = load_csv(&d.train, schema)?;
            let mut test = load_csv(&d.test, schema)?;
            if train.dims() != test.dims() {
                return Err(Error::Shape(format!(
                    "train has {} series, test has {}",
                    train.dims(),
                    test.dims()
                )));
            }
            if d.min_max_scale {
                let scaler = MinMaxScaler::fit(&train);
                train = scaler.transform(&train)?;
                test = scaler.transform(&test)?;
            }
            self.data = Some((train, test));
        }
        Ok(self.data.as_ref().expect("loaded above"))
    }

    fn match_params(&self) -> DtwParams {
        let mut p = DtwParams::for_matching(self.cfg.window.length);
        if let Some(r) = self.cfg.events.match_band {
            p.band_radius = Some(r);
        }
        p
    }

    fn catalog(&self) -> Result<EventCatalog> {
        EventCatalog::load(self.artifact("catalog.json"))
    }

    fn stream(&self, name: &str, catalog: &EventCatalog) -> Result<BipartiteEdgeStream> {
        BipartiteEdgeStream::load(self.artifact(name), catalog.n_series, catalog.n_events())
    }

    fn build_events(&mut self) -> Result<Vec<&'static str>> {
        let window_len = self.cfg.window.length;
        let k = self.cfg.events.motifs_per_series;
        let params = ClusteringParams {
            min_cluster_size: self.cfg.events.min_cluster_size,
            dtw: DtwParams::for_clustering(),
        };
        let (train, _) = self.series()?;
        let motifs = discover_motifs(train, window_len, k)?;
        let catalog = cluster_motifs(&motifs, &params)?;
        log::info!(
            "{} motifs clustered into {} events{}",
            motifs.len(),
            catalog.n_events(),
            self.cfg
                .events
                .event_target
                .map_or(String::new(), |t| format!(" (expected about {t})"))
        );
        write(
            &self.artifact("motifs.json"),
            serde_json::to_string(&motifs)?,
        )?;
        catalog.save(self.artifact("catalog.json"))?;
        Ok(vec!["catalog.json", "motifs.json"])
    }

    fn build_graph(&mut self) -> Result<Vec<&'static str>> {
        let catalog = self.catalog()?;
        let spec = self.cfg.window;
        let dtw = self.match_params();
        let (q, adapt) = (self.cfg.spot.q, self.cfg.spot.adapt);
        let patterns = catalog.patterns();
        let (train, test) = self.series()?;
        if train.dims() != catalog.n_series {
            return Err(Error::Shape(format!(
                "catalog built for {} series, data has {}",
                catalog.n_series,
                train.dims()
            )));
        }
        let t_train = similarity_tensor(train, &patterns, spec, &dtw)?;
        let t_test = similarity_tensor(test, &patterns, spec, &dtw)?;

        let m_train = best_match_edges(&t_train, &catalog)?;
        let dists = match_distances(&t_train, &catalog, &m_train);
        let thresholds = (0..catalog.n_series)
            .map(|m| {
                let xs: Vec<f64> = m_train
                    .iter()
                    .zip(&dists)
                    .filter(|(e, _)| e.m == m)
                    .map(|(_, d)| *d)
                    .collect();
                SpotThreshold::fit(&xs, q)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut frozen = thresholds.clone();
        let r_train = residual_edges(&t_train, &catalog, &m_train, &mut frozen, false)?;
        let s_train = assemble_stream(catalog.n_series, catalog.n_events(), m_train, r_train)?;

        let m_test = best_match_edges(&t_test, &catalog)?;
        let mut live = thresholds.clone();
        let r_test = residual_edges(&t_test, &catalog, &m_test, &mut live, adapt)?;
        let s_test = assemble_stream(catalog.n_series, catalog.n_events(), m_test, r_test)?;

        t_train.save(self.artifact("tensor_train.bin"))?;
        t_test.save(self.artifact("tensor_test.bin"))?;
        s_train.save(self.artifact("stream_train.csv"))?;
        s_test.save(self.artifact("stream_test.csv"))?;
        write(
            &self.artifact("thresholds.json"),
            serde_json::to_string_pretty(&thresholds)?,
        )?;
        Ok(vec![
            "tensor_train.bin",
            "tensor_test.bin",
            "stream_train.csv",
            "stream_test.csv",
            "thresholds.json",
        ])
    }

    fn build_train(&mut self) -> Result<Vec<&'static str>> {
        let catalog = self.catalog()?;
        let stream = self.stream("stream_train.csv", &catalog)?;
        let params = ModelParams::new(
            self.cfg.model.clone(),
            catalog.n_series,
            catalog.n_events(),
            self.cfg.seed,
        )?;
        let tc = TrainConfig {
            epochs: self.cfg.train.epochs,
            lr: self.cfg.train.lr,
            seed: self.cfg.seed,
        };
        let model = train(&stream, params, &tc)?;
        if let Some(last) = model.history.last() {
            log::info!("final epoch mean loss {:.4}", last.mean_loss);
        }
        Checkpoint::new(model, stream.n_windows, self.cfg.stage_hash("train"))
            .save(self.artifact("checkpoint.json"))?;
        Ok(vec!["checkpoint.json"])
    }

    fn build_score(&mut self) -> Result<Vec<&'static str>> {
        let catalog = self.catalog()?;
        let s_train = self.stream("stream_train.csv", &catalog)?;
        let s_test = self.stream("stream_test.csv", &catalog)?;
        let score_cfg = self.cfg.score.clone();
        let mode = score_cfg.mode();
        let spec = self.cfg.window;
        let dtw = self.match_params();
        let checkpoint = if score_cfg.surprisal_only {
            None
        } else {
            Some(Checkpoint::load(self.artifact("checkpoint.json"))?)
        };
        let (train, test) = self.series()?;
        let surprisal = fit_change_surprisal(train, spec)?;

        let (f_train, f_test) = match &checkpoint {
            Some(ck) => {
                let mut state = ck.state.clone();
                let f_test = replay(&ck.params, &mut state, &s_test, ck.train_windows as f64)?;
                let f_train = if score_cfg.threshold == ThresholdRule::Spot {
                    let mut fresh = fresh_state(&ck.params);
                    replay(&ck.params, &mut fresh, &s_train, 0.0)?
                } else {
                    Vec::new()
                };
                (f_train, f_test)
            }
            None => (Vec::new(), Vec::new()),
        };
        let inputs = ScoreInputs {
            series: test,
            spec,
            stream: &s_test,
            forecasts: &f_test,
            catalog: &catalog,
            surprisal: &surprisal,
            dtw,
        };
        let scores = score_windows(&inputs, mode, score_cfg.aggregation)?;
        let stored = StoredScores {
            len: test.len(),
            ids: test.ids().to_vec(),
            scores,
        };
        let mut out = vec!["scores.json", "scores.csv", "forecasts.csv"];
        if score_cfg.threshold == ThresholdRule::Spot {
            let inputs = ScoreInputs {
                series: train,
                stream: &s_train,
                forecasts: &f_train,
                ..inputs
            };
            let train_scores = score_windows(&inputs, mode, score_cfg.aggregation)?;
            write(
                &self.artifact("scores_train.json"),
                serde_json::to_string(&train_scores)?,
            )?;
            out.push("scores_train.json");
        }
        write(
            &self.artifact("scores.csv"),
            stored.scores.to_csv(stored.len, &stored.ids),
        )?;
        write(
            &self.artifact("scores.json"),
            serde_json::to_string(&stored)?,
        )?;
        write(
            &self.artifact("forecasts.csv"),
            forecasts_csv(&f_test, &catalog),
        )?;
        Ok(out)
    }

    fn labels(&self, len: usize) -> Result<LabelSeries> {
        let path = self
            .cfg
            .data
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidParam("evaluation needs data.labels".into()))?;
        load_labels(path, self.cfg.data.label_format, len)
    }

    fn build_eval(&mut self) -> Result<Vec<&'static str>> {
        let stored = self.scores()?;
        let steps = stored.scores.step_scores(stored.len);
        let labels = self.labels(stored.len)?;
        let report = match self.cfg.score.threshold {
            ThresholdRule::BestF1 => best_f1(&steps, &labels)?,
            ThresholdRule::Spot => {
                let train: ScoreSeries =
                    serde_json::from_str(&read_string(&self.artifact("scores_train.json"))?)?;
                let th = SpotThreshold::fit(&train.window_values(), self.cfg.score.spot_q)?;
                evaluate(&steps, &labels, th.level)?
            }
        };
        log::info!(
            "precision {:.4} recall {:.4} f1 {:.4} ({} of {} segments)",
            report.precision,
            report.recall,
            report.f1,
            report.n_detected,
            report.n_segments
        );
        write(&self.artifact("metrics.json"), report.metrics_json()?)?;
        let full = StoredReport {
            rule: self.cfg.score.threshold,
            report,
        };
        write(
            &self.artifact("report.json"),
            serde_json::to_string_pretty(&full)?,
        )?;
        Ok(vec!["metrics.json", "report.json"])
    }

    pub fn scores(&self) -> Result<StoredScores> {
        Ok(serde_json::from_str(&read_string(
            &self.artifact("scores.json"),
        )?)?)
    }

    pub fn report(&self) -> Result<StoredReport> {
        Ok(serde_json::from_str(&read_string(
            &self.artifact("report.json"),
        )?)?)
    }

    fn build_plot(&mut self) -> Result<Vec<&'static str>> {
        let catalog = self.catalog()?;
        let stream = self.stream("stream_test.csv", &catalog)?;
        let stored = self.scores()?;
        let mut out = vec![
            "score_trace.svg",
            "event_bars.svg",
            "event_bars_observed.csv",
        ];

        let d = catalog.n_series;
        let observed: Vec<Vec<Option<usize>>> = (0..d)
            .map(|m| {
                (0..stream.n_windows)
                    .map(|t| Some(stream.matched(t, m) - d))
                    .collect()
            })
            .collect();
        let mut groups = vec![BarGroup {
            title: "observed events",
            rows: observed.clone(),
        }];
        let forecast_path = self.artifact("forecasts.csv");
        let forecast_text = read_string(&forecast_path)?;
        if let Some(predicted) = parse_forecasts(&forecast_text, d, stream.n_windows)? {
            let rows: Vec<Vec<Option<usize>>> = predicted
                .iter()
                .map(|r| r.iter().map(|e| Some(*e)).collect())
                .collect();
            let diff = observed
                .iter()
                .zip(&rows)
                .map(|(o, p)| {
                    o.iter()
                        .zip(p)
                        .map(|(a, b)| if a != b { *a } else { None })
                        .collect()
                })
                .collect();
            write(&self.artifact("event_bars_forecast.csv"), bars_csv(&rows))?;
            out.push("event_bars_forecast.csv");
            groups.push(BarGroup {
                title: "forecast events",
                rows,
            });
            groups.push(BarGroup {
                title: "mismatches",
                rows: diff,
            });
        }
        write(
            &self.artifact("event_bars.svg"),
            event_bars_svg(&groups, 1200.0),
        )?;
        write(
            &self.artifact("event_bars_observed.csv"),
            stream.event_bar_csv(EdgeKind::Matched),
        )?;

        let steps = stored.scores.step_scores(stored.len);
        let (labels, threshold) = if self.cfg.data.labels.is_some() {
            (
                Some(self.labels(stored.len)?),
                Some(self.report()?.report.threshold),
            )
        } else {
            (None, None)
        };
        write(
            &self.artifact("score_trace.svg"),
            score_trace_svg(
                &steps,
                labels.as_ref().map(LabelSeries::flags),
                threshold,
                1200.0,
                300.0,
            ),
        )?;
        Ok(out)
    }
}

/// `t,m,pattern_event,residual_event` with event indices relative to the catalog.
fn forecasts_csv(forecasts: &[Vec<SeriesForecast>], catalog: &EventCatalog) -> String {
    let mut out = String::from("t,m,pattern_event,residual_event\n");
    for (t, row) in forecasts.iter().enumerate() {
        for f in row {
            let residual = if f.residual_event == catalog.residual_plus {
                "plus"
            } else {
                "minus"
            };
            out.push_str(&format!(
                "{t},{},{},{residual}\n",
                f.series,
                f.pattern_event - catalog.n_series
            ));
        }
    }
    out
}

/// Forecast pattern events as `[series][window]`, or `None` when empty.
fn parse_forecasts(text: &str, d: usize, windows: usize) -> Result<Option<Vec<Vec<usize>>>> {
    let mut rows = vec![vec![0usize; windows]; d];
    let mut seen = 0;
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| -> Result<usize> {
            f.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("bad forecast line {line:?}")))
        };
        let (t, m, e) = (num(0)?, num(1)?, num(2)?);
        if t >= windows || m >= d {
            return Err(Error::Format(format!(
                "forecast line {line:?} out of range"
            )));
        }
        rows[m][t] = e;
        seen += 1;
    }
    Ok((seen > 0).then_some(rows))
}

fn bars_csv(rows: &[Vec<Option<usize>>]) -> String {
    let windows = rows.first().map_or(0, Vec::len);
    let mut out = String::new();
    for t in 0..windows {
        let line: Vec<String> = rows
            .iter()
            .map(|r| r[t].map_or(String::new(), |e| e.to_string()))
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Writes a generated dataset plus a ready-to-run config into `dir`;
/// returns the config path.
pub fn write_synthetic(data: &SynthDataset, dir: &Path, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&data.train, dir.join("train.csv"), true)?;
    write_csv(&data.test, dir.join("test.csv"), true)?;
    write(&dir.join("labels.csv"), labels_to_csv(&data.labels))?;
    write(
        &dir.join("anomalies.json"),
        serde_json::to_string_pretty(&data.anomalies)?,
    )?;
    let mut cfg =
        PipelineConfig::synthetic("train.csv".into(), "test.csv".into(), "labels.csv".into());
    cfg.seed = seed;
    let path = dir.join("config.toml");
    write(&path, cfg.to_toml()?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("bogus".parse::<Stage>().is_err());
    }

    #[test]
    fn surprisal_only_skips_training() {
        let mut cfg = PipelineConfig::synthetic("a".into(), "b".into(), "c".into());
        assert_eq!(Stage::Score.deps(&cfg), vec![Stage::Train]);
        cfg.score.surprisal_only = true;
        assert_eq!(Stage::Score.deps(&cfg), vec![Stage::Graph]);
        cfg.data.labels = None;
        assert_eq!(Stage::Plot.deps(&cfg), vec![Stage::Score]);
    }

    #[test]
    fn forecast_csv_round_trip() {
        let text =
            "t,m,pattern_event,residual_event\n0,0,2,plus\n0,1,1,minus\n1,0,0,minus\n1,1,3,plus\n";
        let rows = parse_forecasts(text, 2, 2).unwrap().unwrap();
        assert_eq!(rows, vec![vec![2, 0], vec![1, 3]]);
        assert!(parse_forecasts("t,m,pattern_event,residual_event\n", 2, 2)
            .unwrap()
            .is_none());
        assert!(parse_forecasts("h\n5,0,1,plus\n", 2, 2).is_err());
    }
}
