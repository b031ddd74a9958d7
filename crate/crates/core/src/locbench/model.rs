use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{combine_priors, rank_of, DatasetRecord, MetricsReport, PredictionRow, Split, Task};
use crate::encoders::{sample_aux, EncoderAux, EncoderKind, EncoderSpec, PositionEncoder};
use crate::error::{Error, Result};
use crate::geo::LocationDeg;
use crate::nn::{checkpoint, log_softmax, loss_mse, loss_softmax_ce, Activation, Adam, Arch, Grads, MlpParams, Mode, TrainConfig};
use crate::rng::{indexed_seed, seeded, sub_seed};

/// Shape of the learnable network `NN(·)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Ignored for tile encoders, which always use an embedding table.
    pub arch: Arch,
    pub activation: Activation,
    /// Hidden width `k`.
    pub hidden: usize,
    /// Hidden layers `h` (ffn and siren).
    pub depth: usize,
    /// Location embedding size `d` for regression.
    pub embed_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            arch: Arch::Ffn,
            activation: Activation::Relu,
            hidden: 256,
            depth: 2,
            embed_dim: 64,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Domain("hidden and embed_dim must be >= 1".into()));
        }
        Ok(())
    }
}

fn build_net(encoder: &PositionEncoder, cfg: &NetConfig, train_locs: &[LocationDeg], out: usize, seed: u64) -> Result<MlpParams> {
    if encoder.spec().kind == EncoderKind::Tile {
        let vocab: BTreeSet<u32> = train_locs.iter().map(|&l| encoder.tile_cell(l) as u32).collect();
        return MlpParams::init_table(vocab.into_iter().collect(), out, seed);
    }
    if cfg.arch == Arch::Table {
        return Err(Error::Domain(format!("table networks need a tile encoder, not {}", encoder.spec().kind)));
    }
    MlpParams::init(cfg.arch, cfg.activation, encoder.output_dim(), cfg.hidden, cfg.depth, out, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Set when the last epoch ended with a higher loss than the first.
    pub convergence_warning: bool,
}

const CHUNK: usize = 16;

/// Mini-batch Adam over all networks. `sample` adds one example's gradients
/// into the per-network buffers and returns its loss. Batches are split into
/// fixed chunks evaluated in parallel and summed in chunk order, so results do
/// not depend on the thread count.
fn fit<F>(nets: &mut [MlpParams], n: usize, cfg: &TrainConfig, sample: F) -> Result<TrainLog>
where
    F: Fn(&[MlpParams], usize, u64, &mut [Grads]) -> Result<f64> + Sync,
{
    let mut adams: Vec<Adam> = nets.iter().map(Adam::new).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seeded(sub_seed(cfg.seed, "shuffle"));
    let dropout_seed = sub_seed(cfg.seed, "dropout");
    let mut log = TrainLog::default();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let params: &[MlpParams] = nets;
            let base = step * cfg.batch_size as u64;
            let parts = batch
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut g: Vec<Grads> = params.iter().map(Grads::zeros_like).collect();
                    let mut loss = 0.0;
                    for (j, &i) in chunk.iter().enumerate() {
                        loss += sample(params, i, indexed_seed(dropout_seed, base + (c * CHUNK + j) as u64), &mut g)?;
                    }
                    Ok((loss, g))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut parts = parts.into_iter();
            let (mut loss, mut grads) = parts.next().expect("batch is non-empty");
            for (l, g) in parts {
                loss += l;
                for (a, b) in grads.iter_mut().zip(&g) {
                    a.add_assign(b);
                }
            }
            let nan = || Error::NanGrad(format!("epoch {epoch}, step {step}"));
            if !loss.is_finite() || !grads.iter().all(Grads::all_finite) {
                return Err(nan());
            }
            total += loss;
            for ((net, g), adam) in nets.iter_mut().zip(&mut grads).zip(&mut adams) {
                g.scale(1.0 / batch.len() as f64);
                adam.step(net, g, cfg).map_err(|_| nan())?;
            }
            step += 1;
        }
        log.epochs.push(EpochLog {
            epoch,
            loss: total / n as f64,
        });
    }
    let (first, last) = (log.epochs[0].loss, log.epochs[log.epochs.len() - 1].loss);
    log.convergence_warning = last > first;
    Ok(log)
}

fn train_mode<'a>(net: &MlpParams, cfg_dropout: f64, rng: &'a mut crate::rng::Rng) -> Mode<'a> {
    if net.arch == Arch::Residual4 && cfg_dropout > 0.0 {
        Mode::Train {
            dropout_p: cfg_dropout,
            rng,
        }
    } else {
        Mode::Eval
    }
}

fn encode_all(encoder: &PositionEncoder, locs: &[LocationDeg]) -> Vec<Vec<f64>> {
    locs.par_iter().map(|&l| encoder.encode(l).values).collect()
}

fn train_split(records: &[DatasetRecord]) -> Result<Vec<&DatasetRecord>> {
    let train: Vec<&DatasetRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
    if train.is_empty() {
        return Err(Error::EmptyDataset("no records in the train split".into()));
    }
    Ok(train)
}

/// Location prior `P(y | x)`: the network maps `PE(x)` to class logits.
#[derive(Debug, Clone)]
pub struct LocationClassifier {
    pub encoder: PositionEncoder,
    pub net: MlpParams,
    pub n_classes: usize,
    pub net_config: NetConfig,
}

impl LocationClassifier {
    pub fn logits(&self, loc: LocationDeg) -> Result<Vec<f64>> {
        self.net.forward(&self.encoder.encode(loc).values)
    }

    pub fn logprobs(&self, loc: LocationDeg) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits(loc)?))
    }
}

/// Trains a location classifier with softmax cross-entropy on the train split.
/// The class count is one more than the largest label in `records`.
pub fn train_location_classifier(
    records: &[DatasetRecord],
    spec: &EncoderSpec,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
) -> Result<(LocationClassifier, TrainLog)> {
    cfg.validate()?;
    net_cfg.validate()?;
    let train = train_split(records)?;
    let labels: Vec<usize> = train
        .iter()
        .map(|r| r.label.ok_or_else(|| Error::Schema(format!("record {} has no label", r.id))))
        .collect::<Result<_>>()?;
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::DegenerateDataset(format!(
            "train split has {} class(es), need at least 2",
            distinct.len()
        )));
    }
    let n_classes = records.iter().filter_map(|r| r.label).max().unwrap_or(0) + 1;
    let locs: Vec<LocationDeg> = train.iter().map(|r| r.loc).collect();
    let aux = sample_aux(spec, &locs)?;
    let encoder = PositionEncoder::new(spec.clone(), aux)?;
    let feats = encode_all(&encoder, &locs);
    let mut nets = vec![build_net(&encoder, net_cfg, &locs, n_classes, sub_seed(cfg.seed, "init"))?];
    let dropout = cfg.dropout_p;
    let log = fit(&mut nets, train.len(), cfg, |nets, i, s, g| {
        let net = &nets[0];
        let mut rng = seeded(s);
        let (logits, cache) = net.forward_cached(&feats[i], train_mode(net, dropout, &mut rng))?;
        let (loss, dy) = loss_softmax_ce(&logits, labels[i])?;
        net.backward(&cache, &dy, &mut g[0])?;
        Ok(loss)
    })?;
    let net = nets.pop().expect("one network");
    Ok((
        LocationClassifier {
            encoder,
            net,
            n_classes,
            net_config: net_cfg.clone(),
        },
        log,
    ))
}

/// Regression model: `Enc(x)`, optionally multiplied elementwise by a linear
/// projection of the image embedding, then a two-layer head to a scalar.
/// Targets are standardized with train-split statistics.
#[derive(Debug, Clone)]
pub struct LocationRegressor {
    pub encoder: PositionEncoder,
    pub net: MlpParams,
    pub head: MlpParams,
    pub projection: Option<MlpParams>,
    pub target_mean: f64,
    pub target_std: f64,
    pub net_config: NetConfig,
}

impl LocationRegressor {
    pub fn predict(&self, loc: LocationDeg, embedding: Option<&[f64]>) -> Result<f64> {
        let mut f = self.net.forward(&self.encoder.encode(loc).values)?;
        if let Some(proj) = &self.projection {
            let emb = embedding.ok_or_else(|| Error::Schema("model needs an image embedding".into()))?;
            let p = proj.forward(emb)?;
            f.iter_mut().zip(&p).for_each(|(a, b)| *a *= b);
        }
        Ok(self.head.forward(&f)?[0] * self.target_std + self.target_mean)
    }

    /// Block name used in metric reports.
    pub fn block_name(&self) -> &'static str {
        if self.projection.is_some() {
            "fused"
        } else {
            "location_only"
        }
    }
}

pub fn train_location_regressor(
    records: &[DatasetRecord],
    spec: &EncoderSpec,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
) -> Result<(LocationRegressor, TrainLog)> {
    cfg.validate()?;
    net_cfg.validate()?;
    let train = train_split(records)?;
    let targets: Vec<f64> = train
        .iter()
        .map(|r| r.target.ok_or_else(|| Error::Schema(format!("record {} has no target", r.id))))
        .collect::<Result<_>>()?;
    let n_emb = train.iter().filter(|r| r.image_embedding.is_some()).count();
    let emb_dim = match n_emb {
        0 => None,
        n if n == train.len() => {
            let d = train[0].image_embedding.as_ref().map_or(0, Vec::len);
            if d == 0 || train.iter().any(|r| r.image_embedding.as_ref().map(Vec::len) != Some(d)) {
                return Err(Error::Shape("image embeddings must share one non-zero length".into()));
            }
            Some(d)
        }
        _ => return Err(Error::Schema("image embeddings present for only part of the train split".into())),
    };
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let sd = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    let std = if sd > 0.0 { sd } else { 1.0 };
    let scaled: Vec<f64> = targets.iter().map(|t| (t - mean) / std).collect();

    let locs: Vec<LocationDeg> = train.iter().map(|r| r.loc).collect();
    let aux = sample_aux(spec, &locs)?;
    let encoder = PositionEncoder::new(spec.clone(), aux)?;
    let feats = encode_all(&encoder, &locs);
    let d = net_cfg.embed_dim;
    let init = sub_seed(cfg.seed, "init");
    let mut nets = vec![
        build_net(&encoder, net_cfg, &locs, d, indexed_seed(init, 0))?,
        MlpParams::init(Arch::Ffn, Activation::Relu, d, d, 1, 1, indexed_seed(init, 1))?,
    ];
    if let Some(e) = emb_dim {
        let mut proj = MlpParams::init(Arch::Ffn, Activation::Relu, e, 1, 0, d, indexed_seed(init, 2))?;
        // unit bias: the fused model starts out as the location-only model
        proj.tensors[1].data.fill(1.0);
        nets.push(proj);
    }
    let embs: Vec<Option<&[f64]>> = train.iter().map(|r| r.image_embedding.as_deref()).collect();
    let dropout = cfg.dropout_p;
    let log = fit(&mut nets, train.len(), cfg, |nets, i, s, g| {
        let (enc, head) = (&nets[0], &nets[1]);
        let mut rng = seeded(s);
        let (e, ce) = enc.forward_cached(&feats[i], train_mode(enc, dropout, &mut rng))?;
        let mut f = e.clone();
        let mut proj_state = None;
        if let (Some(proj), Some(emb)) = (nets.get(2), embs[i]) {
            let (p, pc) = proj.forward_cached(emb, Mode::Eval)?;
            f.iter_mut().zip(&p).for_each(|(a, b)| *a *= b);
            proj_state = Some((proj, p, pc));
        }
        let (y, hc) = head.forward_cached(&f, Mode::Eval)?;
        let (loss, dy) = loss_mse(y[0], scaled[i]);
        let df = head.backward(&hc, &[dy], &mut g[1])?;
        let de = match proj_state {
            Some((proj, p, pc)) => {
                let dp: Vec<f64> = df.iter().zip(&e).map(|(a, b)| a * b).collect();
                proj.backward(&pc, &dp, &mut g[2])?;
                df.iter().zip(&p).map(|(a, b)| a * b).collect()
            }
            None => df,
        };
        enc.backward(&ce, &de, &mut g[0])?;
        Ok(loss)
    })?;
    let mut nets = nets.into_iter();
    let net = nets.next().expect("encoder network");
    let head = nets.next().expect("head network");
    Ok((
        LocationRegressor {
            encoder,
            net,
            head,
            projection: nets.next(),
            target_mean: mean,
            target_std: std,
            net_config: net_cfg.clone(),
        },
        log,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationEval {
    pub location_only: MetricsReport,
    pub image_only: Option<MetricsReport>,
    pub combined: Option<MetricsReport>,
    /// Per-record ranks from the combined scores when images are available,
    /// otherwise from the location prior.
    pub predictions: Vec<PredictionRow>,
}

/// Evaluates `records` (all of them; filter the split beforehand). Image
/// blocks are reported when every record carries image log-probabilities.
pub fn evaluate_classifier(model: &LocationClassifier, records: &[DatasetRecord]) -> Result<ClassificationEval> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    let c = model.n_classes;
    let labels: Vec<usize> = records
        .iter()
        .map(|r| match r.label {
            Some(l) if l < c => Ok(l),
            Some(l) => Err(Error::Index { index: l, len: c }),
            None => Err(Error::Schema(format!("record {} has no label", r.id))),
        })
        .collect::<Result<_>>()?;
    let n_img = records.iter().filter(|r| r.image_logprobs.is_some()).count();
    if n_img != 0 && n_img != records.len() {
        return Err(Error::Schema("image log-probabilities present for only some records".into()));
    }
    let loc_scores: Vec<Vec<f64>> = records.par_iter().map(|r| model.logprobs(r.loc)).collect::<Result<_>>()?;
    let location_only = MetricsReport::classification(&loc_scores, &labels);
    let (image_only, combined, final_scores) = if n_img == 0 {
        (None, None, loc_scores)
    } else {
        let img: Vec<&Vec<f64>> = records.iter().map(|r| r.image_logprobs.as_ref().expect("checked above")).collect();
        if let Some(bad) = img.iter().find(|v| v.len() != c) {
            return Err(Error::Shape(format!("image log-probabilities have {} classes, model has {c}", bad.len())));
        }
        let img_scores: Vec<Vec<f64>> = img.iter().map(|v| log_softmax(v)).collect();
        let comb: Vec<Vec<f64>> = img_scores
            .par_iter()
            .zip(&loc_scores)
            .map(|(a, b)| combine_priors(a, b))
            .collect::<Result<_>>()?;
        (
            Some(MetricsReport::classification(&img_scores, &labels)),
            Some(MetricsReport::classification(&comb, &labels)),
            comb,
        )
    };
    let predictions = records
        .iter()
        .zip(&final_scores)
        .zip(&labels)
        .map(|((r, s), &l)| {
            let rank = rank_of(s, l);
            PredictionRow {
                id: r.id.clone(),
                loc: r.loc,
                hit1: Some(rank == 1),
                rank: Some(rank),
                abs_err: None,
            }
        })
        .collect();
    Ok(ClassificationEval {
        location_only,
        image_only,
        combined,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionEval {
    pub block: &'static str,
    pub metrics: MetricsReport,
    pub predictions: Vec<PredictionRow>,
}

pub fn evaluate_regressor(model: &LocationRegressor, records: &[DatasetRecord]) -> Result<RegressionEval> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    let targets: Vec<f64> = records
        .iter()
        .map(|r| r.target.ok_or_else(|| Error::Schema(format!("record {} has no target", r.id))))
        .collect::<Result<_>>()?;
    let preds: Vec<f64> = records
        .par_iter()
        .map(|r| model.predict(r.loc, r.image_embedding.as_deref()))
        .collect::<Result<_>>()?;
    let predictions = records
        .iter()
        .zip(preds.iter().zip(&targets))
        .map(|(r, (p, t))| PredictionRow {
            id: r.id.clone(),
            loc: r.loc,
            hit1: None,
            rank: None,
            abs_err: Some((p - t).abs()),
        })
        .collect();
    Ok(RegressionEval {
        block: model.block_name(),
        metrics: MetricsReport::regression(&preds, &targets)?,
        predictions,
    })
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Classifier(LocationClassifier),
    Regressor(LocationRegressor),
}

impl TrainedModel {
    pub fn task(&self) -> Task {
        match self {
            TrainedModel::Classifier(_) => Task::Classification,
            TrainedModel::Regressor(_) => Task::Regression,
        }
    }

    pub fn encoder_spec(&self) -> &EncoderSpec {
        match self {
            TrainedModel::Classifier(m) => m.encoder.spec(),
            TrainedModel::Regressor(m) => m.encoder.spec(),
        }
    }
}

const SIDECAR_FORMAT: &str = "locenc-model-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format: String,
    task: Task,
    encoder: EncoderSpec,
    aux: Option<EncoderAux>,
    net: NetConfig,
    n_classes: Option<usize>,
    target_mean: Option<f64>,
    target_std: Option<f64>,
    has_projection: bool,
}

/// `model.tspm` -> `model.tspm.json`.
pub fn sidecar_path(checkpoint_path: &Path) -> PathBuf {
    let mut s = checkpoint_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the network checkpoint and its JSON sidecar (encoder spec, sampled
/// encoder parameters and model metadata).
pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    let (sidecar, nets): (Sidecar, Vec<&MlpParams>) = match model {
        TrainedModel::Classifier(m) => (
            Sidecar {
                format: SIDECAR_FORMAT.into(),
                task: Task::Classification,
                encoder: m.encoder.spec().clone(),
                aux: m.encoder.aux().cloned(),
                net: m.net_config.clone(),
                n_classes: Some(m.n_classes),
                target_mean: None,
                target_std: None,
                has_projection: false,
            },
            vec![&m.net],
        ),
        TrainedModel::Regressor(m) => {
            let mut nets = vec![&m.net, &m.head];
            nets.extend(m.projection.as_ref());
            (
                Sidecar {
                    format: SIDECAR_FORMAT.into(),
                    task: Task::Regression,
                    encoder: m.encoder.spec().clone(),
                    aux: m.encoder.aux().cloned(),
                    net: m.net_config.clone(),
                    n_classes: None,
                    target_mean: Some(m.target_mean),
                    target_std: Some(m.target_std),
                    has_projection: m.projection.is_some(),
                },
                nets,
            )
        }
    };
    checkpoint::save(path, &nets)?;
    let side = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sc: Sidecar = serde_json::from_str(&text)?;
    if sc.format != SIDECAR_FORMAT {
        return Err(Error::Checkpoint(format!("unknown sidecar format {:?}", sc.format)));
    }
    let mut nets = checkpoint::load(path)?.into_iter();
    let encoder = PositionEncoder::new(sc.encoder, sc.aux)?;
    let mismatch = |m: &str| Error::Checkpoint(format!("checkpoint does not match its sidecar: {m}"));
    let first = nets.next().ok_or_else(|| mismatch("no networks"))?;
    let want_in = if encoder.spec().kind == EncoderKind::Tile { 1 } else { encoder.output_dim() };
    if first.in_dim != want_in {
        return Err(mismatch("encoder output size"));
    }
    match sc.task {
        Task::Classification => {
            let n_classes = sc.n_classes.ok_or_else(|| mismatch("missing n_classes"))?;
            if first.out_dim != n_classes || nets.next().is_some() {
                return Err(mismatch("classifier layout"));
            }
            Ok(TrainedModel::Classifier(LocationClassifier {
                encoder,
                net: first,
                n_classes,
                net_config: sc.net,
            }))
        }
        Task::Regression => {
            let head = nets.next().ok_or_else(|| mismatch("missing head"))?;
            let projection = nets.next();
            if projection.is_some() != sc.has_projection || nets.next().is_some() || head.out_dim != 1 {
                return Err(mismatch("regressor layout"));
            }
            Ok(TrainedModel::Regressor(LocationRegressor {
                encoder,
                net: first,
                head,
                projection,
                target_mean: sc.target_mean.ok_or_else(|| mismatch("missing target_mean"))?,
                target_std: sc.target_std.ok_or_else(|| mismatch("missing target_std"))?,
                net_config: sc.net,
            }))
        }
    }
}
