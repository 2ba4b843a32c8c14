/**
 * Cross-validated training of the transformer ensemble on tract embedding
 * images.
 *
 * Folds split at the subject level (stratified by group) before any
 * augmentation, so every augmented image of a validation subject stays out of
 * training; a leakage guard aborts otherwise. Each model trains with Adam and
 * early-stops when validation accuracy has not improved for `patience`
 * epochs, restoring the best weights. Subject-level predictions always come
 * from the full (unaugmented) image; ensemble mode averages the three
 * channel models' logits.
 */

import * as tf from "@tensorflow/tfjs";

import { Dataset, makeFolds, SubjectData, toSample } from "./data.js";
import { AttentionStack } from "./formats.js";
import { argmax, ensembleLogits, metrics } from "./metrics.js";
import { deriveSeed, Rng } from "./rng.js";
import { ViT, ViTConfig, defaultConfig } from "./vit.js";

export interface TrainOptions {
  mode: "ensemble" | "stack";
  seed: number;
  epochs: number;
  batchSize: number;
  learningRate: number;
  patience: number;
  folds: number;
  useAugmentation: boolean;
  model?: Partial<ViTConfig>;
  verbose?: boolean;
}

export function defaultTrainOptions(partial: Partial<TrainOptions> = {}): TrainOptions {
  return {
    mode: "ensemble",
    seed: 0,
    epochs: 200,
    batchSize: 64,
    learningRate: 1e-3,
    patience: 20,
    folds: 5,
    useAugmentation: true,
    ...partial,
  };
}

export interface FoldMetrics {
  fold: number;
  accuracy: number;
  f1: number;
}

export interface SubjectPrediction {
  subject: string;
  group: "G1" | "G2";
  label: number;
  logits: number[];
  predicted: number;
  fold: number;
}

export interface CvResult {
  folds: FoldMetrics[];
  meanAccuracy: number;
  meanF1: number;
  predictions: SubjectPrediction[];
}

/** Per fold, the trained models (one per channel in ensemble mode, one total
 * in stack mode), kept for attention export. */
export type FoldModels = ViT[][];

interface Sample {
  image: Float32Array;
  label: number;
}

export function buildConfig(ds: Dataset, mode: "ensemble" | "stack", overrides?: Partial<ViTConfig>): ViTConfig {
  const channels = mode === "stack" ? ds.channels : 1;
  return { ...defaultConfig(ds.resolution, channels), ...overrides, channels };
}

function batchTensor(samples: Sample[], resolution: number, channels: number): tf.Tensor4D {
  const plane = resolution * resolution * channels;
  const buf = new Float32Array(samples.length * plane);
  samples.forEach((s, i) => buf.set(s.image, i * plane));
  return tf.tensor4d(buf, [samples.length, resolution, resolution, channels]);
}

export async function evalLogits(model: ViT, images: Float32Array[], resolution: number, channels: number): Promise<number[][]> {
  const samples = images.map((image) => ({ image, label: 0 }));
  const x = batchTensor(samples, resolution, channels);
  const { logits } = model.forward(x, false);
  const data = await logits.data();
  x.dispose();
  logits.dispose();
  const out: number[][] = [];
  for (let i = 0; i < images.length; i++) {
    out.push([data[2 * i], data[2 * i + 1]]);
  }
  return out;
}

export async function trainOne(
  ds: Dataset,
  trainSubjects: SubjectData[],
  valSubjects: SubjectData[],
  channel: number | "all",
  cfg: ViTConfig,
  opts: TrainOptions,
  rng: Rng,
): Promise<ViT> {
  const trainIds = new Set(trainSubjects.map((s) => s.id));
  for (const v of valSubjects) {
    if (trainIds.has(v.id)) {
      throw new Error(`leakage detected: subject ${v.id} in both train and validation`);
    }
  }

  const samples: Sample[] = [];
  for (const s of trainSubjects) {
    samples.push({ image: toSample(s.full, ds.channels, ds.resolution, channel), label: s.label });
    if (opts.useAugmentation) {
      for (const a of s.augmented) {
        samples.push({ image: toSample(a, ds.channels, ds.resolution, channel), label: s.label });
      }
    }
  }
  const valImages = valSubjects.map((s) => toSample(s.full, ds.channels, ds.resolution, channel));
  const valLabels = valSubjects.map((s) => s.label);

  const model = new ViT(cfg, rng);
  const optimizer = tf.train.adam(opts.learningRate);
  let bestAcc = -1;
  let bestWeights: Record<string, Float32Array> | null = null;
  let wait = 0;

  const order = samples.map((_, i) => i);
  for (let epoch = 0; epoch < opts.epochs; epoch++) {
    rng.shuffle(order);
    for (let start = 0; start < order.length; start += opts.batchSize) {
      const batch = order.slice(start, start + opts.batchSize).map((i) => samples[i]);
      const x = batchTensor(batch, ds.resolution, cfg.channels);
      const y = tf.oneHot(batch.map((s) => s.label), cfg.classes);
      optimizer.minimize(
        () => tf.losses.softmaxCrossEntropy(y, model.forward(x, true).logits) as tf.Scalar,
        false,
        model.trainables(),
      );
      x.dispose();
      y.dispose();
    }
    const valLogits = await evalLogits(model, valImages, ds.resolution, cfg.channels);
    const preds = valLogits.map(argmax);
    const { accuracy } = metrics(preds, valLabels);
    if (accuracy > bestAcc) {
      bestAcc = accuracy;
      bestWeights = await model.snapshot();
      wait = 0;
    } else {
      wait += 1;
      if (wait >= opts.patience) break;
    }
    if (opts.verbose && epoch % 5 === 0) {
      console.error(`    epoch ${epoch}: val acc ${accuracy.toFixed(3)} (best ${bestAcc.toFixed(3)})`);
    }
  }
  if (bestWeights) model.restore(bestWeights);
  optimizer.dispose();
  return model;
}

export interface TrainJob {
  fold: number;
  channelIndex: number;
  channel: number | "all";
  trainIdx: number[];
  valIdx: number[];
}

export interface JobResult {
  weights: Record<string, Float32Array>;
  valLogits: number[][];
}

/** Train one (fold, channel) job and return restorable weights plus the
 * validation-subject logits from the full images. Used inline and by the
 * worker-pool executor; results depend only on the job and the seed. */
export async function executeJob(ds: Dataset, job: TrainJob, cfg: ViTConfig, opts: TrainOptions): Promise<JobResult> {
  const trainSubjects = job.trainIdx.map((i) => ds.subjects[i]);
  const valSubjects = job.valIdx.map((i) => ds.subjects[i]);
  const rng = new Rng(deriveSeed(opts.seed, `model/f${job.fold}/c${job.channel}`));
  if (opts.verbose) console.error(`  fold ${job.fold} channel ${job.channel}`);
  const model = await trainOne(ds, trainSubjects, valSubjects, job.channel, cfg, opts, rng);
  const weights = await model.snapshot();
  const valLogits = await evalLogits(
    model,
    valSubjects.map((s) => toSample(s.full, ds.channels, ds.resolution, job.channel)),
    ds.resolution,
    cfg.channels,
  );
  model.dispose();
  return { weights, valLogits };
}

export function planJobs(ds: Dataset, opts: TrainOptions): { folds: number[][]; jobs: TrainJob[] } {
  const foldRng = new Rng(deriveSeed(opts.seed, "folds"));
  const folds = makeFolds(ds.subjects, opts.folds, foldRng);
  const channelList: Array<number | "all"> =
    opts.mode === "ensemble" ? [...Array(ds.channels).keys()] : ["all"];
  const jobs: TrainJob[] = [];
  for (let f = 0; f < folds.length; f++) {
    const valIdx = new Set(folds[f]);
    const trainIdx = ds.subjects.map((_, i) => i).filter((i) => !valIdx.has(i));
    channelList.forEach((channel, channelIndex) => {
      jobs.push({ fold: f, channelIndex, channel, trainIdx, valIdx: folds[f] });
    });
  }
  return { folds, jobs };
}

export type JobExecutor = (jobs: TrainJob[], cfg: ViTConfig, opts: TrainOptions) => Promise<JobResult[]>;

export async function runCrossValidation(
  ds: Dataset,
  opts: TrainOptions,
  executor?: JobExecutor,
): Promise<{ result: CvResult; models: FoldModels; config: ViTConfig }> {
  const cfg = buildConfig(ds, opts.mode, opts.model);
  const { folds, jobs } = planJobs(ds, opts);
  const channelsPerFold = opts.mode === "ensemble" ? ds.channels : 1;

  const runInline: JobExecutor = async (js, c, o) => {
    const out: JobResult[] = [];
    for (const job of js) out.push(await executeJob(ds, job, c, o));
    return out;
  };
  const results = await (executor ?? runInline)(jobs, cfg, opts);

  const foldMetrics: FoldMetrics[] = [];
  const predictions: SubjectPrediction[] = [];
  const models: FoldModels = [];
  for (let f = 0; f < folds.length; f++) {
    const foldJobs = jobs
      .map((job, j) => ({ job, result: results[j] }))
      .filter(({ job }) => job.fold === f)
      .sort((a, b) => a.job.channelIndex - b.job.channelIndex);
    const foldModels: ViT[] = foldJobs.map(({ job, result }) => {
      const model = new ViT(cfg, new Rng(deriveSeed(opts.seed, `restore/f${job.fold}/c${job.channel}`)));
      model.restore(result.weights);
      return model;
    });
    models.push(foldModels);

    const valSubjects = folds[f].map((i) => ds.subjects[i]);
    const valLabels = valSubjects.map((s) => s.label);
    const preds: number[] = [];
    valSubjects.forEach((s, i) => {
      const logits = ensembleLogits(foldJobs.map(({ result }) => result.valLogits[i]));
      const predicted = argmax(logits);
      preds.push(predicted);
      predictions.push({
        subject: s.id,
        group: s.group,
        label: s.label,
        logits,
        predicted,
        fold: f,
      });
    });
    const m = metrics(preds, valLabels);
    foldMetrics.push({ fold: f, accuracy: m.accuracy, f1: m.f1 });
    if (opts.verbose) {
      console.error(`  fold ${f}: accuracy ${m.accuracy.toFixed(3)} f1 ${m.f1.toFixed(3)}`);
    }
    if (foldModels.length !== channelsPerFold) {
      throw new Error("job bookkeeping mismatch");
    }
  }

  const meanAccuracy = foldMetrics.reduce((a, b) => a + b.accuracy, 0) / foldMetrics.length;
  const meanF1 = foldMetrics.reduce((a, b) => a + b.f1, 0) / foldMetrics.length;
  return {
    result: { folds: foldMetrics, meanAccuracy, meanF1, predictions },
    models,
    config: cfg,
  };
}

/** Post-softmax attention for one image as a TFAT-ready stack. */
export async function attentionStack(
  model: ViT,
  image: Float32Array,
  resolution: number,
): Promise<AttentionStack> {
  const channels = model.config.channels;
  const x = tf.tensor4d(image, [1, resolution, resolution, channels]);
  const { logits, attentions } = model.forward(x, false, true);
  const layers = attentions.length;
  const heads = model.config.heads;
  const tokens = model.tokens;
  const weights = new Float32Array(layers * heads * tokens * tokens);
  for (let l = 0; l < layers; l++) {
    const data = await attentions[l].data();
    weights.set(data, l * heads * tokens * tokens);
    attentions[l].dispose();
  }
  x.dispose();
  logits.dispose();
  return {
    layers,
    heads,
    tokens,
    grid: model.grid,
    resolution,
    weights,
  };
}
