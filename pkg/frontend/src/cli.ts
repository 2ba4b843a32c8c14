#!/usr/bin/env node
/**
 * Train the transformer ensemble (or the stacked single model) on a cohort
 * of tract embedding images, report 5-fold cross-validated metrics, and
 * export per-subject attention stacks for the interpretation pipeline.
 *
 *   tractoform-vit train --images DIR --manifest cohort.json \
 *       --mode ensemble --resolution 80 --seed 0 --out runs/exp1
 *
 * Emits: folds.json, predictions.json and attention/<subject>_*.tfat files
 * consumable by `tractoform interpret`.
 */

import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { useBackend, BackendName } from "./backend.js";
import { loadDataset, toSample } from "./data.js";
import { readCohortManifest, writeTfat } from "./formats.js";
import { poolExecutor } from "./pool.js";
import { attentionStack, defaultTrainOptions, runCrossValidation } from "./train.js";

async function trainCommand(argv: any): Promise<void> {
  await useBackend(argv.backend as BackendName);
  const manifest = readCohortManifest(argv.manifest);
  const ds = loadDataset(manifest, argv.images);
  if (argv.resolution !== ds.resolution) {
    throw new Error(`--resolution ${argv.resolution} but images are ${ds.resolution}`);
  }
  const opts = defaultTrainOptions({
    mode: argv.mode,
    seed: argv.seed,
    epochs: argv.epochs,
    batchSize: argv.batch,
    learningRate: argv.lr,
    patience: argv.patience,
    folds: argv.folds,
    useAugmentation: argv.augment,
    verbose: argv.verbose,
    model: {
      layers: argv.layers,
      heads: argv.heads,
      hidden: argv.hidden,
      dropout: argv.dropout,
      ...(argv.patch ? { patchSize: argv.patch } : {}),
    },
  });

  const executor =
    argv.workers > 1
      ? poolExecutor(argv.manifest, argv.images, argv.backend as BackendName, argv.workers)
      : undefined;
  const t0 = Date.now();
  const { result, models, config } = await runCrossValidation(ds, opts, executor);
  const seconds = (Date.now() - t0) / 1000;

  fs.mkdirSync(argv.out, { recursive: true });
  fs.writeFileSync(
    path.join(argv.out, "folds.json"),
    JSON.stringify(
      {
        mode: opts.mode,
        seed: opts.seed,
        augmentation: opts.useAugmentation,
        model: config,
        folds: result.folds,
        mean_accuracy: result.meanAccuracy,
        mean_f1: result.meanF1,
        train_seconds: seconds,
      },
      null,
      2,
    ),
  );
  fs.writeFileSync(
    path.join(argv.out, "predictions.json"),
    JSON.stringify(
      result.predictions.map((p) => ({
        subject: p.subject,
        group: p.group,
        label: p.label,
        logits: p.logits,
        predicted: p.predicted,
        fold: p.fold,
      })),
      null,
      2,
    ),
  );

  if (argv.exportAttention !== "none") {
    const attDir = path.join(argv.out, "attention");
    fs.mkdirSync(attDir, { recursive: true });
    const wanted = result.predictions.filter((p) =>
      argv.exportAttention === "all" ? true : p.group === "G2" && p.predicted === 1,
    );
    for (const p of wanted) {
      const subject = ds.subjects.find((s) => s.id === p.subject)!;
      const foldModels = models[p.fold]; // out-of-fold models for this subject
      for (let m = 0; m < foldModels.length; m++) {
        const channel = opts.mode === "ensemble" ? m : "all";
        const image = toSample(subject.full, ds.channels, ds.resolution, channel as any);
        const stack = await attentionStack(foldModels[m], image, ds.resolution);
        const tag = opts.mode === "ensemble" ? `c${m}` : "stack";
        writeTfat(path.join(attDir, `${p.subject}_${tag}.tfat`), stack);
      }
    }
    console.error(`exported attention for ${wanted.length} subjects to ${attDir}`);
  }

  console.log(
    JSON.stringify(
      {
        mean_accuracy: result.meanAccuracy,
        mean_f1: result.meanF1,
        folds: result.folds.length,
        train_seconds: seconds,
      },
      null,
      2,
    ),
  );
  for (const models_ of models) for (const m of models_) m.dispose();
}

export async function main(args: string[]): Promise<number> {
  const parser = yargs(args)
    .command(
      "train",
      "cross-validated training on tract embedding images",
      (y) =>
        y
          .option("images", { type: "string", demandOption: true })
          .option("manifest", { type: "string", demandOption: true })
          .option("mode", { choices: ["ensemble", "stack"] as const, default: "ensemble" })
          .option("resolution", { type: "number", demandOption: true })
          .option("seed", { type: "number", default: 0 })
          .option("out", { type: "string", default: "out" })
          .option("augment", { type: "boolean", default: true, describe: "use augmented images for training" })
          .option("epochs", { type: "number", default: 200 })
          .option("patience", { type: "number", default: 20 })
          .option("batch", { type: "number", default: 64 })
          .option("lr", { type: "number", default: 1e-3 })
          .option("folds", { type: "number", default: 5 })
          .option("layers", { type: "number", default: 3 })
          .option("heads", { type: "number", default: 8 })
          .option("hidden", { type: "number", default: 128 })
          .option("dropout", { type: "number", default: 0.2 })
          .option("patch", { type: "number", describe: "patch size (default resolution/10)" })
          .option("backend", { choices: ["wasm", "cpu"] as const, default: "wasm" })
          .option("workers", { type: "number", default: Math.min(2, os.cpus().length), describe: "parallel training processes over (fold, channel) jobs" })
          .option("export-attention", { choices: ["none", "g2-correct", "all"] as const, default: "none" })
          .option("verbose", { type: "boolean", default: false }),
      async (argv) => {
        await trainCommand(argv);
      },
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      throw err ?? new Error(msg);
    });
  try {
    await parser.parseAsync();
    return 0;
  } catch (err: any) {
    console.error(`error: ${err.message}`);
    return err.message?.includes("not a ") || err.message?.includes("Unknown") ? 2 : 1;
  }
}

const isDirectRun = process.argv[1] && import.meta.url.endsWith(path.basename(process.argv[1]));
if (isDirectRun) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
