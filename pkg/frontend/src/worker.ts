/**
 * worker_threads entry: trains (fold, channel) jobs for the parent pool.
 * Each worker loads the dataset from disk once and keeps its own tfjs wasm
 * instance; job results depend only on the job spec and the run seed, so
 * scheduling order cannot change the output.
 */

import { parentPort, workerData } from "node:worker_threads";

import { useBackend } from "./backend.js";
import { loadDataset } from "./data.js";
import { readCohortManifest } from "./formats.js";
import { executeJob, TrainJob, TrainOptions } from "./train.js";
import { ViTConfig } from "./vit.js";

interface WorkerInit {
  manifestPath: string;
  imagesDir: string;
  backend: "wasm" | "cpu";
  cfg: ViTConfig;
  opts: TrainOptions;
}

const init = workerData as WorkerInit;

const ready = (async () => {
  await useBackend(init.backend);
  return loadDataset(readCohortManifest(init.manifestPath), init.imagesDir);
})();

parentPort!.on("message", async (job: TrainJob) => {
  try {
    const ds = await ready;
    const result = await executeJob(ds, job, init.cfg, init.opts);
    parentPort!.postMessage({ ok: true, job, result });
  } catch (err: any) {
    parentPort!.postMessage({ ok: false, job, error: String(err?.stack ?? err) });
  }
});
