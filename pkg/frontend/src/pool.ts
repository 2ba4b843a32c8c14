/** Worker-thread pool distributing (fold, channel) training jobs across
 * cores; results are collected by job index so parallelism never reorders
 * anything the caller sees. */

import * as path from "node:path";
import { Worker } from "node:worker_threads";

import { JobExecutor, JobResult, TrainJob, TrainOptions } from "./train.js";
import { ViTConfig } from "./vit.js";

export function poolExecutor(
  manifestPath: string,
  imagesDir: string,
  backend: "wasm" | "cpu",
  workerCount: number,
): JobExecutor {
  const workerPath = path.join(path.dirname(new URL(import.meta.url).pathname), "worker.js");
  return (jobs: TrainJob[], cfg: ViTConfig, opts: TrainOptions) =>
    new Promise<JobResult[]>((resolve, reject) => {
      const results: JobResult[] = new Array(jobs.length);
      const queue = jobs.map((job, index) => ({ job, index }));
      let pending = jobs.length;
      let failed = false;
      const workers: Worker[] = [];

      const shutdown = () => {
        for (const w of workers) void w.terminate();
      };

      const spawn = () => {
        const worker = new Worker(workerPath, {
          workerData: { manifestPath, imagesDir, backend, cfg, opts },
        });
        const assigned: { index: number }[] = [];
        const next = () => {
          const item = queue.shift();
          if (!item) {
            void worker.terminate();
            return;
          }
          assigned[0] = { index: item.index };
          worker.postMessage(item.job);
        };
        worker.on("message", (msg: any) => {
          if (failed) return;
          if (!msg.ok) {
            failed = true;
            shutdown();
            reject(new Error(`training job failed: ${msg.error}`));
            return;
          }
          results[assigned[0].index] = msg.result;
          pending -= 1;
          if (pending === 0) {
            shutdown();
            resolve(results);
          } else {
            next();
          }
        });
        worker.on("error", (err) => {
          if (!failed) {
            failed = true;
            shutdown();
            reject(err);
          }
        });
        workers.push(worker);
        next();
      };

      for (let i = 0; i < Math.max(1, Math.min(workerCount, jobs.length)); i++) spawn();
    });
}
