/** tfjs backend selection: wasm (SIMD, fast) by default, plain cpu as the
 * fully deterministic fallback. */

import * as tf from "@tensorflow/tfjs";

export type BackendName = "wasm" | "cpu";

export async function useBackend(name: BackendName): Promise<void> {
  if (name === "wasm") {
    await import("@tensorflow/tfjs-backend-wasm");
  }
  const ok = await tf.setBackend(name);
  if (!ok) throw new Error(`could not initialize tfjs backend ${name}`);
  await tf.ready();
}
