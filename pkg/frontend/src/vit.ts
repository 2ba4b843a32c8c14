/**
 * Light-weight vision transformer with exposed attention.
 *
 * Patch embedding (strided conv) -> prepended classification token + learned
 * positional embeddings -> pre-norm encoder blocks (multi-head self-attention
 * and a 4x GELU MLP, both with residuals and dropout) -> layer norm -> linear
 * head on the classification token. forward() returns the post-softmax
 * attention of every layer, (B, H, N, N) with token 0 the classification
 * token, so runs can be exported for rollout interpretation.
 */

import * as tf from "@tensorflow/tfjs";

import { Rng } from "./rng.js";

export interface ViTConfig {
  resolution: number;
  channels: number;
  patchSize: number;
  layers: number;
  heads: number;
  hidden: number;
  mlpRatio: number;
  dropout: number;
  classes: number;
}

export function defaultConfig(resolution: number, channels: number): ViTConfig {
  return {
    resolution,
    channels,
    patchSize: Math.max(1, Math.floor(resolution / 10)),
    layers: 3,
    heads: 8,
    hidden: 128,
    mlpRatio: 4,
    dropout: 0.2,
    classes: 2,
  };
}

export interface ForwardResult {
  logits: tf.Tensor2D;
  /** per layer, (B, heads, tokens, tokens), rows sum to 1 */
  attentions: tf.Tensor4D[];
}

function gelu(x: tf.Tensor): tf.Tensor {
  // tanh approximation
  const c = Math.sqrt(2 / Math.PI);
  return tf.tidy(() =>
    x.mul(0.5).mul(tf.tanh(x.add(x.pow(3).mul(0.044715)).mul(c)).add(1)),
  );
}

function layerNorm(x: tf.Tensor, gamma: tf.Variable, beta: tf.Variable): tf.Tensor {
  return tf.tidy(() => {
    const { mean, variance } = tf.moments(x, -1, true);
    return x.sub(mean).div(tf.sqrt(variance.add(1e-6))).mul(gamma).add(beta);
  });
}

export class ViT {
  readonly config: ViTConfig;
  readonly grid: number;
  readonly tokens: number;
  readonly vars: Record<string, tf.Variable> = {};
  private dropoutCounter = 0;
  private readonly dropoutBase: number;

  constructor(config: ViTConfig, rng: Rng) {
    if (config.resolution % config.patchSize !== 0) {
      throw new Error(
        `resolution ${config.resolution} not divisible by patch size ${config.patchSize}`,
      );
    }
    if (config.hidden % config.heads !== 0) {
      throw new Error(`hidden ${config.hidden} not divisible by heads ${config.heads}`);
    }
    this.config = config;
    this.grid = config.resolution / config.patchSize;
    this.tokens = this.grid * this.grid + 1;
    this.dropoutBase = Math.floor(rng.next() * 1e9);

    const { patchSize: p, channels: c, hidden: d, layers, mlpRatio, classes } = config;
    const init = (shape: number[], std = 0.02) =>
      tf.variable(tf.tensor(rng.normalArray(shape.reduce((a, b) => a * b, 1), std), shape));
    const zeros = (shape: number[]) => tf.variable(tf.zeros(shape));
    const ones = (shape: number[]) => tf.variable(tf.ones(shape));

    // patch embedding as reshape + matmul (non-overlapping patches are a pure
    // block rearrangement; avoids conv kernels missing from the wasm backend)
    this.vars["patch/kernel"] = init([p * p * c, d]);
    this.vars["patch/bias"] = zeros([d]);
    this.vars["cls"] = zeros([1, 1, d]);
    this.vars["pos"] = init([1, this.tokens, d]);
    for (let l = 0; l < layers; l++) {
      this.vars[`b${l}/ln1/g`] = ones([d]);
      this.vars[`b${l}/ln1/b`] = zeros([d]);
      this.vars[`b${l}/qkv/w`] = init([d, 3 * d]);
      this.vars[`b${l}/qkv/b`] = zeros([3 * d]);
      this.vars[`b${l}/proj/w`] = init([d, d]);
      this.vars[`b${l}/proj/b`] = zeros([d]);
      this.vars[`b${l}/ln2/g`] = ones([d]);
      this.vars[`b${l}/ln2/b`] = zeros([d]);
      this.vars[`b${l}/mlp1/w`] = init([d, mlpRatio * d]);
      this.vars[`b${l}/mlp1/b`] = zeros([mlpRatio * d]);
      this.vars[`b${l}/mlp2/w`] = init([mlpRatio * d, d]);
      this.vars[`b${l}/mlp2/b`] = zeros([d]);
    }
    this.vars["head/ln/g"] = ones([d]);
    this.vars["head/ln/b"] = zeros([d]);
    this.vars["head/w"] = init([d, classes]);
    this.vars["head/b"] = zeros([classes]);
  }

  trainables(): tf.Variable[] {
    return Object.values(this.vars);
  }

  private drop(x: tf.Tensor, training: boolean): tf.Tensor {
    if (!training || this.config.dropout === 0) return x;
    this.dropoutCounter += 1;
    return tf.dropout(x, this.config.dropout, undefined, this.dropoutBase + this.dropoutCounter);
  }

  /** x: NHWC (B, R, R, channels). Attention capture is opt-in: captured
   * tensors survive the tidy and must be disposed by the caller. */
  forward(x: tf.Tensor4D, training = false, captureAttention = false): ForwardResult {
    const { heads, hidden: d, layers } = this.config;
    const dh = d / heads;
    const attentions: tf.Tensor4D[] = [];
    const logits = tf.tidy(() => {
      const b = x.shape[0];
      const p = this.config.patchSize;
      const g = this.grid;
      const c = this.config.channels;
      const patches = x
        .reshape([b, g, p, g, p, c])
        .transpose([0, 1, 3, 2, 4, 5])
        .reshape([b * g * g, p * p * c]);
      let tok = patches
        .matMul(this.vars["patch/kernel"] as tf.Variable<tf.Rank.R2>)
        .add(this.vars["patch/bias"])
        .reshape([b, g * g, d]);
      const cls = this.vars["cls"].tile([b, 1, 1]);
      tok = tf.concat([cls, tok], 1).add(this.vars["pos"]);
      tok = this.drop(tok, training);

      for (let l = 0; l < layers; l++) {
        const normed = layerNorm(tok, this.vars[`b${l}/ln1/g`], this.vars[`b${l}/ln1/b`]);
        const qkv = normed
          .reshape([b * this.tokens, d])
          .matMul(this.vars[`b${l}/qkv/w`] as tf.Variable<tf.Rank.R2>)
          .add(this.vars[`b${l}/qkv/b`])
          .reshape([b, this.tokens, 3, heads, dh])
          .transpose([2, 0, 3, 1, 4]); // (3, B, H, N, dh)
        const [q, k, v] = tf.unstack(qkv, 0);
        const scores = tf.matMul(q, k, false, true).div(Math.sqrt(dh));
        const attn = tf.softmax(scores, -1) as tf.Tensor4D; // (B, H, N, N)
        if (captureAttention) attentions.push(tf.keep(attn.clone()));
        let ctx = tf
          .matMul(this.drop(attn, training), v)
          .transpose([0, 2, 1, 3])
          .reshape([b * this.tokens, d])
          .matMul(this.vars[`b${l}/proj/w`] as tf.Variable<tf.Rank.R2>)
          .add(this.vars[`b${l}/proj/b`])
          .reshape([b, this.tokens, d]);
        tok = tok.add(this.drop(ctx, training));

        const normed2 = layerNorm(tok, this.vars[`b${l}/ln2/g`], this.vars[`b${l}/ln2/b`]);
        let h = normed2
          .reshape([b * this.tokens, d])
          .matMul(this.vars[`b${l}/mlp1/w`] as tf.Variable<tf.Rank.R2>)
          .add(this.vars[`b${l}/mlp1/b`]);
        h = gelu(h)
          .matMul(this.vars[`b${l}/mlp2/w`] as tf.Variable<tf.Rank.R2>)
          .add(this.vars[`b${l}/mlp2/b`])
          .reshape([b, this.tokens, d]);
        tok = tok.add(this.drop(h, training));
      }

      const final = layerNorm(tok, this.vars["head/ln/g"], this.vars["head/ln/b"]);
      const clsOut = final.slice([0, 0, 0], [b, 1, d]).reshape([b, d]);
      return clsOut
        .matMul(this.vars["head/w"] as tf.Variable<tf.Rank.R2>)
        .add(this.vars["head/b"]) as tf.Tensor2D;
    });
    return { logits, attentions };
  }

  /** Snapshot all weights to plain arrays (for best-epoch restore). */
  async snapshot(): Promise<Record<string, Float32Array>> {
    const out: Record<string, Float32Array> = {};
    for (const [name, v] of Object.entries(this.vars)) {
      out[name] = new Float32Array(await v.data());
    }
    return out;
  }

  restore(weights: Record<string, Float32Array>): void {
    for (const [name, v] of Object.entries(this.vars)) {
      v.assign(tf.tensor(weights[name], v.shape as number[]));
    }
  }

  dispose(): void {
    for (const v of Object.values(this.vars)) v.dispose();
  }
}
