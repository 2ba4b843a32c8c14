/** Classification metrics; the positive class is the patient group (G2, label 1). */

export interface Metrics {
  accuracy: number;
  f1: number;
}

export function metrics(predictions: number[], labels: number[]): Metrics {
  if (predictions.length === 0 || predictions.length !== labels.length) {
    throw new Error("predictions and labels must be non-empty and equal length");
  }
  let tp = 0;
  let fp = 0;
  let fn = 0;
  let correct = 0;
  for (let i = 0; i < labels.length; i++) {
    if (predictions[i] === labels[i]) correct++;
    if (predictions[i] === 1 && labels[i] === 1) tp++;
    if (predictions[i] === 1 && labels[i] === 0) fp++;
    if (predictions[i] === 0 && labels[i] === 1) fn++;
  }
  const precision = tp + fp > 0 ? tp / (tp + fp) : 0;
  const recall = tp + fn > 0 ? tp / (tp + fn) : 0;
  const f1 = precision + recall > 0 ? (2 * precision * recall) / (precision + recall) : 0;
  return { accuracy: correct / labels.length, f1 };
}

/** Ensemble prediction: elementwise mean of per-model logit vectors. */
export function ensembleLogits(logitsPerModel: number[][]): number[] {
  if (logitsPerModel.length === 0) throw new Error("no logits to ensemble");
  const n = logitsPerModel[0].length;
  const out = new Array(n).fill(0);
  for (const logits of logitsPerModel) {
    if (logits.length !== n) throw new Error("logit length mismatch");
    for (let i = 0; i < n; i++) out[i] += logits[i];
  }
  return out.map((v) => v / logitsPerModel.length);
}

export function argmax(values: number[]): number {
  let best = 0;
  for (let i = 1; i < values.length; i++) if (values[i] > values[best]) best = i;
  return best;
}
