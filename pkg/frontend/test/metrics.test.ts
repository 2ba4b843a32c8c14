import { describe, expect, it } from "vitest";

import { argmax, ensembleLogits, metrics } from "../src/metrics.js";

describe("metrics", () => {
  it("all correct gives accuracy 1 and f1 1", () => {
    const m = metrics([0, 1, 1, 0], [0, 1, 1, 0]);
    expect(m.accuracy).toBe(1);
    expect(m.f1).toBe(1);
  });

  it("matches hand confusion-matrix arithmetic (TP=3 FP=1 FN=1 TN=5)", () => {
    const labels = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
    const preds = [1, 1, 1, 0, 1, 0, 0, 0, 0, 0];
    const m = metrics(preds, labels);
    expect(m.accuracy).toBeCloseTo(0.8, 12);
    expect(m.f1).toBeCloseTo(0.75, 12);
  });

  it("f1 is 0 by convention when there are no positives anywhere", () => {
    const m = metrics([0, 0, 0], [0, 0, 0]);
    expect(m.f1).toBe(0);
    expect(m.accuracy).toBe(1);
  });

  it("rejects empty or mismatched input", () => {
    expect(() => metrics([], [])).toThrow();
    expect(() => metrics([1], [1, 0])).toThrow();
  });
});

describe("ensembleLogits", () => {
  it("averages logit vectors elementwise", () => {
    const out = ensembleLogits([
      [1.0, -1.0],
      [0.0, 0.0],
      [2.0, 0.0],
    ]);
    expect(out[0]).toBeCloseTo(1.0, 12);
    expect(out[1]).toBeCloseTo(-1 / 3, 12);
  });

  it("single model passes through", () => {
    expect(ensembleLogits([[0.5, 0.25]])).toEqual([0.5, 0.25]);
  });

  it("argmax picks the larger logit", () => {
    expect(argmax([0.2, 0.9])).toBe(1);
    expect(argmax([3, -1])).toBe(0);
  });
});
