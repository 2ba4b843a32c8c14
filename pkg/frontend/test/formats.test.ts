import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterAll, describe, expect, it } from "vitest";

import { readCohortManifest, readTfat, readTfim, readTfpm, writeTfat } from "../src/formats.js";

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "tfvit-"));
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }));

function writeTfimFixture(file: string, channels: number, r: number, feature: string, statCode: number, pixels: number[]): void {
  const buf = Buffer.alloc(33 + pixels.length * 4);
  buf.write("TFIM", 0, "ascii");
  buf.writeUInt32LE(1, 4);
  buf.writeUInt32LE(channels, 8);
  buf.writeUInt32LE(r, 12);
  buf.write(feature.padEnd(16), 16, "ascii");
  buf.writeUInt8(statCode, 32);
  pixels.forEach((v, i) => buf.writeFloatLE(v, 33 + i * 4));
  fs.writeFileSync(file, buf);
}

describe("TFIM reader", () => {
  it("parses header and channel-major pixels", () => {
    const file = path.join(tmp, "a.tfim");
    const pixels = Array.from({ length: 2 * 2 * 2 }, (_, i) => i / 4);
    writeTfimFixture(file, 2, 2, "mean_fa", 0, pixels);
    const img = readTfim(file);
    expect(img.channels).toBe(2);
    expect(img.resolution).toBe(2);
    expect(img.feature).toBe("mean_fa");
    expect(img.stat).toBe("mean");
    expect(Array.from(img.pixels)).toEqual(pixels);
  });

  it("rejects bad magic and truncation", () => {
    const bad = path.join(tmp, "bad.tfim");
    fs.writeFileSync(bad, Buffer.from("JUNKJUNKJUNK"));
    expect(() => readTfim(bad)).toThrow(/magic/);
    const short = path.join(tmp, "short.tfim");
    writeTfimFixture(short, 1, 2, "mean_fa", 0, [1, 2, 3, 4]);
    fs.writeFileSync(short, fs.readFileSync(short).subarray(0, 40));
    expect(() => readTfim(short)).toThrow(/truncated/);
  });
});

describe("TFPM reader", () => {
  it("parses per-channel fiber->pixel triples", () => {
    const file = path.join(tmp, "a.tfpm");
    const buf = Buffer.alloc(12 + 4 + 2 * 12 + 4);
    buf.write("TFPM", 0, "ascii");
    buf.writeUInt32LE(1, 4);
    buf.writeUInt32LE(2, 8);
    let off = 12;
    buf.writeUInt32LE(2, off); off += 4;
    for (const [fid, r, c] of [[7, 1, 2], [9, 3, 0]]) {
      buf.writeUInt32LE(fid, off); buf.writeUInt32LE(r, off + 4); buf.writeUInt32LE(c, off + 8);
      off += 12;
    }
    buf.writeUInt32LE(0, off);
    fs.writeFileSync(file, buf);
    const maps = readTfpm(file);
    expect(maps.length).toBe(2);
    expect(maps[0].get(7)).toEqual([1, 2]);
    expect(maps[0].get(9)).toEqual([3, 0]);
    expect(maps[1].size).toBe(0);
  });
});

describe("TFAT round trip", () => {
  it("writes and reads back identically", () => {
    const file = path.join(tmp, "a.tfat");
    const weights = new Float32Array(2 * 3 * 5 * 5).map(() => Math.random());
    const stack = { layers: 2, heads: 3, tokens: 5, grid: 2, resolution: 8, weights };
    writeTfat(file, stack);
    const back = readTfat(file);
    expect(back.layers).toBe(2);
    expect(back.heads).toBe(3);
    expect(back.tokens).toBe(5);
    expect(back.grid).toBe(2);
    expect(back.resolution).toBe(8);
    expect(Array.from(back.weights)).toEqual(Array.from(weights));
  });

  it("rejects length mismatch", () => {
    expect(() =>
      writeTfat(path.join(tmp, "x.tfat"), {
        layers: 1, heads: 1, tokens: 3, grid: 1, resolution: 4,
        weights: new Float32Array(5),
      }),
    ).toThrow(/mismatch/);
  });
});

describe("cohort manifest", () => {
  it("parses the tractoform cohort schema", () => {
    const file = path.join(tmp, "cohort.json");
    fs.writeFileSync(
      file,
      JSON.stringify({
        format: "tractoform-cohort",
        version: 1,
        snr: 1.0,
        decrease_fraction: 0.2,
        tract_ids: [0, 1, 2],
        groups: { G1: ["G1_000"], G2: ["G2_000"] },
        subjects: [
          { id: "G1_000", group: "G1", file: "G1_000.tfbd" },
          { id: "G2_000", group: "G2", file: "G2_000.tfbd" },
        ],
        seeds: { root: 1 },
      }),
    );
    const m = readCohortManifest(file);
    expect(m.subjects.length).toBe(2);
    expect(m.tractIds).toEqual([0, 1, 2]);
    expect(m.decreaseFraction).toBe(0.2);
  });

  it("rejects non-cohort json", () => {
    const file = path.join(tmp, "other.json");
    fs.writeFileSync(file, "{}");
    expect(() => readCohortManifest(file)).toThrow(/manifest/);
  });
});
