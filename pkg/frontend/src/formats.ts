/**
 * Readers/writers for the tractoform binary interchange formats
 * (little-endian): TFIM images, TFPM fiber->pixel maps, TFAT attention
 * stacks, and the cohort.json manifest.
 */

import * as fs from "node:fs";

export interface TfimImage {
  channels: number;
  resolution: number;
  feature: string; // "mean_fa" | "mean_md" | "" (count)
  stat: string;
  /** channel-major pixels, length channels * resolution * resolution */
  pixels: Float32Array;
}

export interface CohortSubject {
  id: string;
  group: "G1" | "G2";
  file: string;
}

export interface CohortManifest {
  subjects: CohortSubject[];
  tractIds: number[];
  snr: number;
  decreaseFraction: number;
}

export interface AttentionStack {
  layers: number;
  heads: number;
  tokens: number;
  grid: number;
  resolution: number;
  /** (layers, heads, tokens, tokens) row-major */
  weights: Float32Array;
}

const STATS = ["mean", "max", "min", "count"];

function checkMagic(buf: Buffer, magic: string, path: string): void {
  if (buf.length < 4 || buf.toString("ascii", 0, 4) !== magic) {
    throw new Error(`${path}: not a ${magic} file (bad magic)`);
  }
}

export function readTfim(path: string): TfimImage {
  const buf = fs.readFileSync(path);
  checkMagic(buf, "TFIM", path);
  const version = buf.readUInt32LE(4);
  if (version !== 1) throw new Error(`${path}: unsupported version ${version}`);
  const channels = buf.readUInt32LE(8);
  const resolution = buf.readUInt32LE(12);
  const feature = buf.toString("ascii", 16, 32).trimEnd();
  const statCode = buf.readUInt8(32);
  if (statCode >= STATS.length) throw new Error(`${path}: unknown stat code ${statCode}`);
  const count = channels * resolution * resolution;
  const expected = 33 + count * 4;
  if (buf.length !== expected) throw new Error(`${path}: truncated TFIM file`);
  const pixels = new Float32Array(count);
  for (let i = 0; i < count; i++) pixels[i] = buf.readFloatLE(33 + i * 4);
  return { channels, resolution, feature, stat: STATS[statCode], pixels };
}

/** Per channel: fiber id -> [row, col]. */
export function readTfpm(path: string): Array<Map<number, [number, number]>> {
  const buf = fs.readFileSync(path);
  checkMagic(buf, "TFPM", path);
  const version = buf.readUInt32LE(4);
  if (version !== 1) throw new Error(`${path}: unsupported version ${version}`);
  const channels = buf.readUInt32LE(8);
  const maps: Array<Map<number, [number, number]>> = [];
  let off = 12;
  for (let c = 0; c < channels; c++) {
    const n = buf.readUInt32LE(off);
    off += 4;
    const map = new Map<number, [number, number]>();
    for (let i = 0; i < n; i++) {
      const fid = buf.readUInt32LE(off);
      const row = buf.readUInt32LE(off + 4);
      const col = buf.readUInt32LE(off + 8);
      map.set(fid, [row, col]);
      off += 12;
    }
    maps.push(map);
  }
  return maps;
}

export function writeTfat(path: string, stack: AttentionStack): void {
  const { layers, heads, tokens, grid, resolution, weights } = stack;
  if (weights.length !== layers * heads * tokens * tokens) {
    throw new Error("attention weights length mismatch");
  }
  const header = Buffer.alloc(28);
  header.write("TFAT", 0, "ascii");
  header.writeUInt32LE(1, 4);
  header.writeUInt32LE(layers, 8);
  header.writeUInt32LE(heads, 12);
  header.writeUInt32LE(tokens, 16);
  header.writeUInt32LE(grid, 20);
  header.writeUInt32LE(resolution, 24);
  const payload = Buffer.from(weights.buffer, weights.byteOffset, weights.byteLength);
  fs.writeFileSync(path, Buffer.concat([header, payload]));
}

export function readTfat(path: string): AttentionStack {
  const buf = fs.readFileSync(path);
  checkMagic(buf, "TFAT", path);
  const version = buf.readUInt32LE(4);
  if (version !== 1) throw new Error(`${path}: unsupported version ${version}`);
  const layers = buf.readUInt32LE(8);
  const heads = buf.readUInt32LE(12);
  const tokens = buf.readUInt32LE(16);
  const grid = buf.readUInt32LE(20);
  const resolution = buf.readUInt32LE(24);
  const count = layers * heads * tokens * tokens;
  if (buf.length !== 28 + count * 4) throw new Error(`${path}: truncated TFAT file`);
  const weights = new Float32Array(count);
  for (let i = 0; i < count; i++) weights[i] = buf.readFloatLE(28 + i * 4);
  return { layers, heads, tokens, grid, resolution, weights };
}

export function readCohortManifest(path: string): CohortManifest {
  const doc = JSON.parse(fs.readFileSync(path, "utf-8"));
  if (doc.format !== "tractoform-cohort" || doc.version !== 1) {
    throw new Error(`${path}: not a tractoform cohort manifest`);
  }
  const subjects: CohortSubject[] = doc.subjects.map((s: any) => {
    if (s.group !== "G1" && s.group !== "G2") {
      throw new Error(`${path}: unknown group ${s.group}`);
    }
    return { id: String(s.id), group: s.group, file: String(s.file) };
  });
  return {
    subjects,
    tractIds: doc.tract_ids.map((x: any) => Number(x)),
    snr: Number(doc.snr),
    decreaseFraction: Number(doc.decrease_fraction),
  };
}
