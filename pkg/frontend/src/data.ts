/**
 * Dataset assembly from a cohort manifest plus a directory of TFIM images.
 *
 * Expected layout (produced with the tractoform CLI):
 *   images/<subject>.tfim            full-tractography image (+ .tfpm)
 *   images/aug/<subject>/augment_XXX.tfim   augmented subsets (optional)
 *
 * Per-feature intensity normalization: FA is already in [0,1] and passes
 * through, MD is scaled by 1e3, fiber counts are log1p-compressed.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { CohortManifest, readTfim, TfimImage } from "./formats.js";
import { Rng } from "./rng.js";

export interface SubjectData {
  id: string;
  group: "G1" | "G2";
  label: 0 | 1;
  /** normalized full image, channel-major (C * R * R) */
  full: Float32Array;
  /** normalized augmented images */
  augmented: Float32Array[];
}

export interface Dataset {
  subjects: SubjectData[];
  channels: number;
  resolution: number;
  feature: string;
}

export function normalizeImage(img: TfimImage): Float32Array {
  const out = new Float32Array(img.pixels.length);
  if (img.stat === "count" || img.feature === "") {
    for (let i = 0; i < out.length; i++) out[i] = Math.log1p(img.pixels[i]);
  } else if (img.feature === "mean_md") {
    for (let i = 0; i < out.length; i++) out[i] = img.pixels[i] * 1e3;
  } else {
    out.set(img.pixels);
  }
  return out;
}

export function loadDataset(manifest: CohortManifest, imagesDir: string): Dataset {
  const subjects: SubjectData[] = [];
  let channels = 0;
  let resolution = 0;
  let feature = "";
  for (const s of manifest.subjects) {
    const full = readTfim(path.join(imagesDir, `${s.id}.tfim`));
    if (channels === 0) {
      channels = full.channels;
      resolution = full.resolution;
      feature = full.feature;
    } else if (full.channels !== channels || full.resolution !== resolution) {
      throw new Error(`subject ${s.id}: image shape differs from the rest of the cohort`);
    }
    const augmented: Float32Array[] = [];
    const augDir = path.join(imagesDir, "aug", s.id);
    if (fs.existsSync(augDir)) {
      const files = fs.readdirSync(augDir).filter((f) => f.endsWith(".tfim")).sort();
      for (const f of files) {
        const img = readTfim(path.join(augDir, f));
        if (img.channels !== channels || img.resolution !== resolution) {
          throw new Error(`subject ${s.id}: augmented image shape mismatch (${f})`);
        }
        augmented.push(normalizeImage(img));
      }
    }
    subjects.push({
      id: s.id,
      group: s.group,
      label: s.group === "G2" ? 1 : 0,
      full: normalizeImage(full),
      augmented,
    });
  }
  return { subjects, channels, resolution, feature };
}

/**
 * Stratified subject-level folds: each group's subjects are shuffled with the
 * seeded RNG and dealt round-robin, so every fold holds both classes and all
 * augmented images of a subject stay on its side of the split.
 */
export function makeFolds(subjects: SubjectData[], folds: number, rng: Rng): number[][] {
  if (folds < 2) throw new Error("need at least 2 folds");
  const byGroup: Record<string, number[]> = { G1: [], G2: [] };
  subjects.forEach((s, i) => byGroup[s.group].push(i));
  const assignment: number[][] = Array.from({ length: folds }, () => []);
  for (const group of ["G1", "G2"] as const) {
    const order = rng.shuffle([...byGroup[group]]);
    order.forEach((subjIdx, k) => assignment[k % folds].push(subjIdx));
  }
  for (const fold of assignment) {
    const counts = [0, 0];
    for (const i of fold) counts[subjects[i].label] += 1;
    if (counts[0] < 2 || counts[1] < 2) {
      throw new Error("need >= 2 subjects per class per fold");
    }
  }
  return assignment.map((fold) => fold.sort((a, b) => a - b));
}

/** Extract one channel plane (or all channels) as an NHWC sample buffer. */
export function toSample(
  image: Float32Array,
  channels: number,
  resolution: number,
  channel: number | "all",
): Float32Array {
  const plane = resolution * resolution;
  if (channel === "all") {
    // channel-major (C,R,R) -> NHWC (R,R,C)
    const out = new Float32Array(plane * channels);
    for (let c = 0; c < channels; c++) {
      for (let p = 0; p < plane; p++) out[p * channels + c] = image[c * plane + p];
    }
    return out;
  }
  return image.subarray(channel * plane, (channel + 1) * plane).slice();
}
