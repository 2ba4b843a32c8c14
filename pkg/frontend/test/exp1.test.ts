/**
 * Desk-scale Exp-1 acceptance (gated: RUN_EXP1=1 npm run exp1).
 *
 * Generates the synthetic cohort and images with the primary tractoform CLI,
 * trains the ensemble through this package's CLI, and closes the loop with
 * the primary `interpret` command on the exported group-wise attention.
 *
 * criterion 8: ensemble on the 20%-decrease cohort (40+40 subjects,
 *              augmentation count=20, fraction=0.8) reaches subject-level
 *              accuracy >= 0.95 in < 30 min of training.
 * criterion 9: group-wise attention of correctly-classified G2 subjects
 *              back-projects to fibers, >= 50% of them in the modified tract.
 * criterion 10: on a harder 10%-decrease cohort, mean CV accuracy with
 *              augmentation >= accuracy without.
 */

import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as path from "node:path";

import { describe, expect, it } from "vitest";

import { readCohortManifest } from "../src/formats.js";

const CACHE = process.env.EXP1_CACHE ?? "/tmp/tractoform-exp1-cache";
const FRONTEND = path.resolve(path.dirname(new URL(import.meta.url).pathname), "..");
const CLI = path.join(FRONTEND, "dist", "cli.js");
const R = 80;

const MODEL_ARGS = [
  "--patch", "20", "--layers", "1", "--heads", "4", "--hidden", "64",
  "--dropout", "0.2", "--patience", "6", "--epochs", "40",
];

function tracto(...args: string[]): string {
  return execFileSync("tractoform", args, { encoding: "utf-8" });
}

function vitCli(...args: string[]): string {
  return execFileSync("node", [CLI, ...args], { encoding: "utf-8", stdio: ["ignore", "pipe", "inherit"] });
}

interface CohortSpec {
  name: string;
  decrease: number;
  subjectsPerGroup: number;
  augCount: number;
  seed: number;
}

/** Cohort + per-subject full and augmented images, cached across runs. */
function ensureData(spec: CohortSpec): { cohortDir: string; imagesDir: string } {
  const root = path.join(CACHE, spec.name);
  const cohortDir = path.join(root, "cohort");
  const imagesDir = path.join(root, "images");
  const doneFlag = path.join(root, ".complete");
  if (fs.existsSync(doneFlag)) return { cohortDir, imagesDir };
  fs.rmSync(root, { recursive: true, force: true });
  fs.mkdirSync(imagesDir, { recursive: true });

  tracto("synth", "--out-dir", cohortDir, "--bundles", "5", "--fibers-per-bundle", "200",
    "--subjects-per-group", String(spec.subjectsPerGroup), "--snr", "1",
    "--decrease", String(spec.decrease), "--jitter", "4", "--seed", String(spec.seed));
  tracto("space", "--bundle", path.join(cohortDir, "base.tfbd"), "--out", path.join(root, "space.tfes"),
    "--sigma", "30", "--k", "5", "--landmarks", "300", "--seed", String(spec.seed + 1));

  const manifest = readCohortManifest(path.join(cohortDir, "cohort.json"));
  manifest.subjects.forEach((s, i) => {
    tracto("image", "--bundle", path.join(cohortDir, s.file), "--space", path.join(root, "space.tfes"),
      "--out", path.join(imagesDir, `${s.id}.tfim`), "--resolution", String(R));
    tracto("augment", "--bundle", path.join(cohortDir, s.file), "--space", path.join(root, "space.tfes"),
      "--out-dir", path.join(imagesDir, "aug", s.id), "--resolution", String(R),
      "--count", String(spec.augCount), "--fraction", "0.8", "--seed", String(spec.seed + 2 + i));
  });
  fs.writeFileSync(doneFlag, "");
  return { cohortDir, imagesDir };
}

function report(criterion: string, ok: boolean, detail: string): void {
  console.log(`[${ok ? "PASS" : "FAIL"}] ${criterion} (${detail})`);
}

describe("Exp-1 classification and interpretation", () => {
  const spec20: CohortSpec = { name: "decrease20", decrease: 0.2, subjectsPerGroup: 40, augCount: 20, seed: 7000 };
  const runDir = path.join(CACHE, "runs", "exp1-ensemble");

  it("criterion 8: ensemble accuracy >= 0.95 in < 30 min", () => {
    const { imagesDir, cohortDir } = ensureData(spec20);
    fs.rmSync(runDir, { recursive: true, force: true });
    vitCli("train", "--images", imagesDir, "--manifest", path.join(cohortDir, "cohort.json"),
      "--mode", "ensemble", "--resolution", String(R), "--seed", "7100",
      "--out", runDir, "--export-attention", "g2-correct", ...MODEL_ARGS);
    const folds = JSON.parse(fs.readFileSync(path.join(runDir, "folds.json"), "utf-8"));
    const ok = folds.mean_accuracy >= 0.95 && folds.train_seconds < 1800;
    report("criterion 8: Exp-1 ensemble classification",
      ok, `mean accuracy ${folds.mean_accuracy.toFixed(3)}, ${Math.round(folds.train_seconds)}s`);
    expect(ok).toBe(true);
  }, 3_600_000);

  it("criterion 9: >= 50% of discriminative fibers belong to the modified tract", () => {
    const { imagesDir, cohortDir } = ensureData(spec20);
    const manifest = readCohortManifest(path.join(cohortDir, "cohort.json"));
    const attDir = path.join(runDir, "attention");
    const leftStacks = fs.readdirSync(attDir).filter((f) => f.endsWith("_c0.tfat"))
      .map((f) => path.join(attDir, f));
    expect(leftStacks.length).toBeGreaterThan(0);

    const g2 = manifest.subjects.find((s) => s.group === "G2")!;
    const interpDir = path.join(CACHE, "runs", "exp1-interp");
    fs.rmSync(interpDir, { recursive: true, force: true });
    tracto("interpret", "--attention", ...leftStacks,
      "--image", path.join(imagesDir, `${g2.id}.tfim`),
      "--map", path.join(imagesDir, `${g2.id}.tfpm`),
      "--bundle", path.join(cohortDir, g2.file),
      "--out-dir", interpDir, "--channel", "left", "--pgm");
    const doc = JSON.parse(fs.readFileSync(path.join(interpDir, "discriminative.json"), "utf-8"));
    const tract = new Set(manifest.tractIds);
    const fibers: number[] = doc.fiber_ids;
    const inTract = fibers.filter((f) => tract.has(f)).length;
    const frac = fibers.length ? inTract / fibers.length : 0;
    const ok = fibers.length > 0 && frac >= 0.5;
    report("criterion 9: discriminative-fiber recovery",
      ok, `${inTract}/${fibers.length} fibers in the modified tract`);
    expect(ok).toBe(true);
  }, 600_000);

  it("criterion 10: augmentation does not hurt on a 10% cohort", () => {
    const spec10: CohortSpec = { name: "decrease10", decrease: 0.1, subjectsPerGroup: 10, augCount: 20, seed: 8000 };
    const { imagesDir, cohortDir } = ensureData(spec10);
    const accs: Record<string, number> = {};
    for (const aug of [true, false]) {
      const out = path.join(CACHE, "runs", `exp1-aug-${aug}`);
      fs.rmSync(out, { recursive: true, force: true });
      vitCli("train", "--images", imagesDir, "--manifest", path.join(cohortDir, "cohort.json"),
        "--mode", "ensemble", "--resolution", String(R), "--seed", "8100",
        "--out", out, ...(aug ? [] : ["--no-augment"]), ...MODEL_ARGS);
      accs[String(aug)] = JSON.parse(fs.readFileSync(path.join(out, "folds.json"), "utf-8")).mean_accuracy;
    }
    const ok = accs["true"] >= accs["false"];
    report("criterion 10: augmentation effect direction",
      ok, `with ${accs["true"].toFixed(3)} vs without ${accs["false"].toFixed(3)}`);
    expect(ok).toBe(true);
  }, 3_600_000);
});
