import * as fs from "node:fs";
import * as path from "node:path";
import { spawnSync } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { oracleRun, readScoresFile } from "../src/oracle.js";
import { generateDataset } from "../src/scenes.js";
import { setupBackend } from "../src/ops.js";
import { cleanup, tmpdir } from "./fixtures.js";

/**
 * End-to-end integration across the component boundary: the inference
 * simulator exports feature maps for every layer of its small 3-layer
 * CNN, this adversary trains briefly on each layer and scores the
 * reconstructions, and the simulator's partition finder consumes the
 * scores file and picks a boundary.
 */

const dir = tmpdir("adv-pipeline-");
const imagesDir = path.join(dir, "images");
const mapsDir = path.join(dir, "maps");
const workDir = path.join(dir, "work");
const scoresFile = path.join(workDir, "scores.csv");
const THRESHOLD = 0.2;

function runSimulator(args: string[]): { status: number | null; stdout: string; stderr: string } {
  const run = spawnSync("blindfold", args, { encoding: "utf8" });
  if (run.error) throw run.error;
  return { status: run.status, stdout: run.stdout, stderr: run.stderr };
}

beforeAll(async () => {
  await setupBackend();
}, 60_000);
afterAll(() => cleanup(dir));

describe("export-maps -> oracle -> find-partition", () => {
  it("completes end-to-end and picks a sound partition", async () => {
    const names = generateDataset({ dir: imagesDir, count: 24, size: 32, seed: 5 });

    const exported = runSimulator([
      "export-maps",
      "--model",
      "toy3",
      "--out",
      mapsDir,
      "--layers",
      "1,2,3,4",
      "--seed",
      "0",
      "--images",
      ...names.map((n) => path.join(imagesDir, n)),
    ]);
    expect(exported.status, exported.stderr).toBe(0);
    expect(fs.existsSync(path.join(mapsDir, "manifest.json"))).toBe(true);

    const records = await oracleRun({
      mapsDir,
      layers: [1, 2, 3, 4],
      outDir: workDir,
      scoresFile,
      mode: "cgan",
      epochs: 2,
      batchSize: 12,
      learningRate: 2e-4,
      seed: 7,
      imagesDir,
      ssimCommand: ["blindfold"],
    });
    expect(records.map((r) => r.layerIndex)).toEqual([1, 2, 3, 4]);
    for (const record of records) {
      expect(record.score).toBeGreaterThan(-1);
      expect(record.score).toBeLessThan(1);
    }

    const found = runSimulator(["find-partition", "--scores", scoresFile, "--threshold", String(THRESHOLD)]);
    expect(found.status, found.stderr).toBe(0);
    const match = /partition (\d+)/.exec(found.stdout);
    expect(match, found.stdout).not.toBeNull();
    const partition = Number(match![1]);

    // the boundary is only trustworthy if the chosen layer and the two
    // after it all score below threshold
    const scores = new Map(readScoresFile(scoresFile).map((r) => [r.layerIndex, r.score]));
    for (const layer of [partition, partition + 1, partition + 2]) {
      expect(scores.get(layer), `layer ${layer}`).toBeDefined();
      expect(scores.get(layer)!, `layer ${layer}`).toBeLessThan(THRESHOLD);
    }
  }, 1_800_000);
});
