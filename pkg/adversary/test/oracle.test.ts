import * as fs from "node:fs";
import * as path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ORACLE_DEFAULTS, oracleRun, readScoresFile, scorePairs, writeScoresFile } from "../src/oracle.js";
import { generateDataset } from "../src/scenes.js";
import { Rng } from "../src/prng.js";
import { cleanup, tmpdir, writeMapsDir } from "./fixtures.js";

/**
 * These tests exercise the real similarity scorer CLI — the oracle's whole
 * job is to drive that external surface, so stubbing it out would test
 * nothing.
 */

const dir = tmpdir("adv-oracle-");
const mapsDir = path.join(dir, "maps");
const imagesDir = path.join(dir, "images");

beforeAll(() => {
  const names = generateDataset({ dir: imagesDir, count: 4, size: 32, seed: 51 });
  const rng = new Rng(52);
  const layers = [1, 2].map((index) => {
    const shape = [4, 8, 8, 2];
    const data = new Float32Array(shape.reduce((a, b) => a * b, 1));
    for (let i = 0; i < data.length; i++) data[i] = rng.uniform(0, 2);
    return { index, name: `c${index}`, kind: "conv", shape, data };
  });
  writeMapsDir(
    mapsDir,
    names.map((n) => path.join(imagesDir, n)),
    layers,
  );
});
afterAll(() => cleanup(dir));

const baseConfig = {
  mapsDir,
  outDir: path.join(dir, "work"),
  scoresFile: path.join(dir, "work", "scores.csv"),
  epochs: 1,
  batchSize: 4,
  learningRate: 2e-4,
  seed: 53,
  ssimCommand: ORACLE_DEFAULTS.ssimCommand,
};

describe("oracle stubs against the real scorer", () => {
  it("identity reconstruction scores a mean of exactly 1", async () => {
    const records = await oracleRun({ ...baseConfig, layers: [1], mode: "identity" });
    expect(records).toEqual([{ layerIndex: 1, score: 1 }]);
  });

  it("noise reconstruction scores near zero", async () => {
    const records = await oracleRun({ ...baseConfig, layers: [2], mode: "noise" });
    expect(records.length).toBe(1);
    expect(Math.abs(records[0].score)).toBeLessThan(0.1);
  });

  it("maintains one row per layer across incremental runs", async () => {
    const scores = readScoresFile(baseConfig.scoresFile);
    expect(scores.map((r) => r.layerIndex)).toEqual([1, 2]);
    expect(scores[0].score).toBe(1);
    expect(Math.abs(scores[1].score)).toBeLessThan(0.1);

    // re-running a layer overwrites its row rather than appending
    await oracleRun({ ...baseConfig, layers: [1], mode: "noise" });
    const updated = readScoresFile(baseConfig.scoresFile);
    expect(updated.map((r) => r.layerIndex)).toEqual([1, 2]);
    expect(Math.abs(updated[0].score)).toBeLessThan(0.1);
  });

  it("writes pairs files and per-layer reconstruction directories", () => {
    expect(fs.existsSync(path.join(baseConfig.outDir, "pairs_1.txt"))).toBe(true);
    expect(fs.existsSync(path.join(baseConfig.outDir, "recon_1"))).toBe(true);
    const pairs = fs.readFileSync(path.join(baseConfig.outDir, "pairs_1.txt"), "utf8").trim().split("\n");
    expect(pairs.length).toBe(4);
    for (const line of pairs) {
      const [ref, cand] = line.split(" ");
      expect(fs.existsSync(ref)).toBe(true);
      expect(fs.existsSync(cand)).toBe(true);
    }
  });

  it("fails fast on unknown layers", async () => {
    await expect(oracleRun({ ...baseConfig, layers: [9], mode: "identity" })).rejects.toThrow(/layer 9/);
    await expect(oracleRun({ ...baseConfig, layers: [], mode: "identity" })).rejects.toThrow(/no layers/);
  });
});

describe("scores file format", () => {
  it("round-trips records sorted by layer", () => {
    const file = path.join(dir, "scores-roundtrip.csv");
    writeScoresFile(file, [
      { layerIndex: 3, score: 0.25 },
      { layerIndex: 1, score: 0.875 },
    ]);
    expect(fs.readFileSync(file, "utf8")).toBe("layer_index,score\n1,0.875000\n3,0.250000\n");
    expect(readScoresFile(file)).toEqual([
      { layerIndex: 1, score: 0.875 },
      { layerIndex: 3, score: 0.25 },
    ]);
  });

  it("rejects foreign headers", () => {
    const file = path.join(dir, "foreign.csv");
    fs.writeFileSync(file, "layer,ssim\n1,0.5\n");
    expect(() => readScoresFile(file)).toThrow(/unexpected header/);
  });
});

describe("scorePairs", () => {
  it("propagates scorer failures with context", () => {
    const pairs = path.join(dir, "nopairs.txt");
    fs.writeFileSync(pairs, "/nonexistent/a.ppm /nonexistent/b.ppm\n");
    expect(() => scorePairs(["blindfold"], pairs)).toThrow(/exited/);
    expect(() => scorePairs(["definitely-not-a-command-7x"], pairs)).toThrow(/cannot run/);
  });
});
