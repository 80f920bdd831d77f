import * as fs from "node:fs";
import * as path from "node:path";
import { spawnSync } from "node:child_process";
import { Rng } from "./prng.js";
import { writePpm } from "./ppm.js";
import { layerEntry, loadManifest, readFeatureMaps, resolveImagePaths } from "./manifest.js";
import { TrainConfig, TRAIN_DEFAULTS, trainAdversary } from "./train.js";
import { reconstructImages } from "./reconstruct.js";

/**
 * Reconstructability oracle: for each requested layer it produces candidate
 * reconstructions (by training the adversary, or via a stub for pipeline
 * smoke tests), scores them against the source images with the external
 * similarity CLI, and maintains the per-layer scores file the partition
 * finder consumes.
 */

export type ReconstructionMode = "cgan" | "identity" | "noise";

export interface OracleConfig {
  mapsDir: string;
  layers: number[];
  /** Working directory for reconstructions, pairs files, and checkpoints. */
  outDir: string;
  /** The scores CSV (created or updated in place). */
  scoresFile: string;
  mode: ReconstructionMode;
  epochs: number;
  batchSize: number;
  learningRate: number;
  seed: number;
  imagesDir?: string;
  /** Command prefix for the similarity scorer, e.g. ["blindfold"]. */
  ssimCommand: string[];
  onEpoch?: TrainConfig["onEpoch"];
}

export const ORACLE_DEFAULTS = {
  mode: "cgan" as ReconstructionMode,
  ssimCommand: ["blindfold"],
  ...TRAIN_DEFAULTS,
};

export interface OracleRecord {
  layerIndex: number;
  score: number;
}

/** Invokes `<cmd> ssim --pairs <file>` and parses the trailing mean line. */
export function scorePairs(ssimCommand: string[], pairsFile: string): number {
  const [cmd, ...prefix] = ssimCommand;
  const args = [...prefix, "ssim", "--pairs", pairsFile];
  const run = spawnSync(cmd, args, { encoding: "utf8" });
  if (run.error) throw new Error(`cannot run ${cmd}: ${run.error.message}`);
  if (run.status !== 0) {
    throw new Error(`${cmd} ${args.join(" ")} exited ${run.status}: ${run.stderr.trim()}`);
  }
  const match = /mean\s+(-?\d+\.\d+)\s*$/.exec(run.stdout.trim());
  if (!match) throw new Error(`no mean score in scorer output: ${JSON.stringify(run.stdout.slice(-200))}`);
  return Number(match[1]);
}

export function readScoresFile(file: string): OracleRecord[] {
  if (!fs.existsSync(file)) return [];
  const lines = fs.readFileSync(file, "utf8").trim().split(/\r?\n/);
  if (lines[0] !== "layer_index,score") throw new Error(`${file}: unexpected header ${lines[0]}`);
  return lines.slice(1).map((line) => {
    const [layer, score] = line.split(",");
    return { layerIndex: Number(layer), score: Number(score) };
  });
}

export function writeScoresFile(file: string, records: OracleRecord[]): void {
  const sorted = [...records].sort((a, b) => a.layerIndex - b.layerIndex);
  const rows = sorted.map((r) => `${r.layerIndex},${r.score.toFixed(6)}`);
  fs.mkdirSync(path.dirname(path.resolve(file)), { recursive: true });
  fs.writeFileSync(file, "layer_index,score\n" + rows.join("\n") + "\n");
}

function mergeScores(file: string, fresh: OracleRecord[]): OracleRecord[] {
  const merged = new Map<number, number>();
  for (const r of readScoresFile(file)) merged.set(r.layerIndex, r.score);
  for (const r of fresh) merged.set(r.layerIndex, r.score);
  return [...merged.entries()].map(([layerIndex, score]) => ({ layerIndex, score }));
}

async function reconstructForLayer(config: OracleConfig, layerIndex: number, reconDir: string): Promise<string[]> {
  const manifest = loadManifest(config.mapsDir);
  const references = resolveImagePaths(config.mapsDir, manifest, config.imagesDir);
  fs.mkdirSync(reconDir, { recursive: true });

  if (config.mode === "identity") {
    // perfect "reconstruction": the reference images themselves
    return references.map((ref) => {
      const out = path.join(reconDir, path.basename(ref));
      fs.copyFileSync(ref, out);
      return out;
    });
  }
  if (config.mode === "noise") {
    // structureless baseline: uniform noise of the reference image's shape
    const rng = new Rng(config.seed + layerIndex);
    const size = imageSideLength(references[0]);
    return references.map((ref) => {
      const data = new Float32Array(size * size * 3);
      for (let i = 0; i < data.length; i++) data[i] = rng.next();
      const out = path.join(reconDir, path.basename(ref));
      writePpm(out, { width: size, height: size, data });
      return out;
    });
  }

  const trained = await trainAdversary({
    mapsDir: config.mapsDir,
    layerIndex,
    epochs: config.epochs,
    batchSize: config.batchSize,
    learningRate: config.learningRate,
    seed: config.seed,
    imagesDir: config.imagesDir,
    checkpointDir: path.join(config.outDir, `checkpoint_${layerIndex}`),
    onEpoch: config.onEpoch,
  });
  const entry = layerEntry(trained.manifest, layerIndex);
  const maps = readFeatureMaps(config.mapsDir, entry);
  const outPaths = await reconstructImages(trained.generator, maps, trained.imagePaths, {
    outDir: reconDir,
    seed: config.seed,
  });
  trained.generator.dispose();
  return outPaths;
}

function imageSideLength(reference: string): number {
  // noise stub needs the image side length; read it from the reference header
  const raw = fs.readFileSync(reference);
  const m = /^P6\s+(\d+)\s+(\d+)/.exec(raw.subarray(0, 32).toString("ascii"));
  if (!m) throw new Error(`${reference}: not a binary PPM`);
  return Number(m[1]);
}

export async function oracleRun(config: OracleConfig): Promise<OracleRecord[]> {
  if (config.layers.length === 0) throw new Error("no layers requested");
  const manifest = loadManifest(config.mapsDir);
  for (const layer of config.layers) layerEntry(manifest, layer); // fail fast
  const references = resolveImagePaths(config.mapsDir, manifest, config.imagesDir);

  const fresh: OracleRecord[] = [];
  for (const layerIndex of config.layers) {
    const reconDir = path.join(config.outDir, `recon_${layerIndex}`);
    const candidates = await reconstructForLayer(config, layerIndex, reconDir);
    const pairsFile = path.join(config.outDir, `pairs_${layerIndex}.txt`);
    const lines = references.map((ref, i) => `${path.resolve(ref)} ${path.resolve(candidates[i])}`);
    fs.mkdirSync(config.outDir, { recursive: true });
    fs.writeFileSync(pairsFile, lines.join("\n") + "\n");
    const score = scorePairs(config.ssimCommand, pairsFile);
    fresh.push({ layerIndex, score });
  }
  const merged = mergeScores(config.scoresFile, fresh);
  writeScoresFile(config.scoresFile, merged);
  return fresh;
}
