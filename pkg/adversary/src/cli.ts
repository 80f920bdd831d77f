#!/usr/bin/env node
import * as fs from "node:fs";
import * as path from "node:path";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { generateDataset } from "./scenes.js";
import { layerEntry, loadManifest, readFeatureMaps } from "./manifest.js";
import { ORACLE_DEFAULTS, oracleRun, ReconstructionMode } from "./oracle.js";
import { loadCheckpoint, TRAIN_DEFAULTS, trainAdversary } from "./train.js";
import { reconstructImages } from "./reconstruct.js";

/**
 * Command-line front end. Every command accepts --config FILE (a JSON
 * object of the same option names); explicit flags win over config values,
 * which win over defaults.
 */

interface FileConfig {
  [key: string]: unknown;
}

function loadConfigFile(file: string | undefined): FileConfig {
  if (!file) return {};
  return JSON.parse(fs.readFileSync(file, "utf8")) as FileConfig;
}

/** Explicit flag > config-file value > fallback. */
function pick<T>(flag: T | undefined, config: FileConfig, key: string, fallback: T): T {
  if (flag !== undefined) return flag;
  if (key in config) return config[key] as T;
  return fallback;
}

function parseLayers(spec: string): number[] {
  const layers = spec.split(",").map((s) => Number(s.trim()));
  if (layers.length === 0 || layers.some((l) => !Number.isInteger(l) || l < 1)) {
    throw new Error(`bad layer list ${JSON.stringify(spec)}`);
  }
  return layers;
}

async function main(): Promise<void> {
  await yargs(hideBin(process.argv))
    .scriptName("blindfold-adversary")
    .option("config", { type: "string", describe: "JSON file of option defaults" })
    .option("seed", { type: "number", describe: "deterministic seed" })
    .command(
      "gen-dataset",
      "synthesize a structured-scene image dataset",
      (y) =>
        y
          .option("out", { type: "string", demandOption: true, describe: "output directory" })
          .option("count", { type: "number", describe: "number of images" })
          .option("size", { type: "number", describe: "square image side length" }),
      (argv) => {
        const cfg = loadConfigFile(argv.config);
        const names = generateDataset({
          dir: argv.out,
          count: pick(argv.count, cfg, "count", 96),
          size: pick(argv.size, cfg, "size", 32),
          seed: pick(argv.seed, cfg, "seed", 1),
        });
        process.stdout.write(`wrote ${names.length} images to ${argv.out}\n`);
      },
    )
    .command(
      "train",
      "train the reconstruction adversary on one exported layer",
      (y) =>
        y
          .option("maps", { type: "string", demandOption: true, describe: "feature-map export directory" })
          .option("layer", { type: "number", demandOption: true, describe: "layer index to condition on" })
          .option("epochs", { type: "number" })
          .option("batch", { type: "number" })
          .option("lr", { type: "number", describe: "learning rate" })
          .option("images-dir", { type: "string", describe: "where the manifest's source images live" })
          .option("checkpoint", { type: "string", demandOption: true, describe: "checkpoint output directory" }),
      async (argv) => {
        const cfg = loadConfigFile(argv.config);
        const trained = await trainAdversary({
          mapsDir: argv.maps,
          layerIndex: argv.layer,
          epochs: pick(argv.epochs, cfg, "epochs", TRAIN_DEFAULTS.epochs),
          batchSize: pick(argv.batch, cfg, "batchSize", TRAIN_DEFAULTS.batchSize),
          learningRate: pick(argv.lr, cfg, "learningRate", TRAIN_DEFAULTS.learningRate),
          seed: pick(argv.seed, cfg, "seed", TRAIN_DEFAULTS.seed),
          imagesDir: pick(argv.imagesDir, cfg, "imagesDir", undefined as string | undefined),
          checkpointDir: argv.checkpoint,
          onEpoch: (l) =>
            process.stdout.write(
              `epoch ${l.epoch}  d ${l.discriminatorLoss.toFixed(3)}  g ${l.generatorLoss.toFixed(3)}\n`,
            ),
        });
        trained.generator.dispose();
        process.stdout.write(`checkpoint written to ${argv.checkpoint}\n`);
      },
    )
    .command(
      "reconstruct",
      "run a trained generator over exported maps and write PPM images",
      (y) =>
        y
          .option("checkpoint", { type: "string", demandOption: true })
          .option("maps", { type: "string", demandOption: true })
          .option("layer", { type: "number", describe: "layer index (default: the checkpoint's)" })
          .option("out", { type: "string", demandOption: true }),
      async (argv) => {
        const cfg = loadConfigFile(argv.config);
        const { generator, meta } = await loadCheckpoint(argv.checkpoint);
        const manifest = loadManifest(argv.maps);
        const entry = layerEntry(manifest, argv.layer ?? meta.layerIndex);
        const maps = readFeatureMaps(argv.maps, entry);
        const outPaths = await reconstructImages(generator, maps, manifest.images, {
          outDir: argv.out,
          seed: pick(argv.seed, cfg, "seed", meta.seed),
        });
        generator.dispose();
        process.stdout.write(`wrote ${outPaths.length} reconstructions to ${argv.out}\n`);
      },
    )
    .command(
      "oracle-run",
      "train, reconstruct, and score layers; update the scores CSV",
      (y) =>
        y
          .option("maps", { type: "string", demandOption: true })
          .option("layers", { type: "string", demandOption: true, describe: "comma-separated layer indices" })
          .option("out", { type: "string", demandOption: true, describe: "working directory" })
          .option("scores", { type: "string", describe: "scores CSV path (default <out>/scores.csv)" })
          .option("mode", { type: "string", choices: ["cgan", "identity", "noise"] as const })
          .option("epochs", { type: "number" })
          .option("batch", { type: "number" })
          .option("lr", { type: "number" })
          .option("images-dir", { type: "string" })
          .option("ssim-cmd", { type: "string", describe: "similarity scorer command prefix" }),
      async (argv) => {
        const cfg = loadConfigFile(argv.config);
        const records = await oracleRun({
          mapsDir: argv.maps,
          layers: parseLayers(argv.layers),
          outDir: argv.out,
          scoresFile: argv.scores ?? path.join(argv.out, "scores.csv"),
          mode: pick(argv.mode as ReconstructionMode | undefined, cfg, "mode", ORACLE_DEFAULTS.mode),
          epochs: pick(argv.epochs, cfg, "epochs", ORACLE_DEFAULTS.epochs),
          batchSize: pick(argv.batch, cfg, "batchSize", ORACLE_DEFAULTS.batchSize),
          learningRate: pick(argv.lr, cfg, "learningRate", ORACLE_DEFAULTS.learningRate),
          seed: pick(argv.seed, cfg, "seed", ORACLE_DEFAULTS.seed),
          imagesDir: pick(argv.imagesDir, cfg, "imagesDir", undefined as string | undefined),
          ssimCommand: pick(argv.ssimCmd, cfg, "ssimCommand", undefined as string | undefined)?.toString().split(/\s+/) ?? ORACLE_DEFAULTS.ssimCommand,
        });
        for (const r of records) process.stdout.write(`layer ${r.layerIndex}  mean ssim ${r.score.toFixed(6)}\n`);
      },
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      process.stderr.write(`${msg ?? err?.message}\n`);
      process.exit(2);
    })
    .parseAsync();
}

void main();
