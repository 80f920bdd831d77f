import * as fs from "node:fs";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";
import { Rng } from "./prng.js";
import { readPpm } from "./ppm.js";
import { FeatureMaps, layerEntry, loadManifest, Manifest, readFeatureMaps, resolveImagePaths } from "./manifest.js";
import { Discriminator, Generator } from "./model.js";
import { bceWithLogits, setupBackend } from "./ops.js";

export interface TrainConfig {
  /** Directory holding manifest.json and the exported tensor files. */
  mapsDir: string;
  /** Which exported layer conditions the generator. */
  layerIndex: number;
  epochs: number;
  batchSize: number;
  learningRate: number;
  seed: number;
  /** Override for locating the manifest's source images. */
  imagesDir?: string;
  /** When set, the generator checkpoint and loss curve are written here. */
  checkpointDir?: string;
  /** Per-epoch progress callback (losses are epoch means). */
  onEpoch?: (losses: EpochLosses) => void;
}

export const TRAIN_DEFAULTS = {
  epochs: 40,
  batchSize: 12,
  learningRate: 2e-4,
  seed: 7,
} as const;

export interface EpochLosses {
  epoch: number;
  discriminatorLoss: number;
  generatorLoss: number;
}

export interface TrainedAdversary {
  generator: Generator;
  lossCurve: EpochLosses[];
  manifest: Manifest;
  condition: FeatureMaps;
  /** Resolved source-image paths, in manifest order. */
  imagePaths: string[];
  imageSize: number;
}

function checkPositive(config: TrainConfig): void {
  const fields: Array<[string, number]> = [
    ["epochs", config.epochs],
    ["batchSize", config.batchSize],
    ["learningRate", config.learningRate],
    ["layerIndex", config.layerIndex],
  ];
  for (const [name, value] of fields) {
    if (!(value > 0)) throw new Error(`${name} must be positive, got ${value}`);
  }
}

interface Dataset {
  manifest: Manifest;
  condition: FeatureMaps;
  condLen: number;
  images: Float32Array; // [n, size, size, 3] flattened
  imagePaths: string[];
  imageSize: number;
}

function loadDataset(config: TrainConfig): Dataset {
  const manifest = loadManifest(config.mapsDir);
  const entry = layerEntry(manifest, config.layerIndex);
  const condition = readFeatureMaps(config.mapsDir, entry);
  const imagePaths = resolveImagePaths(config.mapsDir, manifest, config.imagesDir);
  if (imagePaths.length !== manifest.batch) {
    throw new Error(`${imagePaths.length} source images for batch of ${manifest.batch}`);
  }
  const first = readPpm(imagePaths[0]);
  if (first.width !== first.height) throw new Error(`images must be square, got ${first.width}x${first.height}`);
  const size = first.width;
  const stride = size * size * 3;
  const images = new Float32Array(manifest.batch * stride);
  images.set(first.data, 0);
  for (let i = 1; i < imagePaths.length; i++) {
    const img = readPpm(imagePaths[i]);
    if (img.width !== size || img.height !== size) {
      throw new Error(`${imagePaths[i]} is ${img.width}x${img.height}, expected ${size}x${size}`);
    }
    images.set(img.data, i * stride);
  }
  const condLen = condition.shape.slice(1).reduce((a, b) => a * b, 1);
  return { manifest, condition, condLen, images, imagePaths, imageSize: size };
}

/**
 * Adversarial training: the discriminator maximizes agreement with real
 * (image, condition) pairs and disagreement with generated ones; the
 * generator minimizes the discriminator's ability to tell — the standard
 * two-player min-max objective, alternated one step each per batch.
 */
export async function trainAdversary(config: TrainConfig): Promise<TrainedAdversary> {
  checkPositive(config);
  await setupBackend();
  const dataset = loadDataset(config);
  const { condition, condLen, images, imageSize } = dataset;
  const n = dataset.manifest.batch;
  const condShape = condition.shape.slice(1);

  const rng = new Rng(config.seed);
  const generator = new Generator(condShape, imageSize, rng);
  const discriminator = new Discriminator(condShape, imageSize, rng);
  const generatorOpt = tf.train.adam(config.learningRate, 0.5);
  const discriminatorOpt = tf.train.adam(config.learningRate, 0.5);

  const imgStride = imageSize * imageSize * 3;
  const bottleneck = generator.bottleneck;
  const condBatch = (idx: number[]): tf.Tensor => {
    const out = new Float32Array(idx.length * condLen);
    idx.forEach((k, i) => out.set(condition.data.subarray(k * condLen, (k + 1) * condLen), i * condLen));
    return tf.tensor(out, [idx.length, ...condShape]);
  };
  const imageBatch = (idx: number[]): tf.Tensor4D => {
    const out = new Float32Array(idx.length * imgStride);
    idx.forEach((k, i) => out.set(images.subarray(k * imgStride, (k + 1) * imgStride), i * imgStride));
    return tf.tensor(out, [idx.length, imageSize, imageSize, 3]) as tf.Tensor4D;
  };
  const noiseBatch = (count: number): tf.Tensor4D => {
    const out = rng.fillGaussian(new Float32Array(count * bottleneck * bottleneck));
    return tf.tensor(out, [count, bottleneck, bottleneck, 1]) as tf.Tensor4D;
  };

  const steps = Math.max(1, Math.floor(n / config.batchSize));
  const lossCurve: EpochLosses[] = [];
  for (let epoch = 1; epoch <= config.epochs; epoch++) {
    const order = rng.shuffle([...Array(n).keys()]);
    let dSum = 0;
    let gSum = 0;
    for (let s = 0; s < steps; s++) {
      const idx = order.slice(s * config.batchSize, (s + 1) * config.batchSize);
      if (idx.length === 0) break;
      const cond = condBatch(idx);
      const real = imageBatch(idx);
      const zD = noiseBatch(idx.length);
      const zG = noiseBatch(idx.length);
      const dLoss = discriminatorOpt.minimize(
        () => {
          const fake = generator.apply(cond, zD);
          return tf.add(
            bceWithLogits(discriminator.logits(real, cond), 1),
            bceWithLogits(discriminator.logits(fake, cond), 0),
          ) as tf.Scalar;
        },
        true,
        discriminator.store.list,
      )!;
      const gLoss = generatorOpt.minimize(
        () => bceWithLogits(discriminator.logits(generator.apply(cond, zG), cond), 1),
        true,
        generator.store.list,
      )!;
      dSum += dLoss.dataSync()[0];
      gSum += gLoss.dataSync()[0];
      tf.dispose([cond, real, zD, zG, dLoss, gLoss]);
    }
    const losses: EpochLosses = {
      epoch,
      discriminatorLoss: dSum / steps,
      generatorLoss: gSum / steps,
    };
    lossCurve.push(losses);
    config.onEpoch?.(losses);
  }
  discriminator.dispose();

  const trained: TrainedAdversary = {
    generator,
    lossCurve,
    manifest: dataset.manifest,
    condition,
    imagePaths: dataset.imagePaths,
    imageSize,
  };
  if (config.checkpointDir) await saveCheckpoint(config.checkpointDir, trained, config);
  return trained;
}

interface CheckpointMeta {
  condShape: number[];
  imageSize: number;
  layerIndex: number;
  seed: number;
  tensorShapes: number[][];
  lossCurve: EpochLosses[];
}

export async function saveCheckpoint(dir: string, trained: TrainedAdversary, config: TrainConfig): Promise<void> {
  fs.mkdirSync(dir, { recursive: true });
  const { shapes, values } = await trained.generator.store.serialize();
  const meta: CheckpointMeta = {
    condShape: trained.generator.condShape,
    imageSize: trained.generator.imageSize,
    layerIndex: config.layerIndex,
    seed: config.seed,
    tensorShapes: shapes,
    lossCurve: trained.lossCurve,
  };
  fs.writeFileSync(path.join(dir, "generator.json"), JSON.stringify(meta, null, 2));
  fs.writeFileSync(path.join(dir, "generator.bin"), Buffer.from(values.buffer, 0, values.byteLength));
  const rows = trained.lossCurve.map(
    (l) => `${l.epoch},${l.discriminatorLoss.toFixed(6)},${l.generatorLoss.toFixed(6)}`,
  );
  fs.writeFileSync(path.join(dir, "losses.csv"), "epoch,discriminator_loss,generator_loss\n" + rows.join("\n") + "\n");
}

export async function loadCheckpoint(dir: string): Promise<{ generator: Generator; meta: CheckpointMeta }> {
  await setupBackend();
  const meta = JSON.parse(fs.readFileSync(path.join(dir, "generator.json"), "utf8")) as CheckpointMeta;
  const raw = fs.readFileSync(path.join(dir, "generator.bin"));
  const aligned = Buffer.alloc(raw.length);
  raw.copy(aligned);
  const values = new Float32Array(aligned.buffer, 0, raw.length / 4);
  // the Rng only seeds initial weights, which restore() overwrites
  const generator = new Generator(meta.condShape, meta.imageSize, new Rng(meta.seed));
  generator.store.restore(meta.tensorShapes, values);
  return { generator, meta };
}
