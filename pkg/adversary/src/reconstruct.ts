import * as fs from "node:fs";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";
import { Rng } from "./prng.js";
import { writePpm } from "./ppm.js";
import { FeatureMaps } from "./manifest.js";
import { Generator } from "./model.js";
import { setupBackend } from "./ops.js";

export interface ReconstructOptions {
  outDir: string;
  /** Seeds the noise input; fixed seed + fixed maps => identical images. */
  seed: number;
  /** Records per generator pass; normalization uses batch statistics, so this is part of the recipe. */
  chunkSize?: number;
}

/**
 * Runs the generator over every record in the feature-map file and writes
 * one PPM per record, named after the source image when a name is known
 * (map_000.ppm otherwise), preserving the manifest's record order.
 */
export async function reconstructImages(
  generator: Generator,
  maps: FeatureMaps,
  imageNames: string[] | null,
  options: ReconstructOptions,
): Promise<string[]> {
  await setupBackend();
  const condShape = maps.shape.slice(1);
  const want = generator.condShape.join("x");
  if (condShape.join("x") !== want) {
    throw new Error(`maps are ${condShape.join("x")}, generator expects ${want}`);
  }
  const n = maps.shape[0];
  if (imageNames && imageNames.length !== n) {
    throw new Error(`${imageNames.length} names for ${n} records`);
  }
  fs.mkdirSync(options.outDir, { recursive: true });

  const size = generator.imageSize;
  const bottleneck = generator.bottleneck;
  const condLen = condShape.reduce((a, b) => a * b, 1);
  const chunkSize = options.chunkSize ?? 16;
  const rng = new Rng(options.seed);
  // one draw per record, in record order, independent of chunking
  const noise = rng.fillGaussian(new Float32Array(n * bottleneck * bottleneck));

  const outPaths: string[] = [];
  for (let start = 0; start < n; start += chunkSize) {
    const count = Math.min(chunkSize, n - start);
    const cond = tf.tensor(
      maps.data.subarray(start * condLen, (start + count) * condLen),
      [count, ...condShape],
    );
    const z = tf.tensor(
      noise.subarray(start * bottleneck * bottleneck, (start + count) * bottleneck * bottleneck),
      [count, bottleneck, bottleneck, 1],
    ) as tf.Tensor4D;
    const batch = generator.apply(cond, z);
    const pixels = (await batch.data()) as Float32Array;
    tf.dispose([cond, z, batch]);
    const stride = size * size * 3;
    for (let i = 0; i < count; i++) {
      const name = imageNames ? path.basename(imageNames[start + i]) : `map_${String(start + i).padStart(3, "0")}.ppm`;
      const file = path.join(options.outDir, name);
      writePpm(file, { width: size, height: size, data: pixels.subarray(i * stride, (i + 1) * stride) });
      outPaths.push(file);
    }
  }
  return outPaths;
}
