import * as fs from "node:fs";
import * as path from "node:path";
import { Rng } from "./prng.js";
import { Image, writePpm } from "./ppm.js";

/**
 * Synthetic structured scenes: a two-color gradient background, two filled
 * rectangles, and a filled disc, all randomly colored and placed. Structured
 * enough for a windowed similarity score to be meaningful, cheap enough to
 * synthesize by the hundred.
 */
export function synthesizeScene(rng: Rng, size: number): Image {
  const data = new Float32Array(size * size * 3);
  const c0 = [rng.next(), rng.next(), rng.next()];
  const c1 = [rng.next(), rng.next(), rng.next()];
  const horizontal = rng.next() < 0.5;
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const t = (horizontal ? x : y) / (size - 1);
      for (let ch = 0; ch < 3; ch++) {
        data[(y * size + x) * 3 + ch] = c0[ch] * (1 - t) + c1[ch] * t;
      }
    }
  }
  for (let r = 0; r < 2; r++) {
    const w = 6 + rng.int(size / 2);
    const h = 6 + rng.int(size / 2);
    const x0 = rng.int(size - w);
    const y0 = rng.int(size - h);
    const col = [rng.next(), rng.next(), rng.next()];
    for (let y = y0; y < y0 + h; y++) {
      for (let x = x0; x < x0 + w; x++) {
        for (let ch = 0; ch < 3; ch++) data[(y * size + x) * 3 + ch] = col[ch];
      }
    }
  }
  const radius = 3 + rng.next() * (size / 5);
  const cx = radius + rng.next() * (size - 2 * radius);
  const cy = radius + rng.next() * (size - 2 * radius);
  const col = [rng.next(), rng.next(), rng.next()];
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      if ((x - cx) ** 2 + (y - cy) ** 2 <= radius ** 2) {
        for (let ch = 0; ch < 3; ch++) data[(y * size + x) * 3 + ch] = col[ch];
      }
    }
  }
  return { width: size, height: size, data };
}

export interface DatasetOptions {
  dir: string;
  count: number;
  size: number;
  seed: number;
}

/** Writes count scenes as img_000.ppm … and returns their file names in order. */
export function generateDataset(options: DatasetOptions): string[] {
  const { dir, count, size, seed } = options;
  if (count < 1 || size < 16) throw new Error("need count >= 1 and size >= 16");
  fs.mkdirSync(dir, { recursive: true });
  const rng = new Rng(seed);
  const names: string[] = [];
  for (let i = 0; i < count; i++) {
    const name = `img_${String(i).padStart(3, "0")}.ppm`;
    writePpm(path.join(dir, name), synthesizeScene(rng, size));
    names.push(name);
  }
  return names;
}
