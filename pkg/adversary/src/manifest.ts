import * as fs from "node:fs";
import * as path from "node:path";

/**
 * Reader for the feature-map interchange directory the inference simulator
 * exports: a manifest.json naming the model, batch and layers, plus one
 * binary tensor file per layer.
 *
 * Tensor file layout (little-endian): "BFFM" magic, uint8 version (1),
 * uint32 layer index, uint8 rank, rank x uint32 dims, then the float32
 * payload in C order.
 */

export interface LayerEntry {
  index: number;
  name: string;
  kind: string;
  shape: number[];
  file: string;
}

export interface Manifest {
  format: string;
  version: number;
  model: string;
  scale: number;
  modulus: number;
  batch: number;
  images: string[] | null;
  layers: LayerEntry[];
}

export interface FeatureMaps {
  layerIndex: number;
  shape: number[];
  data: Float32Array;
}

const MAGIC = "BFFM";
const FORMAT = "blindfold-feature-maps";

export function loadManifest(dir: string): Manifest {
  const file = path.join(dir, "manifest.json");
  const parsed = JSON.parse(fs.readFileSync(file, "utf8")) as Manifest;
  if (parsed.format !== FORMAT || parsed.version !== 1) {
    throw new Error(`${file}: unsupported manifest ${parsed.format} v${parsed.version}`);
  }
  if (!Number.isInteger(parsed.batch) || parsed.batch < 1) {
    throw new Error(`${file}: bad batch ${parsed.batch}`);
  }
  if (!Array.isArray(parsed.layers) || parsed.layers.length === 0) {
    throw new Error(`${file}: no layers`);
  }
  for (const layer of parsed.layers) {
    if (!Number.isInteger(layer.index) || typeof layer.file !== "string" || !Array.isArray(layer.shape)) {
      throw new Error(`${file}: malformed layer entry ${JSON.stringify(layer)}`);
    }
    if (layer.shape[0] !== parsed.batch) {
      throw new Error(`${file}: layer ${layer.index} leading dim ${layer.shape[0]} != batch ${parsed.batch}`);
    }
  }
  return parsed;
}

export function layerEntry(manifest: Manifest, layerIndex: number): LayerEntry {
  const entry = manifest.layers.find((l) => l.index === layerIndex);
  if (!entry) {
    const have = manifest.layers.map((l) => l.index).join(", ");
    throw new Error(`layer ${layerIndex} not in manifest (have ${have})`);
  }
  return entry;
}

export function readFeatureMaps(dir: string, entry: LayerEntry): FeatureMaps {
  const file = path.join(dir, entry.file);
  const raw = fs.readFileSync(file);
  if (raw.length < 10 || raw.subarray(0, 4).toString("ascii") !== MAGIC) {
    throw new Error(`${file}: bad magic`);
  }
  const version = raw.readUInt8(4);
  if (version !== 1) throw new Error(`${file}: unsupported version ${version}`);
  const layerIndex = raw.readUInt32LE(5);
  const rank = raw.readUInt8(9);
  const headerLen = 10 + 4 * rank;
  if (raw.length < headerLen) throw new Error(`${file}: truncated header`);
  const shape: number[] = [];
  for (let i = 0; i < rank; i++) shape.push(raw.readUInt32LE(10 + 4 * i));
  const count = shape.reduce((a, b) => a * b, 1);
  if (raw.length !== headerLen + 4 * count) {
    throw new Error(`${file}: expected ${headerLen + 4 * count} bytes, found ${raw.length}`);
  }
  if (layerIndex !== entry.index || shape.join("x") !== entry.shape.join("x")) {
    throw new Error(
      `${file}: header (layer ${layerIndex}, ${shape.join("x")}) disagrees with manifest ` +
        `(layer ${entry.index}, ${entry.shape.join("x")})`,
    );
  }
  // the header is not 4-byte aligned, so view a fresh copy of the payload
  const aligned = Buffer.alloc(4 * count);
  raw.copy(aligned, 0, headerLen);
  return { layerIndex, shape, data: new Float32Array(aligned.buffer, 0, count) };
}

/**
 * Resolves the manifest's image references to readable paths: absolute
 * entries stand, others are tried against imagesDir (when given), the
 * manifest directory, and the working directory.
 */
export function resolveImagePaths(dir: string, manifest: Manifest, imagesDir?: string): string[] {
  if (!manifest.images || manifest.images.length === 0) {
    throw new Error("manifest carries no source-image references");
  }
  return manifest.images.map((name) => {
    if (path.isAbsolute(name)) return name;
    const candidates = [
      ...(imagesDir ? [path.join(imagesDir, path.basename(name)), path.join(imagesDir, name)] : []),
      path.join(dir, name),
      name,
    ];
    const hit = candidates.find((c) => fs.existsSync(c));
    if (!hit) throw new Error(`cannot locate source image ${name} (tried ${candidates.join(", ")})`);
    return hit;
  });
}
