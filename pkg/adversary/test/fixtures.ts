import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

/** Writes one tensor file in the feature-map interchange layout. */
export function writeBffm(file: string, layerIndex: number, shape: number[], data: Float32Array): void {
  const rank = shape.length;
  const header = Buffer.alloc(10 + 4 * rank);
  header.write("BFFM", 0, "ascii");
  header.writeUInt8(1, 4);
  header.writeUInt32LE(layerIndex, 5);
  header.writeUInt8(rank, 9);
  shape.forEach((d, i) => header.writeUInt32LE(d, 10 + 4 * i));
  fs.writeFileSync(file, Buffer.concat([header, Buffer.from(data.buffer, data.byteOffset, data.byteLength)]));
}

export interface FixtureLayer {
  index: number;
  name: string;
  kind: string;
  shape: number[];
  data: Float32Array;
}

/** Builds a complete synthetic feature-map export directory. */
export function writeMapsDir(dir: string, images: string[] | null, layers: FixtureLayer[]): void {
  fs.mkdirSync(dir, { recursive: true });
  const entries = layers.map((layer) => {
    const file = `layer_${String(layer.index).padStart(2, "0")}.bffm`;
    writeBffm(path.join(dir, file), layer.index, layer.shape, layer.data);
    return { index: layer.index, name: layer.name, kind: layer.kind, shape: layer.shape, file };
  });
  const manifest = {
    format: "blindfold-feature-maps",
    version: 1,
    model: "fixture",
    scale: 64,
    modulus: 16777213,
    batch: layers[0].shape[0],
    images,
    layers: entries,
  };
  fs.writeFileSync(path.join(dir, "manifest.json"), JSON.stringify(manifest, null, 2));
}

export function tmpdir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

export function cleanup(dir: string): void {
  fs.rmSync(dir, { recursive: true, force: true });
}
