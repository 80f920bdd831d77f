import * as fs from "node:fs";
import * as path from "node:path";
import { afterAll, describe, expect, it } from "vitest";
import { layerEntry, loadManifest, readFeatureMaps, resolveImagePaths } from "../src/manifest.js";
import { Rng } from "../src/prng.js";
import { cleanup, tmpdir, writeBffm, writeMapsDir } from "./fixtures.js";

const dir = tmpdir("adv-manifest-");
afterAll(() => cleanup(dir));

function randomMaps(seed: number, shape: number[]): Float32Array {
  const rng = new Rng(seed);
  const data = new Float32Array(shape.reduce((a, b) => a * b, 1));
  for (let i = 0; i < data.length; i++) data[i] = rng.uniform(-2, 2);
  return data;
}

describe("feature-map interchange", () => {
  it("round-trips tensors exactly through the binary layout", () => {
    const mapsDir = path.join(dir, "roundtrip");
    const data = randomMaps(1, [3, 4, 4, 2]);
    writeMapsDir(mapsDir, null, [{ index: 1, name: "c1", kind: "conv", shape: [3, 4, 4, 2], data }]);
    const manifest = loadManifest(mapsDir);
    expect(manifest.batch).toBe(3);
    const maps = readFeatureMaps(mapsDir, layerEntry(manifest, 1));
    expect(maps.layerIndex).toBe(1);
    expect(maps.shape).toEqual([3, 4, 4, 2]);
    expect(maps.data).toEqual(data);
  });

  it("reads vector layers (rank 2)", () => {
    const mapsDir = path.join(dir, "vector");
    const data = randomMaps(2, [5, 10]);
    writeMapsDir(mapsDir, null, [{ index: 4, name: "prob", kind: "softmax", shape: [5, 10], data }]);
    const maps = readFeatureMaps(mapsDir, layerEntry(loadManifest(mapsDir), 4));
    expect(maps.shape).toEqual([5, 10]);
    expect(maps.data).toEqual(data);
  });

  it("rejects corrupt tensor files", () => {
    const mapsDir = path.join(dir, "corrupt");
    const shape = [2, 2, 2, 1];
    writeMapsDir(mapsDir, null, [{ index: 1, name: "c1", kind: "conv", shape, data: randomMaps(3, shape) }]);
    const manifest = loadManifest(mapsDir);
    const entry = layerEntry(manifest, 1);
    const file = path.join(mapsDir, entry.file);
    const good = fs.readFileSync(file);

    fs.writeFileSync(file, Buffer.concat([Buffer.from("XXXX"), good.subarray(4)]));
    expect(() => readFeatureMaps(mapsDir, entry)).toThrow(/magic/);

    const v2 = Buffer.from(good);
    v2.writeUInt8(2, 4);
    fs.writeFileSync(file, v2);
    expect(() => readFeatureMaps(mapsDir, entry)).toThrow(/version/);

    fs.writeFileSync(file, good.subarray(0, good.length - 4));
    expect(() => readFeatureMaps(mapsDir, entry)).toThrow(/bytes/);

    fs.writeFileSync(file, good);
    expect(readFeatureMaps(mapsDir, entry).data).toEqual(randomMaps(3, shape));
  });

  it("rejects header/manifest disagreement", () => {
    const mapsDir = path.join(dir, "disagree");
    const shape = [2, 3, 3, 1];
    writeMapsDir(mapsDir, null, [{ index: 1, name: "c1", kind: "conv", shape, data: randomMaps(4, shape) }]);
    const manifest = loadManifest(mapsDir);
    const entry = layerEntry(manifest, 1);
    // rewrite the tensor under a different layer index
    writeBffm(path.join(mapsDir, entry.file), 9, shape, randomMaps(4, shape));
    expect(() => readFeatureMaps(mapsDir, entry)).toThrow(/disagrees/);
  });

  it("rejects malformed manifests", () => {
    const mapsDir = path.join(dir, "badmanifest");
    const shape = [2, 2, 2, 1];
    writeMapsDir(mapsDir, null, [{ index: 1, name: "c1", kind: "conv", shape, data: randomMaps(5, shape) }]);
    const file = path.join(mapsDir, "manifest.json");
    const manifest = JSON.parse(fs.readFileSync(file, "utf8"));

    fs.writeFileSync(file, JSON.stringify({ ...manifest, format: "something-else" }));
    expect(() => loadManifest(mapsDir)).toThrow(/unsupported manifest/);

    fs.writeFileSync(file, JSON.stringify({ ...manifest, batch: 7 }));
    expect(() => loadManifest(mapsDir)).toThrow(/leading dim/);

    fs.writeFileSync(file, JSON.stringify({ ...manifest, layers: [] }));
    expect(() => loadManifest(mapsDir)).toThrow(/no layers/);
  });

  it("names missing layers in errors", () => {
    const mapsDir = path.join(dir, "missing");
    const shape = [1, 2, 2, 1];
    writeMapsDir(mapsDir, null, [{ index: 2, name: "p1", kind: "pool", shape, data: randomMaps(6, shape) }]);
    expect(() => layerEntry(loadManifest(mapsDir), 5)).toThrow(/layer 5 not in manifest \(have 2\)/);
  });

  it("resolves image references against the manifest directory and overrides", () => {
    const mapsDir = path.join(dir, "imgs");
    const shape = [2, 2, 2, 1];
    fs.mkdirSync(path.join(dir, "elsewhere"), { recursive: true });
    fs.mkdirSync(mapsDir, { recursive: true });
    fs.writeFileSync(path.join(mapsDir, "a.ppm"), "P6\n1 1\n255\n\0\0\0");
    fs.writeFileSync(path.join(dir, "elsewhere", "b.ppm"), "P6\n1 1\n255\n\0\0\0");
    writeMapsDir(mapsDir, ["a.ppm", "b.ppm"], [{ index: 1, name: "c1", kind: "conv", shape, data: randomMaps(7, shape) }]);
    const manifest = loadManifest(mapsDir);
    const resolved = resolveImagePaths(mapsDir, manifest, path.join(dir, "elsewhere"));
    expect(resolved[0]).toBe(path.join(mapsDir, "a.ppm")); // falls back to manifest dir
    expect(resolved[1]).toBe(path.join(dir, "elsewhere", "b.ppm"));
    expect(() => resolveImagePaths(mapsDir, { ...manifest, images: ["nowhere.ppm"] })).toThrow(/cannot locate/);
    expect(() => resolveImagePaths(mapsDir, { ...manifest, images: null })).toThrow(/no source-image/);
  });
});
