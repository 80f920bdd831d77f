import * as fs from "node:fs";
import * as path from "node:path";
import { afterAll, describe, expect, it } from "vitest";
import { Rng } from "../src/prng.js";
import { generateDataset, synthesizeScene } from "../src/scenes.js";
import { readPpm } from "../src/ppm.js";
import { cleanup, tmpdir } from "./fixtures.js";

const dir = tmpdir("adv-scenes-");
afterAll(() => cleanup(dir));

describe("scene synthesis", () => {
  it("emits the declared shape with values in [0, 1]", () => {
    const scene = synthesizeScene(new Rng(1), 32);
    expect(scene.width).toBe(32);
    expect(scene.height).toBe(32);
    expect(scene.data.length).toBe(32 * 32 * 3);
    for (const v of scene.data) {
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThanOrEqual(1);
    }
  });

  it("is deterministic per seed and varied across draws", () => {
    expect(synthesizeScene(new Rng(4), 32).data).toEqual(synthesizeScene(new Rng(4), 32).data);
    const rng = new Rng(4);
    const a = synthesizeScene(rng, 32);
    const b = synthesizeScene(rng, 32);
    let diff = 0;
    for (let i = 0; i < a.data.length; i++) diff += Math.abs(a.data[i] - b.data[i]);
    expect(diff / a.data.length).toBeGreaterThan(0.01);
  });

  it("has local structure, not pure noise", () => {
    // neighboring pixels should usually match (flat regions + gradients)
    const scene = synthesizeScene(new Rng(2), 32);
    let close = 0;
    let total = 0;
    for (let y = 0; y < 32; y++) {
      for (let x = 1; x < 32; x++) {
        const i = (y * 32 + x) * 3;
        if (Math.abs(scene.data[i] - scene.data[i - 3]) < 0.05) close++;
        total++;
      }
    }
    expect(close / total).toBeGreaterThan(0.8);
  });

  it("writes a deterministic dataset of readable files", () => {
    const out1 = path.join(dir, "d1");
    const out2 = path.join(dir, "d2");
    const names1 = generateDataset({ dir: out1, count: 5, size: 32, seed: 9 });
    const names2 = generateDataset({ dir: out2, count: 5, size: 32, seed: 9 });
    expect(names1).toEqual(names2);
    expect(names1).toEqual(["img_000.ppm", "img_001.ppm", "img_002.ppm", "img_003.ppm", "img_004.ppm"]);
    for (const name of names1) {
      const a = fs.readFileSync(path.join(out1, name));
      const b = fs.readFileSync(path.join(out2, name));
      expect(a.equals(b)).toBe(true);
      const img = readPpm(path.join(out1, name));
      expect(img.width).toBe(32);
    }
  });

  it("rejects degenerate parameters", () => {
    expect(() => generateDataset({ dir: path.join(dir, "bad"), count: 0, size: 32, seed: 1 })).toThrow();
    expect(() => generateDataset({ dir: path.join(dir, "bad"), count: 1, size: 8, seed: 1 })).toThrow();
  });
});
