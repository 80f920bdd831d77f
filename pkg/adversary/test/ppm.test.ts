import * as fs from "node:fs";
import * as path from "node:path";
import { afterAll, describe, expect, it } from "vitest";
import { decodePpm, encodePpm, readPpm, writePpm } from "../src/ppm.js";
import { Rng } from "../src/prng.js";
import { cleanup, tmpdir } from "./fixtures.js";

const dir = tmpdir("adv-ppm-");
afterAll(() => cleanup(dir));

describe("PPM codec", () => {
  it("round-trips within 8-bit quantization", () => {
    const rng = new Rng(5);
    const data = new Float32Array(8 * 8 * 3);
    for (let i = 0; i < data.length; i++) data[i] = rng.next();
    const decoded = decodePpm(encodePpm({ width: 8, height: 8, data }));
    expect(decoded.width).toBe(8);
    expect(decoded.height).toBe(8);
    for (let i = 0; i < data.length; i++) {
      expect(Math.abs(decoded.data[i] - data[i])).toBeLessThanOrEqual(0.5 / 255 + 1e-7);
    }
  });

  it("round-trips exactly through a second pass", () => {
    const rng = new Rng(6);
    const data = new Float32Array(5 * 5 * 3);
    for (let i = 0; i < data.length; i++) data[i] = rng.next();
    const once = decodePpm(encodePpm({ width: 5, height: 5, data }));
    const twice = decodePpm(encodePpm(once));
    expect(twice.data).toEqual(once.data);
  });

  it("clamps out-of-range pixel values", () => {
    const data = new Float32Array([-1, 0.5, 2]);
    const decoded = decodePpm(encodePpm({ width: 1, height: 1, data }));
    expect(decoded.data[0]).toBe(0);
    expect(decoded.data[2]).toBe(1);
  });

  it("reads headers with comment lines", () => {
    const body = Buffer.alloc(3, 128);
    const raw = Buffer.concat([Buffer.from("P6\n# a comment\n1 1\n255\n", "ascii"), body]);
    const decoded = decodePpm(raw);
    expect(decoded.width).toBe(1);
    expect(decoded.data[0]).toBeCloseTo(128 / 255, 6);
  });

  it("rejects wrong magic, truncation, and bad sizes", () => {
    expect(() => decodePpm(Buffer.from("P5\n1 1\n255\n\0", "ascii"))).toThrow(/not a binary PPM/);
    expect(() => decodePpm(Buffer.from("P6\n2 2\n255\n\0\0\0", "ascii"))).toThrow(/truncated/);
    expect(() => encodePpm({ width: 2, height: 2, data: new Float32Array(3) })).toThrow(/length/);
  });

  it("reads and writes files", () => {
    const file = path.join(dir, "x.ppm");
    const data = new Float32Array(4 * 4 * 3).fill(0.25);
    writePpm(file, { width: 4, height: 4, data });
    expect(fs.existsSync(file)).toBe(true);
    const back = readPpm(file);
    expect(back.width).toBe(4);
    expect(back.data[0]).toBeCloseTo(0.25, 2);
  });
});
