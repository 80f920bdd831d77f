import { describe, expect, it } from "vitest";
import { Rng } from "../src/prng.js";

describe("Rng", () => {
  it("replays exactly for equal seeds", () => {
    const a = new Rng(1234);
    const b = new Rng(1234);
    for (let i = 0; i < 1000; i++) expect(a.next()).toBe(b.next());
  });

  it("diverges for different seeds", () => {
    const a = new Rng(1);
    const b = new Rng(2);
    const sameCount = Array.from({ length: 100 }, () => (a.next() === b.next() ? 1 : 0)).reduce(
      (x: number, y: number) => x + y,
      0,
    );
    expect(sameCount).toBeLessThan(3);
  });

  it("stays in [0, 1) with a sane mean", () => {
    const rng = new Rng(7);
    let sum = 0;
    for (let i = 0; i < 20000; i++) {
      const v = rng.next();
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThan(1);
      sum += v;
    }
    expect(sum / 20000).toBeCloseTo(0.5, 1);
  });

  it("draws gaussians with mean 0 and variance 1", () => {
    const rng = new Rng(42);
    const n = 50000;
    let sum = 0;
    let sq = 0;
    for (let i = 0; i < n; i++) {
      const v = rng.gaussian();
      sum += v;
      sq += v * v;
    }
    const mean = sum / n;
    const variance = sq / n - mean * mean;
    expect(Math.abs(mean)).toBeLessThan(0.02);
    expect(variance).toBeGreaterThan(0.95);
    expect(variance).toBeLessThan(1.05);
  });

  it("shuffles into a permutation, deterministically", () => {
    const items = [...Array(50).keys()];
    const a = new Rng(9).shuffle([...items]);
    const b = new Rng(9).shuffle([...items]);
    expect(a).toEqual(b);
    expect([...a].sort((x, y) => x - y)).toEqual(items);
    expect(a).not.toEqual(items); // astronomically unlikely to be identity
  });

  it("bounds int draws", () => {
    const rng = new Rng(3);
    for (let i = 0; i < 1000; i++) {
      const v = rng.int(7);
      expect(Number.isInteger(v)).toBe(true);
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThan(7);
    }
  });
});
