import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // GAN training tests run whole optimization loops on the wasm backend
    testTimeout: 120_000,
    hookTimeout: 120_000,
    // tfjs keeps global backend state; parallel workers would fight over it
    pool: "forks",
    poolOptions: { forks: { singleFork: true } },
  },
});
