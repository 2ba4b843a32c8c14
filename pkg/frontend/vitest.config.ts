import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    testTimeout: 300_000,
    hookTimeout: 300_000,
    exclude: ["**/node_modules/**", "**/dist/**", ...(process.env.RUN_EXP1 ? [] : ["test/exp1.test.ts"])],
    // tfjs holds wasm/threads state per process; isolate suites
    pool: "forks",
  },
});
