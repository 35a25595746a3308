import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    environment: "node",
    // the integration files each boot their own model service; run them
    // one at a time so a shared desktop core is not oversubscribed
    fileParallelism: false,
    testTimeout: 300_000,
    hookTimeout: 180_000,
  },
});
