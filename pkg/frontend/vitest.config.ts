import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    include: ["tests/**/*.test.ts"],
    // The e2e suite boots a real review API subprocess.
    testTimeout: 30_000,
    hookTimeout: 60_000,
  },
});
