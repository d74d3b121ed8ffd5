import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // The integration suite boots the counting service in a subprocess;
    // allow generous startup time while individual assertions stay tight.
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
