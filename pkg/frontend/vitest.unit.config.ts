import { defineConfig } from "vitest/config";

// Unit-only profile: no Python service is spawned.
export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    exclude: ["**/node_modules/**", "tests/integration.test.ts"],
    testTimeout: 15000,
  },
});
