import { defineConfig } from "vitest/config";

// Source files import each other with explicit .js suffixes so the emitted
// modules run unbundled in the browser; map those back to .ts for the runner.
export default defineConfig({
  resolve: {
    alias: [{ find: /^(\.{1,2}\/.*)\.js$/, replacement: "$1" }],
  },
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
  },
});
