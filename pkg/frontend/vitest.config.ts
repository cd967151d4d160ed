import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the fuzz suite is CPU-bound; one fork keeps it deterministic and polite
    pool: "forks",
    poolOptions: { forks: { singleFork: true } },
  },
});
