import { defineConfig } from "vitest/config";

export default defineConfig({
    build: {
        outDir: "dist",
        chunkSizeWarningLimit: 1200, // three.js in one chunk is fine here
    },
    test: {
        include: ["tests/**/*.test.ts"],
        environment: "node",
        testTimeout: 120_000,
        hookTimeout: 120_000,
    },
});
