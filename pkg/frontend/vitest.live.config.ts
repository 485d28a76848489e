import { defineConfig } from 'vitest/config';

// Integration tests against a real `unic serve` process. Fixture
// generation simulates cloth, so first runs are slow; artifacts cache
// under /tmp/unic_live (override with UNIC_LIVE_DIR).
export default defineConfig({
  test: {
    include: ['tests-live/**/*.test.ts'],
    fileParallelism: false,
    testTimeout: 180_000,
    hookTimeout: 900_000,
  },
});
