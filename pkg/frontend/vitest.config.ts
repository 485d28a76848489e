import { defineConfig } from 'vitest/config';

// Unit tests only. The tests-live/ suite needs a running service and its
// own config (vitest.live.config.ts, `npm run test:live`).
export default defineConfig({
  test: {
    include: ['tests/**/*.test.ts'],
  },
});
