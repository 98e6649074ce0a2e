import { defineConfig } from "vite";

// the dev server proxies API and frame-stream traffic to the run-control
// service (immunegrid serve --port 8600)
export default defineConfig({
  server: {
    proxy: {
      "/runs": { target: "http://127.0.0.1:8600", ws: true },
      "/scenarios": { target: "http://127.0.0.1:8600" },
    },
  },
  build: { outDir: "dist" },
});
