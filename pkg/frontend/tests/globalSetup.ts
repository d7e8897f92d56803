/**
 * Spawns the Python service for the integration tests.
 *
 * The job budget is set to 0 so every PC request takes the polled-job
 * path, which is exactly the machinery the UI's progress bar drives.
 */

import { spawn, ChildProcess } from "node:child_process";
import net from "node:net";
import path from "node:path";
import type { GlobalSetupContext } from "vitest/node";

let child: ChildProcess | null = null;

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = net.createServer();
    srv.listen(0, "127.0.0.1", () => {
      const address = srv.address();
      if (address && typeof address === "object") {
        const port = address.port;
        srv.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

async function waitForService(url: string, timeoutMs = 20000): Promise<void> {
  const start = Date.now();
  while (Date.now() - start < timeoutMs) {
    try {
      const resp = await fetch(`${url}/api/sessions/__probe__`);
      if (resp.status === 404) return; // routed: the service is up
    } catch {
      // not listening yet
    }
    await new Promise((r) => setTimeout(r, 150));
  }
  throw new Error(`service did not come up at ${url}`);
}

export default async function setup({ provide }: GlobalSetupContext) {
  const port = await freePort();
  const url = `http://127.0.0.1:${port}`;
  const repoRoot = path.resolve(__dirname, "..", "..");
  child = spawn(
    "python3",
    ["-m", "posteriorlens.cli", "serve", "--port", String(port), "--job-budget", "0"],
    { cwd: repoRoot, stdio: ["ignore", "inherit", "inherit"] },
  );
  await waitForService(url);
  provide("serviceUrl", url);
  return () => {
    child?.kill("SIGTERM");
  };
}

declare module "vitest" {
  export interface ProvidedContext {
    serviceUrl: string;
  }
}
