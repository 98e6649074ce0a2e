import type { InjectAck, Placement, RunHandle } from "./types";

async function request<T>(method: string, path: string, body?: unknown): Promise<T> {
  const res = await fetch(path, {
    method,
    headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
    body: body !== undefined ? JSON.stringify(body) : undefined,
  });
  if (!res.ok) {
    const text = await res.text();
    throw new Error(`${method} ${path}: ${res.status} ${text}`);
  }
  return res.json() as Promise<T>;
}

export const api = {
  listRuns: () => request<RunHandle[]>("GET", "/runs"),
  getRun: (id: string) => request<RunHandle>("GET", `/runs/${id}`),
  createRun: (scenario: string, seed: number, ticks?: number) =>
    request<RunHandle>("POST", "/runs", { scenario, seed, ticks }),
  advance: (id: string, ticks: number) =>
    request<RunHandle>("POST", `/runs/${id}/advance`, { ticks }),
  runUntil: (id: string, tick: number) =>
    request<RunHandle>("POST", `/runs/${id}/run_until`, { tick }),
  pause: (id: string) => request<RunHandle>("POST", `/runs/${id}/pause`),
  inject: (id: string, compartment: string, agent: string,
           placement: Placement, count: number) =>
    request<InjectAck>("POST", `/runs/${id}/inject`,
                       { compartment, agent, placement, count }),
  scenarios: () => request<{ builtins: string[] }>("GET", "/scenarios"),
};
