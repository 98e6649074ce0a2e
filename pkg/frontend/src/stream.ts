import type { Frame, RunHandle } from "./types";

export interface StreamOptions {
  stride: number;
  slices: string[];               // "comp:agent:axis:index"
  onFrame: (frame: Frame) => void;
  onHello?: (handle: RunHandle) => void;
  onStateChange?: (state: StreamState) => void;
  reconnectDelayMs?: number;
  socketFactory?: (url: string) => WebSocket;
}

export type StreamState = "connecting" | "live" | "stale" | "closed";

/** Frame stream with automatic reconnect.
 *
 * On reconnect the server resumes at the current tick; duplicate
 * suppression is the consumer's job (CensusSeries.append is idempotent).
 * While disconnected the UI shows a stale-state banner via onStateChange.
 */
export class FrameStream {
  private ws: WebSocket | null = null;
  private stopped = false;
  private timer: ReturnType<typeof setTimeout> | null = null;
  state: StreamState = "connecting";

  constructor(private runId: string, private opts: StreamOptions) {}

  url(): string {
    const proto = location.protocol === "https:" ? "wss" : "ws";
    const params = new URLSearchParams();
    params.set("stride", String(this.opts.stride));
    for (const s of this.opts.slices) params.append("slice", s);
    return `${proto}://${location.host}/runs/${this.runId}/frames?${params}`;
  }

  private setState(state: StreamState): void {
    this.state = state;
    this.opts.onStateChange?.(state);
  }

  connect(): void {
    if (this.stopped) return;
    this.setState("connecting");
    const factory = this.opts.socketFactory ?? ((u: string) => new WebSocket(u));
    const ws = factory(this.url());
    this.ws = ws;
    ws.onopen = () => this.setState("live");
    ws.onmessage = (ev: MessageEvent) => {
      const doc = JSON.parse(typeof ev.data === "string" ? ev.data : "");
      if (doc.hello) {
        this.opts.onHello?.(doc.hello as RunHandle);
        return;
      }
      this.opts.onFrame(doc as Frame);
    };
    ws.onclose = () => {
      if (this.stopped) {
        this.setState("closed");
        return;
      }
      this.setState("stale");
      this.timer = setTimeout(() => this.connect(),
                              this.opts.reconnectDelayMs ?? 1500);
    };
    ws.onerror = () => {
      try { ws.close(); } catch { /* already closing */ }
    };
  }

  close(): void {
    this.stopped = true;
    if (this.timer !== null) clearTimeout(this.timer);
    this.ws?.close();
    this.setState("closed");
  }
}

/** Serializes commands and swallows duplicate submissions while one is in
 * flight, so double-clicks cannot double-inject. */
export class CommandGate {
  private pending = new Set<string>();

  async submit<T>(token: string, fn: () => Promise<T>): Promise<T | null> {
    if (this.pending.has(token)) return null;
    this.pending.add(token);
    try {
      return await fn();
    } finally {
      this.pending.delete(token);
    }
  }

  busy(token: string): boolean {
    return this.pending.has(token);
  }
}
