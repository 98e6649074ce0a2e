import type { Frame } from "./types";

/** Census time series fed from frames.
 *
 * Frames can repeat after a reconnect-and-resubscribe; appending is
 * idempotent by tick, so the chart never shows duplicate points.
 */
export class CensusSeries {
  readonly ticks: number[] = [];
  private perAgent = new Map<string, number[]>();
  private lastTick = -1;
  readonly annotations: { tick: number; label: string }[] = [];

  append(frame: Frame, compartment: string): boolean {
    if (frame.tick <= this.lastTick) {
      return false; // duplicate or stale frame (e.g. after resubscribe)
    }
    const census = frame.census[compartment] ?? {};
    for (const agent of Object.keys(census)) {
      if (!this.perAgent.has(agent)) {
        // new agent appears mid-run: backfill with zeros
        this.perAgent.set(agent, new Array(this.ticks.length).fill(0));
      }
    }
    this.ticks.push(frame.tick);
    this.lastTick = frame.tick;
    for (const [agent, values] of this.perAgent) {
      values.push(census[agent] ?? 0);
    }
    return true;
  }

  annotate(tick: number, label: string): void {
    this.annotations.push({ tick, label });
  }

  agents(): string[] {
    return [...this.perAgent.keys()].sort();
  }

  series(agent: string): number[] {
    return this.perAgent.get(agent) ?? [];
  }

  latest(agent: string): number {
    const s = this.series(agent);
    return s.length ? s[s.length - 1] : 0;
  }

  get currentTick(): number {
    return this.lastTick;
  }

  get length(): number {
    return this.ticks.length;
  }
}
