import { describe, expect, it } from "vitest";
import { CensusSeries } from "../src/census";
import type { Frame } from "../src/types";

function frame(tick: number, census: Record<string, number>): Frame {
  return { tick, census: { main: census }, slices: [] };
}

describe("CensusSeries", () => {
  it("appends one point per frame", () => {
    const s = new CensusSeries();
    s.append(frame(5, { OC: 10, V: 3 }), "main");
    s.append(frame(10, { OC: 12, V: 1 }), "main");
    expect(s.ticks).toEqual([5, 10]);
    expect(s.series("OC")).toEqual([10, 12]);
    expect(s.series("V")).toEqual([3, 1]);
  });

  it("drops duplicate and stale frames after a resubscribe", () => {
    const s = new CensusSeries();
    expect(s.append(frame(5, { OC: 10 }), "main")).toBe(true);
    expect(s.append(frame(5, { OC: 10 }), "main")).toBe(false);
    expect(s.append(frame(3, { OC: 8 }), "main")).toBe(false);
    expect(s.append(frame(6, { OC: 11 }), "main")).toBe(true);
    expect(s.ticks).toEqual([5, 6]);
  });

  it("backfills zeros when a new agent appears mid-run", () => {
    const s = new CensusSeries();
    s.append(frame(1, { OC: 10 }), "main");
    s.append(frame(2, { OC: 10, IC: 4 }), "main");
    expect(s.series("IC")).toEqual([0, 4]);
  });

  it("treats missing agents as zero afterwards", () => {
    const s = new CensusSeries();
    s.append(frame(1, { V: 7 }), "main");
    s.append(frame(2, {}), "main");
    expect(s.series("V")).toEqual([7, 0]);
    expect(s.latest("V")).toBe(0);
  });

  it("records injection annotations", () => {
    const s = new CensusSeries();
    s.append(frame(1, { V: 0 }), "main");
    s.annotate(1, "+100 V");
    expect(s.annotations).toEqual([{ tick: 1, label: "+100 V" }]);
  });
});
