import uPlot from "uplot";
import "uplot/dist/uPlot.min.css";
import { api } from "./api";
import { CensusSeries } from "./census";
import { drawHeatmap } from "./heatmap";
import { CommandGate, FrameStream, StreamState } from "./stream";
import type { Frame, Placement, RunHandle } from "./types";

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

let stream: FrameStream | null = null;
let census: CensusSeries | null = null;
let handle: RunHandle | null = null;
let plot: uPlot | null = null;
const gate = new CommandGate();

const PALETTE = ["#7cc7ff", "#ff9f43", "#2ecc71", "#ff6b81", "#c39bd3",
                 "#f7dc6f", "#48c9b0", "#e67e22", "#85c1e9", "#f1948a"];

function sliceSpec(): string {
  const comp = $<HTMLSelectElement>("slice-comp").value;
  const agent = $<HTMLSelectElement>("slice-agent").value;
  const axis = $<HTMLSelectElement>("slice-axis").value;
  const index = $<HTMLInputElement>("slice-index").value || "0";
  return `${comp}:${agent}:${axis}:${index}`;
}

function setBanner(state: StreamState): void {
  const banner = $("banner");
  if (state === "live") {
    banner.textContent = "";
    banner.className = "banner hidden";
  } else if (state === "stale") {
    banner.textContent = "connection lost: showing stale state, reconnecting…";
    banner.className = "banner stale";
  } else if (state === "connecting") {
    banner.textContent = "connecting…";
    banner.className = "banner";
  }
}

function rebuildChart(): void {
  if (!census) return;
  const agents = census.agents();
  const el = $("chart");
  el.innerHTML = "";
  const series: uPlot.Series[] = [{ label: "tick" }];
  agents.forEach((agent, i) => {
    series.push({ label: agent, stroke: PALETTE[i % PALETTE.length], width: 1.5 });
  });
  plot = new uPlot(
    { width: el.clientWidth || 760, height: 280, series,
      scales: { x: { time: false } } },
    [census.ticks, ...agents.map((a) => census!.series(a))] as uPlot.AlignedData,
    el,
  );
}

function refreshChart(): void {
  if (!census) return;
  const agents = census.agents();
  if (!plot || plot.series.length !== agents.length + 1) {
    rebuildChart();
    return;
  }
  plot.setData([census.ticks,
                ...agents.map((a) => census!.series(a))] as uPlot.AlignedData);
}

function onFrame(frame: Frame): void {
  if (!census || !handle) return;
  const comp = $<HTMLSelectElement>("slice-comp").value;
  if (!census.append(frame, comp)) return;
  $("tick-indicator").textContent =
    `tick ${frame.tick} / ${handle.run_length}`;
  refreshChart();
  const slice = frame.slices[0];
  if (slice?.grid) {
    drawHeatmap($<HTMLCanvasElement>("heatmap"), slice.grid);
    $("slice-note").textContent =
      `${slice.agent} @ ${slice.compartment}, axis ${slice.axis}, index ${slice.index}`;
  } else if (slice?.error) {
    $("slice-note").textContent = `slice error: ${slice.error}`;
  }
}

function openStream(): void {
  if (!handle) return;
  stream?.close();
  census = new CensusSeries();
  plot = null;
  const stride = parseInt($<HTMLInputElement>("stride").value || "5", 10);
  stream = new FrameStream(handle.run_id, {
    stride,
    slices: [sliceSpec()],
    onFrame,
    onHello: (h) => { handle = h; populateAgents(h); },
    onStateChange: setBanner,
  });
  stream.connect();
}

function populateAgents(h: RunHandle): void {
  const agentSel = $<HTMLSelectElement>("slice-agent");
  const injectSel = $<HTMLSelectElement>("inject-agent");
  const compSel = $<HTMLSelectElement>("slice-comp");
  const injectComp = $<HTMLSelectElement>("inject-comp");
  for (const sel of [agentSel, injectSel]) {
    if (sel.options.length === 0) {
      for (const a of h.agents) {
        sel.add(new Option(a, a));
      }
    }
  }
  for (const sel of [compSel, injectComp]) {
    if (sel.options.length === 0) {
      for (const c of Object.keys(h.compartments)) {
        sel.add(new Option(c, c));
      }
    }
  }
}

async function refreshHandle(): Promise<void> {
  if (!handle) return;
  handle = await api.getRun(handle.run_id);
  $("status").textContent = `${handle.scenario_name} · seed ${handle.seed} · ${handle.status}`;
}

function placementFromForm(): Placement {
  const mode = $<HTMLSelectElement>("inject-mode").value as Placement["mode"];
  if (mode === "wall") {
    return { mode, axis: parseInt($<HTMLSelectElement>("inject-axis").value, 10),
             face: parseInt($<HTMLSelectElement>("inject-face").value, 10) };
  }
  if (mode === "point") {
    const coords = $<HTMLInputElement>("inject-point").value
      .split(",").map((v) => parseInt(v.trim(), 10));
    return { mode, point: coords };
  }
  return { mode: "uniform" };
}

function previewWall(): void {
  const mode = $<HTMLSelectElement>("inject-mode").value;
  const note = $("inject-preview");
  if (mode !== "wall" || !handle) {
    note.textContent = "";
    return;
  }
  const comp = $<HTMLSelectElement>("inject-comp").value;
  const dims = handle.compartments[comp] ?? [0, 0, 0];
  const axis = parseInt($<HTMLSelectElement>("inject-axis").value, 10);
  const face = parseInt($<HTMLSelectElement>("inject-face").value, 10);
  const names = ["x", "y", "z"];
  const plane = face === 0 ? 0 : dims[axis] - 1;
  note.textContent = `will land on the boundary plane ${names[axis]} = ${plane}`;
}

function bind(): void {
  $("create").onclick = async () => {
    const scenario = $<HTMLSelectElement>("scenario").value;
    const seed = parseInt($<HTMLInputElement>("seed").value || "1", 10);
    await gate.submit("create", async () => {
      handle = await api.createRun(scenario, seed);
      await refreshHandle();
      openStream();
    });
  };
  $("connect").onclick = async () => {
    const id = $<HTMLInputElement>("run-id").value.trim();
    if (!id) return;
    try {
      handle = await api.getRun(id);
    } catch (err) {
      const runs = await api.listRuns();
      $("status").textContent =
        `no such run; known: ${runs.map((r) => r.run_id).join(", ") || "none"}`;
      return;
    }
    await refreshHandle();
    openStream();
  };
  $("advance").onclick = () => gate.submit("advance", async () => {
    if (!handle) return;
    const n = parseInt($<HTMLInputElement>("advance-n").value || "100", 10);
    await api.advance(handle.run_id, n);
    await refreshHandle();
  });
  $("run-until").onclick = () => gate.submit("run-until", async () => {
    if (!handle) return;
    const t = parseInt($<HTMLInputElement>("until-tick").value || "0", 10);
    await api.runUntil(handle.run_id, t);
    await refreshHandle();
  });
  $("pause").onclick = () => gate.submit("pause", async () => {
    if (!handle) return;
    await api.pause(handle.run_id);
    await refreshHandle();
  });
  $("inject").onclick = () => gate.submit("inject", async () => {
    if (!handle || !census) return;
    const agent = $<HTMLSelectElement>("inject-agent").value;
    const count = parseInt($<HTMLInputElement>("inject-count").value || "1", 10);
    const comp = $<HTMLSelectElement>("inject-comp").value;
    try {
      const ack = await api.inject(handle.run_id, comp, agent,
                                   placementFromForm(), count);
      census.annotate(ack.tick, `+${ack.placed} ${agent}`);
      $("inject-note").textContent =
        `placed ${ack.placed} ${agent} at tick ${ack.tick}`;
    } catch (err) {
      $("inject-note").textContent = String(err);
    }
  });
  $<HTMLSelectElement>("inject-mode").onchange = previewWall;
  $<HTMLSelectElement>("inject-axis").onchange = previewWall;
  $<HTMLSelectElement>("inject-face").onchange = previewWall;
  $("resubscribe").onclick = () => openStream();

  api.scenarios().then(({ builtins }) => {
    const sel = $<HTMLSelectElement>("scenario");
    for (const name of builtins) {
      if (!name.startsWith("kinetics")) sel.add(new Option(name, name));
    }
  });
}

window.addEventListener("DOMContentLoaded", bind);
