export interface RunHandle {
  run_id: string;
  scenario_name: string;
  scenario_digest: string;
  seed: number;
  tick: number;
  run_length: number;
  status: "paused" | "running" | "finished";
  agents: string[];
  compartments: Record<string, number[]>;
}

export interface SliceEntry {
  compartment: string;
  agent: string;
  axis: number;
  index: number;
  grid?: number[][];
  error?: string;
}

export interface Frame {
  tick: number;
  census: Record<string, Record<string, number>>;
  slices: SliceEntry[];
}

export interface Placement {
  mode: "uniform" | "wall" | "point";
  axis?: number;
  face?: number;
  point?: number[];
}

export interface InjectAck {
  placed: number;
  tick: number;
}
