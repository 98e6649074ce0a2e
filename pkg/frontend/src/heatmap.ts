/** 2D slice heatmap on a canvas: rows x cols counts, dark-to-bright scale. */

export function colorFor(value: number, max: number): [number, number, number] {
  if (max <= 0 || value <= 0) return [16, 18, 28];
  const t = Math.min(1, value / max);
  // dark blue -> cyan -> yellow
  const r = Math.round(255 * Math.max(0, t * 2 - 1));
  const g = Math.round(80 + 175 * t);
  const b = Math.round(140 + 60 * (1 - t));
  return [r, g, b];
}

export function gridMax(grid: number[][]): number {
  let max = 0;
  for (const row of grid) {
    for (const v of row) if (v > max) max = v;
  }
  return max;
}

export function drawHeatmap(canvas: HTMLCanvasElement, grid: number[][]): void {
  const rows = grid.length;
  const cols = rows ? grid[0].length : 0;
  if (!rows || !cols) return;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const cw = Math.max(2, Math.floor(canvas.width / cols));
  const ch = Math.max(2, Math.floor(canvas.height / rows));
  const max = gridMax(grid);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let y = 0; y < rows; y++) {
    for (let x = 0; x < cols; x++) {
      const [r, g, b] = colorFor(grid[y][x], max);
      ctx.fillStyle = `rgb(${r},${g},${b})`;
      ctx.fillRect(x * cw, y * ch, cw - 1, ch - 1);
    }
  }
}
