// Uncertainty map: the server's 2-D projection tinted by a selectable
// uncertainty metric, with the top percentile highlighted in black. The
// highlight quota mirrors the server's stratification rule exactly:
// ceil(N * pct / 100), ranked by descending value with ascending-sample-id
// tie-break.

import type { CoordsRow, MetricsRow } from "./types.js";

export type MapMetric = "c" | "v_al" | "v_ep";

export interface MapPoint {
  sampleId: string;
  x: number;
  y: number;
  value: number;
  highlighted: boolean;
}

export interface UncertaintyMap {
  metric: MapMetric;
  topPct: number;
  points: MapPoint[];
  highlightCount: number;
}

export function highlightQuota(n: number, topPct: number): number {
  if (topPct <= 0 || topPct > 100) throw new RangeError("topPct must be in (0, 100]");
  return Math.ceil((n * topPct) / 100);
}

export function buildUncertaintyMap(
  coords: CoordsRow[],
  metrics: MetricsRow[],
  metric: MapMetric,
  topPct: number,
): UncertaintyMap {
  const metricOf = new Map(metrics.map((m) => [m.sample_id, m]));
  const points = coords.map((row) => {
    const m = metricOf.get(row.sample_id);
    if (m === undefined) {
      throw new Error(`no metrics for sample ${row.sample_id}`);
    }
    return { sampleId: row.sample_id, x: row.x, y: row.y, value: m[metric], highlighted: false };
  });
  const quota = highlightQuota(points.length, topPct);
  const ranked = [...points].sort(
    (a, b) => b.value - a.value || (a.sampleId < b.sampleId ? -1 : 1),
  );
  for (const p of ranked.slice(0, quota)) p.highlighted = true;
  return { metric, topPct, points, highlightCount: quota };
}

const SIZE = 520;
const PAD = 30;

function tint(value: number, lo: number, hi: number): string {
  const t = hi > lo ? (value - lo) / (hi - lo) : 0;
  const r = Math.round(40 + t * 180);
  const g = Math.round(90 - t * 40);
  const b = Math.round(200 - t * 150);
  return `rgb(${r},${g},${b})`;
}

export function renderUncertaintyMap(map: UncertaintyMap): string {
  if (map.points.length === 0) throw new Error("empty map");
  const xs = map.points.map((p) => p.x);
  const ys = map.points.map((p) => p.y);
  const vs = map.points.map((p) => p.value);
  const [xLo, xHi] = [Math.min(...xs), Math.max(...xs)];
  const [yLo, yHi] = [Math.min(...ys), Math.max(...ys)];
  const [vLo, vHi] = [Math.min(...vs), Math.max(...vs)];
  const px = (x: number) => PAD + ((x - xLo) / (xHi - xLo || 1)) * (SIZE - 2 * PAD);
  const py = (y: number) => SIZE - PAD - ((y - yLo) / (yHi - yLo || 1)) * (SIZE - 2 * PAD);

  const parts = [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${SIZE}" height="${SIZE}" viewBox="0 0 ${SIZE} ${SIZE}" role="img" aria-label="uncertainty map (${map.metric})">`,
    `<rect width="${SIZE}" height="${SIZE}" fill="white"/>`,
  ];
  // plain points first so the highlighted percentile stays on top
  for (const p of map.points) {
    if (p.highlighted) continue;
    parts.push(
      `<circle class="pt" cx="${px(p.x).toFixed(1)}" cy="${py(p.y).toFixed(1)}" r="2.4" fill="${tint(p.value, vLo, vHi)}" opacity="0.8"><title>${p.sampleId}: ${String(p.value)}</title></circle>`,
    );
  }
  for (const p of map.points) {
    if (!p.highlighted) continue;
    parts.push(
      `<circle class="pt highlight" cx="${px(p.x).toFixed(1)}" cy="${py(p.y).toFixed(1)}" r="3.2" fill="black"><title>${p.sampleId}: ${String(p.value)}</title></circle>`,
    );
  }
  parts.push("</svg>");
  return parts.join("\n");
}
