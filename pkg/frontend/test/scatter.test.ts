import assert from "node:assert/strict";
import { test } from "node:test";

import { buildUncertaintyMap, highlightQuota, renderUncertaintyMap } from "../src/scatter.js";
import type { CoordsRow, MetricsRow } from "../src/types.js";

function rows(n: number): { coords: CoordsRow[]; metrics: MetricsRow[] } {
  const coords: CoordsRow[] = [];
  const metrics: MetricsRow[] = [];
  for (let i = 0; i < n; i++) {
    const sid = `s${String(i).padStart(4, "0")}`;
    coords.push({ sample_id: sid, x: Math.cos(i), y: Math.sin(i) });
    metrics.push({
      sample_id: sid,
      c: 1 - i / n,
      v_al: (i % 7) / 28,
      v_ep: (i % 5) / 20,
      v_al_entropy: 0,
      v_ep_entropy: 0,
      stratum: "other",
    });
  }
  return { coords, metrics };
}

test("highlight quota is the ceiling rule", () => {
  assert.equal(highlightQuota(1000, 1), 10);
  assert.equal(highlightQuota(101, 1), 2);
  assert.equal(highlightQuota(5, 20), 1);
  assert.throws(() => highlightQuota(10, 0), RangeError);
});

test("highlight count matches the quota exactly", () => {
  const { coords, metrics } = rows(1000);
  const map = buildUncertaintyMap(coords, metrics, "v_al", 1);
  assert.equal(map.highlightCount, 10);
  assert.equal(map.points.filter((p) => p.highlighted).length, 10);
});

test("ties break by ascending sample id", () => {
  const { coords, metrics } = rows(14);
  // all v_ep values tie within groups of 5; quota 2 must take lowest ids of the max group
  const map = buildUncertaintyMap(coords, metrics, "v_ep", 10);
  assert.equal(map.highlightCount, 2);
  const ids = map.points.filter((p) => p.highlighted).map((p) => p.sampleId);
  // max v_ep = 4/20 at i in {4, 9}; both selected, lowest ids first
  assert.deepEqual(ids.sort(), ["s0004", "s0009"]);
});

test("render marks exactly the highlighted points black", () => {
  const { coords, metrics } = rows(200);
  const map = buildUncertaintyMap(coords, metrics, "v_al", 2);
  const svg = renderUncertaintyMap(map);
  assert.equal((svg.match(/class="pt highlight"/g) ?? []).length, map.highlightCount);
  assert.equal((svg.match(/class="pt( highlight)?"/g) ?? []).length, 200);
});

test("missing metrics for a coordinate is an error", () => {
  const { coords, metrics } = rows(4);
  coords.push({ sample_id: "sX", x: 0, y: 0 });
  assert.throws(() => buildUncertaintyMap(coords, metrics, "c", 10), /no metrics/);
});
