import assert from "node:assert/strict";
import { test } from "node:test";

import { buildHypnogramView, renderHypnogram } from "../src/hypnogram.js";
import type { RecordingArtifact } from "../src/types.js";

function recording(n: number, withLabels: boolean): RecordingArtifact {
  return {
    recording_id: "r000",
    sample_ids: Array.from({ length: n }, (_, i) => `r000-s${i}`),
    probs: Array.from({ length: n }, () => [0.2, 0.5, 0.3]),
    predictions: Array.from({ length: n }, (_, i) => i % 3),
    ...(withLabels ? { labels: Array.from({ length: n }, () => 1) } : {}),
    coords: Array.from({ length: n }, () => null),
  };
}

test("segment count equals recording length", () => {
  const view = buildHypnogramView(recording(37, false));
  assert.equal(view.segments.length, 37);
});

test("overlays only on existing segments", () => {
  const rec = recording(5, false);
  assert.throws(
    () => buildHypnogramView(rec, { queried: new Set(["nope"]) }),
    /unknown segment/,
  );
  const view = buildHypnogramView(rec, { queried: new Set(["r000-s2"]) });
  assert.equal(view.segments.filter((s) => s.queried).length, 1);
});

test("error flags need server labels", () => {
  const noLabels = buildHypnogramView(recording(6, false));
  assert.ok(noLabels.segments.every((s) => !s.error));
  const withLabels = buildHypnogramView(recording(6, true));
  // predictions cycle 0,1,2 against constant label 1
  const expected = [true, false, true, true, false, true];
  assert.deepEqual(withLabels.segments.map((s) => s.error), expected);
});

test("render emits one band per overlaid segment and a step path", () => {
  const rec = recording(10, true);
  const view = buildHypnogramView(rec, {
    queried: new Set(["r000-s0", "r000-s3"]),
    deferred: new Set(["r000-s5"]),
  });
  const svg = renderHypnogram(view);
  assert.equal((svg.match(/class="queried"/g) ?? []).length, 2);
  assert.equal((svg.match(/class="deferred"/g) ?? []).length, 1);
  const errors = view.segments.filter((s) => s.error).length;
  assert.equal((svg.match(/class="error"/g) ?? []).length, errors);
  assert.match(svg, /class="stages"/);
  assert.match(svg, /REM/);
});

test("mismatched predictions rejected", () => {
  const rec = recording(4, false);
  rec.predictions = [0];
  assert.throws(() => buildHypnogramView(rec), /cover every segment/);
});
