// Hypnogram view: stage-over-time step chart with per-segment overlays.
// Queried segments are banded grey, errors red (simulation only), deferred
// segments blue. The view never derives values itself: stages come from the
// server's predictions, error flags from its labels.

import { HYPNOGRAM_ORDER, stageName } from "./stages.js";
import type { RecordingArtifact } from "./types.js";

export interface HypnogramSegment {
  index: number;
  sampleId: string;
  stage: number;
  queried: boolean;
  deferred: boolean;
  error: boolean;
}

export interface HypnogramView {
  recordingId: string;
  segments: HypnogramSegment[];
}

export interface OverlaySets {
  queried?: ReadonlySet<string>;
  deferred?: ReadonlySet<string>;
}

export function buildHypnogramView(
  recording: RecordingArtifact,
  overlays: OverlaySets = {},
): HypnogramView {
  const n = recording.sample_ids.length;
  if (recording.predictions.length !== n) {
    throw new Error("predictions do not cover every segment");
  }
  const known = new Set(recording.sample_ids);
  for (const [name, ids] of Object.entries(overlays)) {
    for (const sid of ids ?? []) {
      if (!known.has(sid)) {
        throw new Error(`${name} overlay references unknown segment ${sid}`);
      }
    }
  }
  const labels = recording.labels;
  const segments: HypnogramSegment[] = recording.sample_ids.map((sid, i) => ({
    index: i,
    sampleId: sid,
    stage: recording.predictions[i]!,
    queried: overlays.queried?.has(sid) ?? false,
    deferred: overlays.deferred?.has(sid) ?? false,
    error: labels !== undefined && labels[i] !== recording.predictions[i],
  }));
  return { recordingId: recording.recording_id, segments };
}

const ROW_HEIGHT = 26;
const TOP = 18;
const LEFT = 42;

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

/** Render the view as an SVG string (one rect band per overlaid segment). */
export function renderHypnogram(view: HypnogramView, width = 900): string {
  const n = view.segments.length;
  if (n === 0) throw new Error("empty hypnogram");
  const plotWidth = width - LEFT - 10;
  const height = TOP + HYPNOGRAM_ORDER.length * ROW_HEIGHT + 26;
  const xOf = (i: number) => LEFT + (i / n) * plotWidth;
  const rowOf = (stage: number) => {
    const row = HYPNOGRAM_ORDER.indexOf(stageName(stage));
    return TOP + row * ROW_HEIGHT + ROW_HEIGHT / 2;
  };

  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}" role="img" aria-label="hypnogram ${esc(view.recordingId)}">`,
    `<rect width="${width}" height="${height}" fill="white"/>`,
  ];
  HYPNOGRAM_ORDER.forEach((name, row) => {
    const y = TOP + row * ROW_HEIGHT + ROW_HEIGHT / 2;
    parts.push(
      `<text x="${LEFT - 8}" y="${y + 4}" text-anchor="end" font-size="12" font-family="sans-serif">${name}</text>`,
      `<line x1="${LEFT}" y1="${y}" x2="${width - 10}" y2="${y}" stroke="#eee"/>`,
    );
  });

  const bandTop = TOP - 4;
  const bandHeight = HYPNOGRAM_ORDER.length * ROW_HEIGHT + 8;
  for (const seg of view.segments) {
    const x = xOf(seg.index);
    const w = Math.max(plotWidth / n, 0.5);
    if (seg.queried) {
      parts.push(
        `<rect class="queried" x="${x.toFixed(2)}" y="${bandTop}" width="${w.toFixed(2)}" height="${bandHeight}" fill="#bdbdbd" opacity="0.45"/>`,
      );
    }
    if (seg.deferred) {
      parts.push(
        `<rect class="deferred" x="${x.toFixed(2)}" y="${bandTop}" width="${w.toFixed(2)}" height="${bandHeight}" fill="#3d7bd9" opacity="0.30"/>`,
      );
    }
    if (seg.error) {
      parts.push(
        `<rect class="error" x="${x.toFixed(2)}" y="${bandTop}" width="${w.toFixed(2)}" height="${bandHeight}" fill="#d64545" opacity="0.35"/>`,
      );
    }
  }

  const steps: string[] = [];
  view.segments.forEach((seg, i) => {
    const y = rowOf(seg.stage).toFixed(2);
    const x0 = xOf(i).toFixed(2);
    const x1 = xOf(i + 1).toFixed(2);
    steps.push(`${i === 0 ? "M" : "L"}${x0} ${y} L${x1} ${y}`);
  });
  parts.push(
    `<path class="stages" d="${steps.join(" ")}" fill="none" stroke="#222" stroke-width="1.4"/>`,
  );
  parts.push("</svg>");
  return parts.join("\n");
}
