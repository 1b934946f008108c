// Browser entry point: wires the tested flow/render modules to the DOM.

import { ApiClient, ApiError } from "./api.js";
import { DeferralReviewFlow } from "./deferral.js";
import { buildHypnogramView, renderHypnogram } from "./hypnogram.js";
import { LabelQueueFlow } from "./labeling.js";
import { buildUncertaintyMap, renderUncertaintyMap, type MapMetric } from "./scatter.js";
import { STAGE_NAMES } from "./stages.js";
import type {
  ALSessionSummary,
  CoordsRow,
  DeferralSessionSummary,
  MetricsRow,
  QueryItem,
  ScoreRow,
} from "./types.js";

const api = new ApiClient("");

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

function fmt(x: number | null | undefined, digits = 4): string {
  return x === null || x === undefined ? "n/a" : x.toFixed(digits);
}

class App {
  root = document.getElementById("app")!;
  banner = el("div", { class: "banner" });
  status = el("div", { class: "status" });
  content = el("div", { class: "content" });
  simulation = false;
  recordings: string[] = [];
  labelFlow: LabelQueueFlow | null = null;
  deferralFlow: DeferralReviewFlow | null = null;
  currentItem: QueryItem | null = null;
  queried = new Set<string>();

  async start(): Promise<void> {
    const ws = await api.getWorkspace();
    this.simulation = ws.simulation;
    this.recordings = ws.recordings;
    this.banner.textContent = this.simulation
      ? "SIMULATION session - answers come from a ground-truth oracle, not a clinician"
      : "LIVE session";
    this.banner.className = this.simulation ? "banner simulation" : "banner live";

    const nav = el("nav");
    for (const [id, label] of [
      ["label", "Labeling"],
      ["deferral", "Deferral review"],
      ["hypnogram", "Hypnogram"],
      ["map", "Uncertainty map"],
    ] as const) {
      const btn = el("button", { "data-tab": id }, label);
      btn.addEventListener("click", () => void this.show(id));
      nav.append(btn);
    }
    this.root.append(this.banner, nav, this.status, this.content);
    document.addEventListener("keydown", (ev) => this.onKey(ev));
    await this.show("label");
  }

  setStatus(text: string): void {
    this.status.textContent = text;
  }

  async show(tab: "label" | "deferral" | "hypnogram" | "map"): Promise<void> {
    this.content.replaceChildren();
    try {
      if (tab === "label") await this.showLabeling();
      else if (tab === "deferral") await this.showDeferral();
      else if (tab === "hypnogram") await this.showHypnogram();
      else await this.showMap();
    } catch (err) {
      const message = err instanceof ApiError ? `${err.status}: ${err.message}` : String(err);
      this.content.append(el("p", { class: "error" }, message));
    }
  }

  private onKey(ev: KeyboardEvent): void {
    const idx = Number.parseInt(ev.key, 10) - 1;
    if (idx >= 0 && idx < STAGE_NAMES.length && this.labelFlow && this.currentItem) {
      this.assignStage(this.currentItem.sample_id, idx);
    }
  }

  // ---- labeling ---------------------------------------------------------

  private async ensureLabelSession(): Promise<void> {
    if (this.labelFlow !== null) return;
    const recording = this.recordings[0];
    if (recording === undefined) throw new Error("workspace has no recordings");
    let summary: ALSessionSummary;
    try {
      summary = (await api.createSession(recording, "active_learning")) as ALSessionSummary;
    } catch (err) {
      if (!(err instanceof ApiError && err.status === 409)) throw err;
      throw new Error(`a session for ${recording} is already running in another window`);
    }
    this.labelFlow = new LabelQueueFlow(api, summary.session_id, window.localStorage);
  }

  private assignStage(sampleId: string, stage: number): void {
    this.labelFlow?.setAnswer(sampleId, stage);
    void this.showLabeling();
  }

  private async showLabeling(): Promise<void> {
    await this.ensureLabelSession();
    const flow = this.labelFlow!;
    if (flow.batch === null && !flow.finished) await flow.refresh();
    if (flow.finished) {
      this.content.append(el("p", {}, "Session finished - all querying epochs are complete."));
      return;
    }
    const batch = flow.batch!;
    const session = (await api.getSession(flow.sessionId)) as ALSessionSummary;
    this.setStatus(
      `session ${flow.sessionId} | epoch ${session.epoch}/${session.total_epochs} | ` +
        `labeled ${session.labeled_count} | accuracy ${fmt(session.accuracy)}`,
    );
    this.queried = new Set([...Object.keys(session.labeled), ...batch.items.map((i) => i.sample_id)]);

    const list = el("div", { class: "queue" });
    for (const item of batch.items) {
      const row = el("div", { class: "query-item" });
      row.append(el("span", { class: "sid" }, item.sample_id));
      row.append(
        el("span", { class: "probs" }, `p=[${item.probs.map((p) => p.toFixed(3)).join(", ")}]`),
      );
      if (item.explanation) {
        row.append(
          el(
            "span",
            { class: "explain" },
            `d=${String(item.explanation.mean_neighbor_distance)} ` +
              `c=${String(item.explanation.mean_neighbor_confidence)}`,
          ),
        );
      }
      const picked = flow.answers.get(item.sample_id);
      STAGE_NAMES.forEach((name, idx) => {
        const btn = el(
          "button",
          { class: picked === idx ? "stage picked" : "stage" },
          `${idx + 1}:${name}`,
        );
        btn.addEventListener("click", () => this.assignStage(item.sample_id, idx));
        row.append(btn);
      });
      row.addEventListener("mouseenter", () => (this.currentItem = item));
      list.append(row);
    }
    const submit = el("button", { class: "submit" }, `Submit ${batch.items.length} labels`);
    submit.disabled = !flow.complete;
    submit.addEventListener("click", async () => {
      const result = await flow.submit();
      if (result.status === "applied") {
        this.setStatus(`epoch advanced to ${(result.summary as ALSessionSummary).epoch}`);
      } else if (result.status === "stale") {
        this.setStatus("batch was superseded - reloaded the current queue, nothing lost");
      } else if (result.status === "offline") {
        this.setStatus("network failure - answers kept locally, try again");
      }
      await this.show("label");
    });
    this.content.append(list, submit);
  }

  // ---- deferral review --------------------------------------------------

  private async ensureDeferralSession(): Promise<void> {
    if (this.deferralFlow !== null) return;
    const summary = (await api.createSession("all", "deferral_review")) as DeferralSessionSummary;
    this.deferralFlow = new DeferralReviewFlow(api, summary.session_id);
  }

  private async showDeferral(): Promise<void> {
    await this.ensureDeferralSession();
    const flow = this.deferralFlow!;
    await flow.load();
    this.setStatus(
      `deferral queue: ${flow.remaining} open of ${flow.items.length} ` +
        `| corrected accuracy ${fmt(flow.correctedAccuracy)}`,
    );
    const list = el("div", { class: "queue" });
    for (const item of flow.items) {
      const row = el("div", { class: item.resolved ? "defer-item resolved" : "defer-item" });
      row.append(el("span", { class: "rank" }, `#${item.rank}`));
      row.append(el("span", { class: "sid" }, item.sample_id));
      row.append(el("span", { class: "score" }, `score=${String(item.score)}`));
      if (item.explanation) {
        row.append(
          el(
            "span",
            { class: "explain" },
            `neighbor distance=${String(item.explanation.mean_neighbor_distance)} ` +
              `neighbor confidence=${String(item.explanation.mean_neighbor_confidence)}`,
          ),
        );
      }
      if (item.prediction !== null) {
        row.append(el("span", { class: "pred" }, `model: ${STAGE_NAMES[item.prediction] ?? "?"}`));
      }
      const actions = el("span", { class: "actions" });
      const make = (label: string, fn: () => Promise<unknown>) => {
        const btn = el("button", {}, label);
        btn.disabled = !flow.canResolve(item.sample_id);
        btn.addEventListener("click", async () => {
          await fn();
          await this.show("deferral");
        });
        actions.append(btn);
      };
      STAGE_NAMES.forEach((name, idx) =>
        make(name, () => flow.resolve(item.sample_id, "relabel", idx)),
      );
      make("confirm", () => flow.resolve(item.sample_id, "confirm_model"));
      make("skip", () => flow.resolve(item.sample_id, "skip"));
      row.append(actions);
      if (item.resolved) {
        row.append(el("span", { class: "decision" }, `resolved: ${item.decision}`));
      }
      list.append(row);
    }
    this.content.append(list);
  }

  // ---- hypnogram and map ------------------------------------------------

  private async showHypnogram(): Promise<void> {
    const recording = this.recordings[0];
    if (recording === undefined) throw new Error("workspace has no recordings");
    const artifact = await api.getRecording(recording);
    const deferred = new Set(this.deferralFlow?.items.map((i) => i.sample_id) ?? []);
    const view = buildHypnogramView(artifact, { queried: this.queried, deferred });
    const holder = el("div", { class: "hypnogram" });
    holder.innerHTML = renderHypnogram(view);
    this.content.append(
      el("p", {}, `${recording}: grey = queried, red = error (simulation), blue = deferred`),
      holder,
    );
  }

  private async showMap(): Promise<void> {
    const [coords, metrics] = await Promise.all([
      api.getArtifact<{ items: CoordsRow[] }>("coords"),
      api.getArtifact<{ items: MetricsRow[] }>("metrics"),
    ]);
    const metricSel = el("select");
    for (const m of ["v_al", "v_ep", "c"] as MapMetric[]) {
      metricSel.append(el("option", { value: m }, m));
    }
    const holder = el("div", { class: "map" });
    const draw = () => {
      const usable = coords.items.filter((c) =>
        metrics.items.some((m) => m.sample_id === c.sample_id),
      );
      const map = buildUncertaintyMap(
        usable,
        metrics.items,
        metricSel.value as MapMetric,
        1.0,
      );
      holder.innerHTML = renderUncertaintyMap(map);
      this.setStatus(`uncertainty map: ${map.highlightCount} samples in the top 1% (black)`);
    };
    metricSel.addEventListener("change", draw);
    this.content.append(metricSel, holder);
    draw();
  }
}

void new App().start();
