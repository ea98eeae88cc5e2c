/** DOM wiring. All review logic lives in ReviewSession and the pure render
 * helpers; this module only builds elements, paints, and forwards events, so
 * it is exercised by the type checker rather than unit tests.
 */

import { ApiClient, SpectrogramDoc } from "./api.js";
import { ReviewSession } from "./state.js";
import { frequencyTicks, renderHeatmap, timeTicks } from "./spectrogram.js";
import { bindKeys } from "./keyboard.js";

const SCALE = 5; // device pixels per spectrogram cell
const MARGIN = { left: 64, right: 12, top: 12, bottom: 34 };

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function drawSpectrogram(canvas: HTMLCanvasElement, doc: SpectrogramDoc): void {
  const raster = renderHeatmap(doc.values);
  const plotW = raster.width * SCALE;
  const plotH = raster.height * SCALE;
  canvas.width = MARGIN.left + plotW + MARGIN.right;
  canvas.height = MARGIN.top + plotH + MARGIN.bottom;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;

  const source = document.createElement("canvas");
  source.width = raster.width;
  source.height = raster.height;
  const sctx = source.getContext("2d");
  if (!sctx) return;
  sctx.putImageData(new ImageData(raster.pixels, raster.width, raster.height), 0, 0);

  ctx.fillStyle = "#10141a";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(source, MARGIN.left, MARGIN.top, plotW, plotH);

  ctx.fillStyle = "#c8d1dc";
  ctx.strokeStyle = "#c8d1dc";
  ctx.font = "12px system-ui, sans-serif";
  ctx.textAlign = "right";
  ctx.textBaseline = "middle";
  for (const tick of frequencyTicks(doc)) {
    const y = MARGIN.top + (1 - tick.pos) * plotH;
    ctx.beginPath();
    ctx.moveTo(MARGIN.left - 6, y);
    ctx.lineTo(MARGIN.left, y);
    ctx.stroke();
    ctx.fillText(tick.label, MARGIN.left - 9, y);
  }
  ctx.textAlign = "center";
  ctx.textBaseline = "top";
  const frames = doc.values.length > 0 ? doc.values[0].length : 0;
  for (const tick of timeTicks(doc.seconds_per_frame, frames)) {
    const x = MARGIN.left + tick.pos * plotW;
    ctx.beginPath();
    ctx.moveTo(x, MARGIN.top + plotH);
    ctx.lineTo(x, MARGIN.top + plotH + 6);
    ctx.stroke();
    ctx.fillText(tick.label, x, MARGIN.top + plotH + 9);
  }
}

export function startApp(root: HTMLElement, api = new ApiClient()): ReviewSession {
  const session = new ReviewSession(api);

  const noticeBox = el("div", "notice");
  const queueBox = el("ul", "queue");
  const canvas = el("canvas", "spectrogram");
  const audio = el("audio");
  audio.controls = true;
  const audioNote = el("div", "audio-note");
  const inspectTitle = el("h2", undefined, "no candidate selected");
  const statsBox = el("dl", "stats");
  const tallyBox = el("div", "tally");
  const retry = el("button", undefined, "retry");
  retry.addEventListener("click", () => void session.refresh());
  const confirmBtn = el("button", "confirm", "confirm (y)");
  confirmBtn.addEventListener("click", () => void session.decide("confirm"));
  const rejectBtn = el("button", "reject", "reject (n)");
  rejectBtn.addEventListener("click", () => void session.decide("reject"));

  const header = el("header");
  header.append(el("h1", undefined, "call review"), noticeBox);
  const queuePane = el("section", "pane queue-pane");
  queuePane.append(el("h2", undefined, "queue"), retry, queueBox);
  const inspectPane = el("section", "pane inspect-pane");
  inspectPane.append(inspectTitle, canvas, audio, audioNote, confirmBtn, rejectBtn);
  const progressPane = el("section", "pane progress-pane");
  progressPane.append(el("h2", undefined, "progress"), tallyBox, statsBox);
  root.append(header, queuePane, inspectPane, progressPane);

  const spectrograms = new Map<string, SpectrogramDoc>();
  let shownId: string | null = null;

  async function showCurrent(): Promise<void> {
    const entry = session.current();
    if (!entry) {
      inspectTitle.textContent = session.pendingCount() === 0 ? "queue is empty" : "";
      shownId = null;
      return;
    }
    const { id, session_id, window_start_s, score } = entry.doc;
    if (id === shownId) return;
    shownId = id;
    inspectTitle.textContent = `${session_id} @ ${window_start_s.toFixed(1)}s  score ${score.toFixed(3)}`;
    audioNote.textContent = "";
    audio.src = api.audioUrl(id);
    try {
      let doc = spectrograms.get(id);
      if (!doc) {
        doc = await api.spectrogram(id);
        spectrograms.set(id, doc);
      }
      if (shownId === id) drawSpectrogram(canvas, doc);
    } catch (err) {
      audioNote.textContent = `spectrogram unavailable: ${err instanceof Error ? err.message : err}`;
    }
  }

  async function refreshStats(): Promise<void> {
    try {
      const stats = await api.stats();
      statsBox.replaceChildren();
      const rows: [string, string][] = [
        ["pending", String(stats.pending)],
        ["confirmed", String(stats.confirmed)],
        ["rejected", String(stats.rejected)],
        ["corpus positives", `${stats.n_pos} / ${stats.n_pos + stats.n_neg}`],
        ["positive rate", `${(stats.positive_rate * 100).toFixed(2)}%`],
      ];
      for (const [k, v] of rows) {
        statsBox.append(el("dt", undefined, k), el("dd", undefined, v));
      }
    } catch {
      // stats are advisory; the next refresh retries
    }
  }

  let lastReviewed = 0;
  session.subscribe(() => {
    noticeBox.textContent = session.notice?.text ?? "";
    noticeBox.dataset.kind = session.notice?.kind ?? "";
    retry.hidden = session.phase !== "error";
    const offline = !session.online;
    confirmBtn.disabled = offline || session.current() === null;
    rejectBtn.disabled = confirmBtn.disabled;
    if (session.phase === "error") {
      queueBox.replaceChildren(el("li", "error", `queue unavailable: ${session.loadError}`));
    } else {
      queueBox.replaceChildren(
        ...session.entries.map((entry) => {
          const row = el(
            "li",
            entry.local,
            `${entry.doc.score.toFixed(3)}  ${entry.doc.session_id} @ ${entry.doc.window_start_s.toFixed(1)}s  [${entry.local}]`,
          );
          if (entry.doc.id === session.cursorId) row.classList.add("cursor");
          return row;
        }),
      );
    }
    tallyBox.textContent =
      `reviewed ${session.tally.reviewed}  confirmed ${session.tally.confirmed}  ` +
      `rejected ${session.tally.rejected}  remaining ${session.pendingCount()}`;
    void showCurrent();
    if (session.tally.reviewed !== lastReviewed) {
      lastReviewed = session.tally.reviewed;
      void refreshStats();
    }
  });

  bindKeys(window, {
    confirm: () => void session.decide("confirm"),
    reject: () => void session.decide("reject"),
    next: () => session.next(),
    prev: () => session.prev(),
    play: () => {
      audio.currentTime = 0;
      void audio.play().catch(() => {
        audioNote.textContent = "audio unavailable; review from the spectrogram";
      });
    },
    refresh: () => void session.refresh(),
  });
  audio.addEventListener("error", () => {
    audioNote.textContent = "audio unavailable; review from the spectrogram";
  });
  window.addEventListener("online", () => session.setOnline(true));
  window.addEventListener("offline", () => session.setOnline(false));

  void session.refresh().then(refreshStats);
  return session;
}
