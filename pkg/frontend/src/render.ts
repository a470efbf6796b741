import { WorkbenchStore } from "./store";
import { Candidate, WorkbenchState } from "./types";

const encoder = new TextEncoder();
const decoder = new TextDecoder();

interface Segment {
  text: string;
  placeholder: string | null;
}

/** Split the function text into literal chunks and slot occurrences,
 * substituting chosen names into slot segments for display. */
export function segments(state: WorkbenchState): Segment[] {
  const data = encoder.encode(state.text);
  const occurrences: { start: number; end: number; placeholder: string }[] = [];
  for (const [placeholder, slot] of Object.entries(state.slots)) {
    for (const [start, end] of slot.spans) {
      occurrences.push({ start, end, placeholder });
    }
  }
  occurrences.sort((a, b) => a.start - b.start);
  const out: Segment[] = [];
  let cursor = 0;
  for (const { start, end, placeholder } of occurrences) {
    if (start > cursor) {
      out.push({ text: decoder.decode(data.slice(cursor, start)), placeholder: null });
    }
    const status = state.slots[placeholder].status;
    const shown =
      status.kind === "pending" ? decoder.decode(data.slice(start, end)) : status.name;
    out.push({ text: shown, placeholder });
    cursor = end;
  }
  if (cursor < data.length) {
    out.push({ text: decoder.decode(data.slice(cursor)), placeholder: null });
  }
  return out;
}

function probBar(candidate: Candidate): string {
  const width = Math.round(candidate.mean_prob * 100);
  return `<span class="prob-bar"><span style="width:${width}%"></span></span>`;
}

export function render(root: HTMLElement, store: WorkbenchStore): void {
  const state = store.getState();
  root.innerHTML = "";

  const banner = document.createElement("div");
  banner.className = "banner";
  if (state.error) {
    banner.classList.add("error");
    banner.textContent = state.error + " ";
    const retry = document.createElement("button");
    retry.textContent = "retry";
    retry.onclick = () => void store.refresh();
    banner.appendChild(retry);
  } else if (state.modelInfo) {
    banner.textContent =
      `model ${state.modelInfo.checkpoint_hash.slice(0, 12)} | ` +
      `${state.modelInfo.param_count.toLocaleString()} parameters | ` +
      `vocab ${state.modelInfo.vocab_hash.slice(0, 12)}` +
      (state.requestInFlight ? " | predicting..." : "");
  }
  root.appendChild(banner);

  const code = document.createElement("pre");
  code.className = "code";
  for (const segment of segments(state)) {
    if (segment.placeholder === null) {
      code.appendChild(document.createTextNode(segment.text));
    } else {
      const span = document.createElement("span");
      const status = state.slots[segment.placeholder].status;
      span.className = `slot ${status.kind}`;
      span.textContent = segment.text;
      span.title = segment.placeholder;
      code.appendChild(span);
    }
  }
  root.appendChild(code);

  const panels = document.createElement("div");
  panels.className = "panels";
  for (const [placeholder, slot] of Object.entries(state.slots)) {
    const panel = document.createElement("div");
    panel.className = "panel";
    const title = document.createElement("h3");
    if (slot.status.kind === "pending") {
      title.textContent = placeholder;
    } else {
      title.textContent = `${placeholder} -> ${slot.status.name} (${slot.status.kind})`;
    }
    panel.appendChild(title);

    if (slot.status.kind === "pending") {
      const ranked = state.suggestions[placeholder] ?? [];
      for (const candidate of ranked) {
        const row = document.createElement("div");
        row.className = "candidate";
        row.innerHTML =
          `<code>${candidate.name}</code> ` +
          `<small>${candidate.count} token${candidate.count === 1 ? "" : "s"}, ` +
          `p=${candidate.mean_prob.toFixed(3)}</small> ${probBar(candidate)}`;
        const accept = document.createElement("button");
        accept.textContent = "accept";
        accept.disabled = state.requestInFlight;
        accept.onclick = () => void store.acceptSuggestion(placeholder, candidate.name);
        row.appendChild(accept);
        panel.appendChild(row);
      }
      const custom = document.createElement("input");
      custom.placeholder = "type a name...";
      const apply = document.createElement("button");
      apply.textContent = "use";
      apply.onclick = () => void store.overrideName(placeholder, custom.value.trim());
      panel.appendChild(custom);
      panel.appendChild(apply);
    }
    panels.appendChild(panel);
  }
  root.appendChild(panels);

  const controls = document.createElement("div");
  controls.className = "controls";
  const undo = document.createElement("button");
  undo.textContent = "undo";
  undo.disabled = !store.canUndo();
  undo.onclick = () => void store.undo();
  controls.appendChild(undo);

  const exportBtn = document.createElement("button");
  exportBtn.textContent = "export";
  exportBtn.disabled = !store.isComplete();
  exportBtn.onclick = () => {
    const result = store.exportResult();
    const blob = new Blob([JSON.stringify(result, null, 2)], { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = "renamed.json";
    link.click();
  };
  controls.appendChild(exportBtn);
  root.appendChild(controls);
}

export function mount(root: HTMLElement, store: WorkbenchStore): void {
  store.subscribe(() => render(root, store));
  render(root, store);
}
