import { ServiceClient, ServiceError } from "./api";
import { acceptedFingerprint } from "./fingerprint";
import {
  Candidate,
  ExportRecord,
  SlotDecl,
  SlotState,
  WorkbenchState,
} from "./types";

const encoder = new TextEncoder();
const decoder = new TextDecoder();

/** Replace byte spans with replacement strings, cumulative offsets handled. */
export function substituteSpans(
  text: string,
  groups: { spans: [number, number][]; replacement: string }[],
): string {
  const data = encoder.encode(text);
  const tagged: { start: number; end: number; replacement: string }[] = [];
  for (const group of groups) {
    for (const [start, end] of group.spans) {
      tagged.push({ start, end, replacement: group.replacement });
    }
  }
  tagged.sort((a, b) => a.start - b.start);
  const pieces: Uint8Array[] = [];
  let cursor = 0;
  for (const { start, end, replacement } of tagged) {
    pieces.push(data.slice(cursor, start));
    pieces.push(encoder.encode(replacement));
    cursor = end;
  }
  pieces.push(data.slice(cursor));
  const total = pieces.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const piece of pieces) {
    out.set(piece, offset);
    offset += piece.length;
  }
  return decoder.decode(out);
}

export function validateSlots(text: string, slots: SlotDecl[]): string | null {
  const data = encoder.encode(text);
  const seen = new Set<string>();
  const all: [number, number][] = [];
  for (const slot of slots) {
    if (seen.has(slot.placeholder)) {
      return `duplicate slot ${slot.placeholder}`;
    }
    seen.add(slot.placeholder);
    if (slot.spans.length === 0) {
      return `slot ${slot.placeholder} declares no occurrences`;
    }
    let covered: string | null = null;
    for (const [start, end] of slot.spans) {
      if (!(start >= 0 && start < end && end <= data.length)) {
        return `slot ${slot.placeholder} span (${start}, ${end}) out of bounds`;
      }
      const piece = decoder.decode(data.slice(start, end));
      if (covered === null) {
        covered = piece;
      } else if (covered !== piece) {
        return `slot ${slot.placeholder} spans cover differing text`;
      }
      all.push([start, end]);
    }
  }
  all.sort((a, b) => a[0] - b[0]);
  for (let i = 1; i < all.length; i++) {
    if (all[i][0] < all[i - 1][1]) {
      return `overlapping slot spans at byte ${all[i][0]}`;
    }
  }
  return null;
}

type Listener = (state: WorkbenchState) => void;

interface HistoryEntry {
  slots: Record<string, SlotState>;
}

/** Single-writer state store driving the renaming workbench.
 *
 * Every user action issues at most one request. A response is applied only
 * when (a) it is the most recent request and (b) the accepted-set it was
 * computed for still fingerprint-matches the current state; anything else
 * is stale and dropped.
 */
export class WorkbenchStore {
  private state: WorkbenchState = {
    text: "",
    slots: {},
    suggestions: {},
    requestInFlight: false,
    error: null,
    modelInfo: null,
    loaded: false,
  };

  private listeners: Listener[] = [];
  private history: HistoryEntry[] = [];
  private requestToken = 0;
  private k: number;

  constructor(private readonly client: ServiceClient, options?: { k?: number }) {
    this.k = options?.k ?? 5;
  }

  getState(): WorkbenchState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private setState(update: Partial<WorkbenchState>): void {
    this.state = { ...this.state, ...update };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  acceptedNames(): Record<string, string> {
    const out: Record<string, string> = {};
    for (const [placeholder, slot] of Object.entries(this.state.slots)) {
      if (slot.status.kind !== "pending") {
        out[placeholder] = slot.status.name;
      }
    }
    return out;
  }

  pendingSlots(): string[] {
    return Object.entries(this.state.slots)
      .filter(([, slot]) => slot.status.kind === "pending")
      .map(([placeholder]) => placeholder);
  }

  isComplete(): boolean {
    return this.state.loaded && this.pendingSlots().length === 0;
  }

  async loadModelInfo(): Promise<void> {
    try {
      this.setState({ modelInfo: await this.client.modelInfo() });
    } catch (err) {
      this.setState({ error: describe(err) });
    }
  }

  /** Initialize from a function and its slot declarations; issues the first
   * predict request unless validation fails or there is nothing to name. */
  async loadFunction(text: string, slots: SlotDecl[]): Promise<void> {
    const problem = validateSlots(text, slots);
    if (problem !== null) {
      this.setState({ error: problem, loaded: false });
      return;
    }
    const slotStates: Record<string, SlotState> = {};
    for (const slot of slots) {
      slotStates[slot.placeholder] = { spans: slot.spans, status: { kind: "pending" } };
    }
    this.history = [];
    this.setState({
      text,
      slots: slotStates,
      suggestions: {},
      error: null,
      loaded: true,
    });
    if (slots.length > 0) {
      await this.refresh();
    }
  }

  /** Accept one of the displayed suggestions for a pending slot. */
  async acceptSuggestion(placeholder: string, name: string): Promise<void> {
    const slot = this.state.slots[placeholder];
    if (!slot || slot.status.kind !== "pending") {
      this.setState({ error: `slot ${placeholder} is not pending` });
      return;
    }
    const ranked = this.state.suggestions[placeholder] ?? [];
    const rank = ranked.findIndex((c) => c.name === name);
    if (rank < 0) {
      this.setState({ error: `${name} is not a current suggestion for ${placeholder}` });
      return;
    }
    this.pushHistory();
    this.setState({
      slots: {
        ...this.state.slots,
        [placeholder]: { ...slot, status: { kind: "accepted", name, rank: rank + 1 } },
      },
      error: null,
    });
    await this.refresh();
  }

  /** Fix a slot to a name the analyst typed themselves. */
  async overrideName(placeholder: string, name: string): Promise<void> {
    const slot = this.state.slots[placeholder];
    if (!slot || slot.status.kind !== "pending") {
      this.setState({ error: `slot ${placeholder} is not pending` });
      return;
    }
    if (!name) {
      this.setState({ error: "override name is empty" });
      return;
    }
    this.pushHistory();
    this.setState({
      slots: {
        ...this.state.slots,
        [placeholder]: { ...slot, status: { kind: "overridden", name } },
      },
      error: null,
    });
    await this.refresh();
  }

  /** Revert to the previous accepted-set and re-request suggestions. */
  async undo(): Promise<void> {
    const entry = this.history.pop();
    if (!entry) {
      this.setState({ error: "nothing to undo" });
      return;
    }
    this.setState({ slots: entry.slots, error: null });
    await this.refresh();
  }

  canUndo(): boolean {
    return this.history.length > 0;
  }

  /** Re-issue the predict request for the current accepted-set. */
  async refresh(): Promise<void> {
    if (!this.state.loaded) {
      return;
    }
    if (this.pendingSlots().length === 0) {
      this.setState({ suggestions: {}, requestInFlight: false });
      return;
    }
    const accepted = this.acceptedNames();
    const fingerprint = acceptedFingerprint(accepted);
    const token = ++this.requestToken;
    this.setState({ requestInFlight: true });
    let suggestions: Record<string, Candidate[]>;
    try {
      const response = await this.client.predict({
        code: this.state.text,
        slots: Object.entries(this.state.slots).map(([placeholder, slot]) => ({
          placeholder,
          spans: slot.spans.map(([s, e]) => [s, e]),
        })),
        accepted,
        k: this.k,
        mode: "heuristic",
      });
      suggestions = response.suggestions;
    } catch (err) {
      if (token === this.requestToken) {
        this.setState({ requestInFlight: false, error: describe(err) });
      }
      return;
    }
    // Stale-response gate: a newer request, or a changed accepted-set,
    // invalidates this response entirely.
    if (token !== this.requestToken) {
      return;
    }
    if (acceptedFingerprint(this.acceptedNames()) !== fingerprint) {
      return;
    }
    this.setState({ suggestions, requestInFlight: false, error: null });
  }

  /** Renamed function text plus the record of how each name was chosen. */
  exportResult(): ExportRecord {
    const groups: { spans: [number, number][]; replacement: string }[] = [];
    const names: ExportRecord["names"] = {};
    for (const [placeholder, slot] of Object.entries(this.state.slots)) {
      if (slot.status.kind === "pending") {
        continue;
      }
      groups.push({ spans: slot.spans, replacement: slot.status.name });
      names[placeholder] = {
        name: slot.status.name,
        source: slot.status.kind,
        rank: slot.status.kind === "accepted" ? slot.status.rank : null,
      };
    }
    return { renamedText: substituteSpans(this.state.text, groups), names };
  }

  private pushHistory(): void {
    const slots: Record<string, SlotState> = {};
    for (const [placeholder, slot] of Object.entries(this.state.slots)) {
      slots[placeholder] = { spans: slot.spans, status: { ...slot.status } };
    }
    this.history.push({ slots });
  }
}

function describe(err: unknown): string {
  if (err instanceof ServiceError) {
    return err.message;
  }
  return String(err);
}
