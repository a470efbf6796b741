import { ServiceClient } from "./api";
import { mount } from "./render";
import { WorkbenchStore } from "./store";
import { SlotDecl } from "./types";

declare global {
  interface Window {
    workbench: {
      store: WorkbenchStore;
      load: (text: string, slots: SlotDecl[]) => Promise<void>;
    };
  }
}

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("service") ?? "http://127.0.0.1:8571";

const client = new ServiceClient(baseUrl);
const store = new WorkbenchStore(client, { k: 5 });

const root = document.getElementById("workbench");
if (!root) {
  throw new Error("missing #workbench element");
}
mount(root, store);
void store.loadModelInfo();

// Expose a tiny console API so a function can be loaded from the devtools
// or by an embedding page: window.workbench.load(text, slots).
window.workbench = {
  store,
  load: (text, slots) => store.loadFunction(text, slots),
};

const sample = document.getElementById("load-sample");
if (sample) {
  sample.addEventListener("click", () => {
    const text = "long sum_demo(long *v1, long v2) {\n  long v3 = 0;\n  for (long q = 0; q < v2; q = q + 1) {\n    v3 = v3 + v1[q];\n  }\n  return v3;\n}";
    const slots: SlotDecl[] = [];
    for (const placeholder of ["v1", "v2", "v3"]) {
      const spans: [number, number][] = [];
      let at = 0;
      for (;;) {
        const idx = text.indexOf(placeholder, at);
        if (idx < 0) break;
        spans.push([idx, idx + placeholder.length]);
        at = idx + placeholder.length;
      }
      slots.push({ placeholder, spans });
    }
    void store.loadFunction(text, slots);
  });
}
