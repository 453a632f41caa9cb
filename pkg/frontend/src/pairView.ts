// Side-by-side pairwise review: the query, both candidates of one stored
// comparison, the model's verdict and explanation, and a three-way control
// for the human verdict. Keyboard: "1" = candidate 1 better, "2" =
// candidate 2 better, "0" = tie.

import { el } from "./dom.js";
import type { PairVerdict, ReviewItem } from "./types.js";

export interface PairViewHandles {
  root: HTMLElement;
  /** currently selected human verdict */
  getVerdict(): -1 | 0 | 1;
  setVerdict(v: -1 | 0 | 1): void;
  submitButton: HTMLButtonElement;
  /** install keyboard shortcuts on a target (usually document) */
  bindKeys(target: EventTarget): () => void;
}

const VERDICT_LABELS: Record<string, string> = {
  "1": "candidate 1 is the better match",
  "0": "equal / uncertain",
  "-1": "candidate 2 is the better match",
};

export function findPair(
  item: ReviewItem,
  docFirst: string,
  docSecond: string,
): PairVerdict | undefined {
  return item.verdicts.find((v) => v.doc_first === docFirst && v.doc_second === docSecond);
}

/** Effective verdict for a stored pair: human override if present. */
export function effectiveVerdict(item: ReviewItem, pair: PairVerdict): number {
  const key = `${pair.doc_first}||${pair.doc_second}`;
  return item.overrides[key] ?? pair.verdict;
}

export function renderPair(
  item: ReviewItem,
  docFirst: string,
  docSecond: string,
  onChanged?: () => void,
): PairViewHandles {
  const root = el("section", { class: "pair-view" });
  const pair = findPair(item, docFirst, docSecond);
  if (!pair) {
    root.append(
      el("p", { class: "inline-error", role: "alert" },
         `Unknown pair (${docFirst}, ${docSecond}) for this item.`),
    );
    return {
      root,
      getVerdict: () => 0,
      setVerdict: () => undefined,
      submitButton: el("button", { disabled: "disabled" }, "submit"),
      bindKeys: () => () => undefined,
    };
  }

  root.append(
    el("div", { class: "query-panel" },
       el("h3", {}, `Query ${item.query_id}`),
       el("pre", { class: "doc-text" }, item.query_text)),
  );

  const columns = el("div", { class: "pair-columns" });
  for (const [slot, docId] of [["1", pair.doc_first], ["2", pair.doc_second]] as const) {
    columns.append(
      el("article", { class: "candidate-panel", "data-doc": docId },
         el("h4", {}, `Candidate ${slot}: ${docId}`),
         // full stored text, scrollable via CSS; never truncated here
         el("pre", { class: "doc-text" }, item.candidates[docId] ?? "")),
    );
  }
  root.append(columns);

  const verdictText = VERDICT_LABELS[String(pair.verdict)];
  root.append(
    el("div", { class: "llm-verdict" },
       el("strong", {}, "Model verdict: "),
       `${pair.verdict} (${verdictText})`,
       pair.parse_failed ? el("span", { class: "flag" }, " [unparseable reply, defaulted]") : ""),
    el("blockquote", { class: "explanation" },
       pair.explanation ?? "(no explanation provided)"),
  );

  const current = effectiveVerdict(item, pair);
  const controls = el("div", { class: "verdict-controls", role: "radiogroup" });
  const inputs = new Map<number, HTMLInputElement>();
  for (const value of [1, 0, -1]) {
    const input = el("input", {
      type: "radio",
      name: "human-verdict",
      value: String(value),
    }) as HTMLInputElement;
    input.checked = value === current;
    input.addEventListener("change", () => onChanged?.());
    inputs.set(value, input);
    controls.append(el("label", { class: "verdict-option" }, input, ` ${VERDICT_LABELS[String(value)]}`));
  }
  const submitButton = el("button", { class: "submit-pair" }, "Save pair verdict") as HTMLButtonElement;
  root.append(controls, el("p", { class: "hint" }, "keys: 1 / 0 / 2"), submitButton);

  const getVerdict = (): -1 | 0 | 1 => {
    for (const [value, input] of inputs) {
      if (input.checked) return value as -1 | 0 | 1;
    }
    return 0;
  };
  const setVerdict = (v: -1 | 0 | 1) => {
    const input = inputs.get(v);
    if (input && !input.checked) {
      input.checked = true;
      onChanged?.();
    }
  };

  const bindKeys = (target: EventTarget) => {
    const handler = (event: Event) => {
      const key = (event as KeyboardEvent).key;
      if (key === "1") setVerdict(1);
      else if (key === "2") setVerdict(-1);
      else if (key === "0") setVerdict(0);
    };
    target.addEventListener("keydown", handler);
    return () => target.removeEventListener("keydown", handler);
  };

  return { root, getVerdict, setVerdict, submitButton, bindKeys };
}
