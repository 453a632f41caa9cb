// List review: the server's current ranking in server order (the UI never
// re-sorts authority data), with move up/down controls building a corrected
// order for a correct(order) submission.

import { el } from "./dom.js";
import { currentRanking, type ReviewItem } from "./types.js";

export interface ListViewHandles {
  root: HTMLElement;
  /** the order currently shown, top to bottom */
  getOrder(): string[];
  submitButton: HTMLButtonElement;
}

export function renderList(item: ReviewItem, onChanged?: () => void): ListViewHandles {
  const root = el("section", { class: "list-view" });
  root.append(
    el("div", { class: "query-panel" },
       el("h3", {}, `Query ${item.query_id}`),
       el("pre", { class: "doc-text" }, item.query_text)),
  );

  const list = el("ol", { class: "ranking" });
  // exactly the server's order for the revision we hold
  for (const entry of currentRanking(item)) {
    const li = el("li", { class: "ranking-entry", "data-doc": entry.doc_id },
      el("span", { class: "rank" }, `#${entry.rank}`),
      el("span", { class: "doc-id" }, entry.doc_id),
      el("span", { class: "score" }, entry.score === null ? "" : ` score ${entry.score}`),
      el("details", {},
         el("summary", {}, "text"),
         el("pre", { class: "doc-text" }, item.candidates[entry.doc_id] ?? ""),
         el("p", { class: "explanation" },
            item.explanations[entry.doc_id] ?? "(no explanation provided)")),
    );
    const up = el("button", { class: "move-up", title: "move up" }, "▲") as HTMLButtonElement;
    const down = el("button", { class: "move-down", title: "move down" }, "▼") as HTMLButtonElement;
    up.addEventListener("click", () => {
      const prev = li.previousElementSibling;
      if (prev) {
        list.insertBefore(li, prev);
        onChanged?.();
      }
    });
    down.addEventListener("click", () => {
      const next = li.nextElementSibling;
      if (next) {
        list.insertBefore(next, li);
        onChanged?.();
      }
    });
    li.append(up, down);
    list.append(li);
  }
  const submitButton = el("button", { class: "submit-order" }, "Save corrected order") as HTMLButtonElement;
  root.append(list, submitButton);

  const getOrder = () =>
    Array.from(list.querySelectorAll<HTMLElement>(".ranking-entry")).map(
      (node) => node.dataset.doc as string,
    );

  return { root, getOrder, submitButton };
}
