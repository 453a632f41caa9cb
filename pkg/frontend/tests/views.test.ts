import { describe, expect, it } from "vitest";

import { renderList } from "../src/listView.js";
import { effectiveVerdict, findPair, renderPair } from "../src/pairView.js";
import { pcsItem } from "./mockServer.js";

describe("pair view", () => {
  it("unknown pair renders an inline error", () => {
    const view = renderPair(pcsItem(), "A", "Z");
    expect(view.root.querySelector(".inline-error")!.textContent).toContain("(A, Z)");
    expect(view.submitButton.disabled).toBe(true);
  });

  it("missing explanation shows a placeholder and keeps the control active", () => {
    const item = pcsItem();
    for (const v of item.verdicts) v.explanation = null;
    const view = renderPair(item, "A", "B");
    expect(view.root.querySelector(".explanation")!.textContent).toContain(
      "no explanation provided",
    );
    view.setVerdict(0);
    expect(view.getVerdict()).toBe(0);
  });

  it("human override is reflected as the effective verdict", () => {
    const item = pcsItem();
    item.overrides["B||C"] = -1;
    const pair = findPair(item, "B", "C")!;
    expect(pair.verdict).toBe(1);
    expect(effectiveVerdict(item, pair)).toBe(-1);
  });

  it("flags verdicts that came from unparseable replies", () => {
    const item = pcsItem();
    item.verdicts[0].parse_failed = true;
    const view = renderPair(item, item.verdicts[0].doc_first, item.verdicts[0].doc_second);
    expect(view.root.querySelector(".flag")!.textContent).toContain("unparseable");
  });
});

describe("list view", () => {
  it("renders exactly the server order, even when scores look unsorted", () => {
    const item = pcsItem();
    // a corrected ranking from the server is authoritative; the view must
    // not re-sort it client-side
    item.corrected = [
      { doc_id: "C", score: null, rank: 1 },
      { doc_id: "A", score: null, rank: 2 },
      { doc_id: "B", score: null, rank: 3 },
    ];
    const view = renderList(item);
    expect(view.getOrder()).toEqual(["C", "A", "B"]);
  });

  it("move buttons reorder and report the displayed order", () => {
    let changes = 0;
    const view = renderList(pcsItem(), () => {
      changes += 1;
    });
    expect(view.getOrder()).toEqual(["A", "B", "C"]);
    const entries = view.root.querySelectorAll<HTMLElement>(".ranking-entry");
    (entries[2].querySelector(".move-up") as HTMLButtonElement).click();
    expect(view.getOrder()).toEqual(["A", "C", "B"]);
    expect(changes).toBe(1);
    (entries[0].querySelector(".move-down") as HTMLButtonElement).click();
    expect(view.getOrder()).toEqual(["C", "A", "B"]);
  });
});
