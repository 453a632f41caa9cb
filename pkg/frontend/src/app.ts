// Top-level controller: queue on the left, the open item on the right,
// instructions editor below. All mutations flow through ReviewApi and the
// displayed ranking is always the server's echo for the revision we hold.

import { ApiError, ConflictError, NetworkError, ReviewApi } from "./api.js";
import { clearBanners, showConflictDialog, showRetryBanner } from "./dialogs.js";
import { clear, el } from "./dom.js";
import { renderList } from "./listView.js";
import { renderPair } from "./pairView.js";
import {
  acceptServerItem,
  canNavigate,
  initialState,
  markDirty,
  openItem,
  type Mode,
  type ViewState,
} from "./state.js";
import type { Action, ItemSummary, PairVerdict, ReviewItem } from "./types.js";

export interface AppOptions {
  api?: ReviewApi;
  confirmFn?: (message: string) => boolean;
  promptFn?: (message: string) => string | null;
}

export class App {
  readonly api: ReviewApi;
  state: ViewState = initialState();
  private confirmFn: (message: string) => boolean;
  private promptFn: (message: string) => string | null;
  private queueHost!: HTMLElement;
  private itemHost!: HTMLElement;
  private noticeHost!: HTMLElement;
  private instructionsHost!: HTMLElement;
  private unbindKeys: (() => void) | null = null;
  private pairCursor = 0;

  constructor(private root: HTMLElement, options: AppOptions = {}) {
    this.api = options.api ?? new ReviewApi();
    this.confirmFn = options.confirmFn ?? ((msg) => window.confirm(msg));
    this.promptFn = options.promptFn ?? ((msg) => window.prompt(msg));
  }

  async start(): Promise<void> {
    clear(this.root);
    this.noticeHost = el("div", { class: "notices" });
    this.queueHost = el("aside", { class: "queue" });
    this.itemHost = el("main", { class: "item-host" }, el("p", {}, "Pick an item from the queue."));
    this.instructionsHost = el("section", { class: "instructions" });
    this.root.append(
      this.noticeHost,
      el("div", { class: "layout" }, this.queueHost, this.itemHost),
      this.instructionsHost,
    );
    await Promise.all([this.refreshQueue(), this.refreshInstructions()]);
  }

  // -- queue --------------------------------------------------------------

  async refreshQueue(status = "pending"): Promise<void> {
    const summaries = await this.api.listItems(status || undefined);
    clear(this.queueHost);
    const select = el("select", { class: "status-filter" }) as HTMLSelectElement;
    for (const value of ["pending", "accepted", "corrected", "rejected", ""]) {
      const option = el("option", { value }, value || "all") as HTMLOptionElement;
      option.selected = value === status;
      select.append(option);
    }
    select.addEventListener("change", () => void this.refreshQueue(select.value));
    this.queueHost.append(el("h2", {}, "Review queue"), select);
    const list = el("ul", { class: "queue-list" });
    for (const summary of summaries) {
      list.append(this.queueEntry(summary));
    }
    this.queueHost.append(list);
  }

  private queueEntry(summary: ItemSummary): HTMLElement {
    const button = el("button", { class: "queue-open", "data-id": summary.id },
      `${summary.query_id} · ${summary.method} · ${summary.status} · rev ${summary.revision}`,
    ) as HTMLButtonElement;
    button.addEventListener("click", () => void this.openById(summary.id));
    return el("li", {}, button);
  }

  async openById(id: string): Promise<void> {
    if (!canNavigate(this.state, this.confirmFn)) return;
    const item = await this.api.getItem(id);
    this.state = openItem(this.state, item);
    this.pairCursor = 0;
    this.renderItem();
  }

  // -- item view ----------------------------------------------------------

  setMode(mode: Mode): void {
    if (!this.state.item || this.state.mode === mode) return;
    if (!canNavigate(this.state, this.confirmFn)) return;
    this.state = { ...this.state, mode, dirty: false };
    this.renderItem();
  }

  /** unordered pairs shown once each, in stored order */
  pairsOf(item: ReviewItem): PairVerdict[] {
    const seen = new Set<string>();
    const pairs: PairVerdict[] = [];
    for (const v of item.verdicts) {
      const key = [v.doc_first, v.doc_second].slice().sort().join("||");
      if (!seen.has(key)) {
        seen.add(key);
        pairs.push(v);
      }
    }
    return pairs;
  }

  renderItem(): void {
    const item = this.state.item;
    if (!item) return;
    this.unbindKeys?.();
    this.unbindKeys = null;
    clear(this.itemHost);
    clearBanners(this.noticeHost);

    const header = el("header", { class: "item-header" },
      el("h2", {}, `${item.query_id} — ${item.method}`),
      el("span", { class: `status-chip status-${item.status}` }, item.status),
      el("span", { class: "revision" }, ` revision ${this.state.lastKnownRevision}`),
    );
    const acceptBtn = el("button", { class: "accept" }, "Accept") as HTMLButtonElement;
    const rejectBtn = el("button", { class: "reject" }, "Reject…") as HTMLButtonElement;
    acceptBtn.addEventListener("click", () => void this.submit({ type: "accept" }));
    rejectBtn.addEventListener("click", () => {
      const reason = this.promptFn("Why is this data point invalid?");
      if (reason !== null) {
        void this.submit({ type: "reject", reason: reason || undefined });
      }
    });
    const modeBar = el("div", { class: "mode-bar" });
    for (const mode of ["pair-review", "list-review"] as const) {
      const btn = el("button", {
        class: `mode-${mode}` + (this.state.mode === mode ? " active" : ""),
      }, mode) as HTMLButtonElement;
      if (mode === "pair-review" && item.verdicts.length === 0) btn.disabled = true;
      btn.addEventListener("click", () => this.setMode(mode));
      modeBar.append(btn);
    }
    header.append(acceptBtn, rejectBtn, modeBar);
    this.itemHost.append(header);

    if (this.state.mode === "pair-review" && item.verdicts.length > 0) {
      this.renderPairMode(item);
    } else {
      this.renderListMode(item);
    }
  }

  private renderPairMode(item: ReviewItem): void {
    const pairs = this.pairsOf(item);
    if (this.pairCursor >= pairs.length) this.pairCursor = 0;
    const pair = pairs[this.pairCursor];

    const nav = el("div", { class: "pair-nav" },
      el("span", {}, `pair ${this.pairCursor + 1} of ${pairs.length}`));
    const prev = el("button", { class: "pair-prev" }, "previous") as HTMLButtonElement;
    const next = el("button", { class: "pair-next" }, "next") as HTMLButtonElement;
    prev.addEventListener("click", () => this.movePair(-1, pairs.length));
    next.addEventListener("click", () => this.movePair(1, pairs.length));
    nav.append(prev, next);
    this.itemHost.append(nav);

    const view = renderPair(item, pair.doc_first, pair.doc_second, () => {
      this.state = markDirty(this.state);
    });
    view.submitButton.addEventListener("click", () => {
      void this.submit({
        type: "correct_pair",
        doc_first: pair.doc_first,
        doc_second: pair.doc_second,
        verdict: view.getVerdict(),
      });
    });
    this.unbindKeys = view.bindKeys(document);
    this.itemHost.append(view.root);
    this.itemHost.append(this.rankingPreview(item));
  }

  private movePair(step: number, total: number): void {
    if (!canNavigate(this.state, this.confirmFn)) return;
    this.pairCursor = (this.pairCursor + step + total) % total;
    this.state = { ...this.state, dirty: false };
    this.renderItem();
  }

  private renderListMode(item: ReviewItem): void {
    const view = renderList(item, () => {
      this.state = markDirty(this.state);
    });
    view.submitButton.addEventListener("click", () => {
      void this.submit({ type: "correct", order: view.getOrder() });
    });
    this.itemHost.append(view.root);
  }

  /** Current server-side ranking, rendered verbatim (no client sorting). */
  private rankingPreview(item: ReviewItem): HTMLElement {
    const entries = item.corrected ?? item.proposed;
    const list = el("ol", { class: "ranking-preview" });
    for (const entry of entries) {
      list.append(el("li", { "data-doc": entry.doc_id },
        `#${entry.rank} ${entry.doc_id}${entry.score === null ? "" : ` (${entry.score})`}`));
    }
    return el("div", { class: "ranking-preview-wrap" },
      el("h4", {}, "Current ranking"), list);
  }

  // -- mutations ----------------------------------------------------------

  async submit(action: Action): Promise<void> {
    const item = this.state.item;
    if (!item) return;
    clearBanners(this.noticeHost);
    try {
      const updated = await this.api.submitAction(item.id, this.state.lastKnownRevision, action);
      this.state = acceptServerItem(this.state, updated);
      this.renderItem();
      await this.refreshQueue();
    } catch (err) {
      if (err instanceof ConflictError) {
        showConflictDialog(
          this.noticeHost,
          err.currentRevision,
          this.state.lastKnownRevision,
          (choice) => {
            if (choice.reload) {
              this.state = { ...this.state, dirty: false };
              void this.openById(item.id);
            }
          },
        );
      } else if (err instanceof NetworkError) {
        showRetryBanner(this.noticeHost, "The server could not be reached.", () => {
          void this.submit(action);
        });
      } else if (err instanceof ApiError) {
        showRetryBanner(this.noticeHost, `Request failed: ${JSON.stringify(err.detail)}.`, () => {
          void this.submit(action);
        });
      } else {
        throw err;
      }
    }
  }

  // -- instructions ---------------------------------------------------------

  async refreshInstructions(): Promise<void> {
    const doc = await this.api.getInstructions();
    clear(this.instructionsHost);
    const textarea = el("textarea", { class: "instructions-text", rows: "6" }) as HTMLTextAreaElement;
    textarea.value = doc.text;
    const save = el("button", { class: "instructions-save" }, "Save instructions") as HTMLButtonElement;
    const versionLabel = el("span", { class: "instructions-version" }, `version ${doc.version}`);
    save.addEventListener("click", () => {
      void (async () => {
        try {
          const updated = await this.api.putInstructions(textarea.value, doc.version);
          versionLabel.textContent = `version ${updated.version}`;
          await this.refreshInstructions();
        } catch (err) {
          if (err instanceof ConflictError) {
            showConflictDialog(this.noticeHost, err.currentRevision, doc.version, (choice) => {
              if (choice.reload) void this.refreshInstructions();
            });
          } else {
            throw err;
          }
        }
      })();
    });
    this.instructionsHost.append(
      el("h2", {}, "Matching instructions"),
      el("p", { class: "hint" },
         "Saved instructions version-bump and feed back into reranking prompts."),
      versionLabel,
      textarea,
      save,
    );
  }
}

export function mountApp(root: HTMLElement, options: AppOptions = {}): App {
  const app = new App(root, options);
  void app.start();
  return app;
}
