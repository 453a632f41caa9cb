// Conflict dialog and network-retry banner. Conflicts are surfaced to the
// user, never auto-merged; a failed submission keeps its action so Retry
// can resend it unchanged.

import { el } from "./dom.js";

export interface ConflictChoice {
  reload: boolean;
}

export function showConflictDialog(
  host: HTMLElement,
  currentRevision: number,
  lastKnownRevision: number,
  onChoice: (choice: ConflictChoice) => void,
): HTMLElement {
  const reloadBtn = el("button", { class: "conflict-reload" }, "Reload server copy") as HTMLButtonElement;
  const keepBtn = el("button", { class: "conflict-keep" }, "Keep editing (stale)") as HTMLButtonElement;
  const dialog = el("div", { class: "conflict-dialog", role: "alertdialog" },
    el("h4", {}, "Someone else changed this item"),
    el("p", {},
       `You are looking at revision ${lastKnownRevision}, but the server is at ` +
       `revision ${currentRevision}. Reload to see and re-apply your change.`),
    reloadBtn,
    keepBtn,
  );
  reloadBtn.addEventListener("click", () => {
    dialog.remove();
    onChoice({ reload: true });
  });
  keepBtn.addEventListener("click", () => {
    dialog.remove();
    onChoice({ reload: false });
  });
  host.append(dialog);
  return dialog;
}

export function showRetryBanner(
  host: HTMLElement,
  message: string,
  onRetry: () => void,
): HTMLElement {
  const existing = host.querySelector(".retry-banner");
  if (existing) existing.remove();
  const retryBtn = el("button", { class: "retry-now" }, "Retry") as HTMLButtonElement;
  const banner = el("div", { class: "retry-banner", role: "alert" },
    el("span", {}, message + " "),
    retryBtn,
  );
  retryBtn.addEventListener("click", () => {
    banner.remove();
    onRetry();
  });
  host.append(banner);
  return banner;
}

export function clearBanners(host: HTMLElement): void {
  for (const node of host.querySelectorAll(".retry-banner, .conflict-dialog")) {
    node.remove();
  }
}
