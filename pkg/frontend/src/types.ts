// JSON shapes exchanged with the review service. These mirror the server's
// serialization exactly; the UI never invents fields of its own.

export type ItemStatus = "pending" | "accepted" | "corrected" | "rejected";

export interface RankingEntry {
  doc_id: string;
  score: number | null;
  rank: number;
}

export interface PairVerdict {
  doc_first: string;
  doc_second: string;
  verdict: -1 | 0 | 1;
  explanation: string | null;
  parse_failed: boolean;
}

export interface ReviewItem {
  id: string;
  revision: number;
  status: ItemStatus;
  query_id: string;
  query_text: string;
  method: string;
  candidates: Record<string, string>;
  proposed: RankingEntry[];
  explanations: Record<string, string>;
  verdicts: PairVerdict[];
  overrides: Record<string, number>;
  corrected: RankingEntry[] | null;
  reject_reason: string | null;
}

export interface ItemSummary {
  id: string;
  revision: number;
  status: ItemStatus;
  query_id: string;
  method: string;
  n_candidates: number;
}

export interface InstructionsDoc {
  text: string;
  version: number;
  updated_at: string;
}

export type Action =
  | { type: "accept" }
  | { type: "reject"; reason?: string }
  | { type: "correct"; order: string[] }
  | { type: "correct_pair"; doc_first: string; doc_second: string; verdict: -1 | 0 | 1 };

/** The ranking the server considers current for this item. */
export function currentRanking(item: ReviewItem): RankingEntry[] {
  return item.corrected ?? item.proposed;
}
