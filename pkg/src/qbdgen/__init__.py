"""Ranked dataset generation for query-by-document retrieval: LLM
reranking with human review, and BM25 parameter tuning on the result."""

__version__ = "0.1.0"
