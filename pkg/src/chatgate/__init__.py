"""Confidentiality-preserving chat AI gateway.

Mediates between users / project API clients and upstream LLM completion
endpoints: rate-limit-aware load balancing, prompt assembly, content safety
filtering, usage metering, client-held conversation persistence, and
retrieval-augmented generation. A deterministic upstream simulator is bundled
so the whole pipeline can be verified offline.
"""

__version__ = "0.1.0"
