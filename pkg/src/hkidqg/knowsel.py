"""Knowledge selection: score candidate sentences against the constraint prompt
with scaled dot-product attention and keep the top ``m``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, ShapeError, matmul, softmax_axis

DEFAULT_M = 4
MAX_M = 8


def build_knowsel_prompt(target: str, concept: str) -> str:
    if not target.strip() or not concept.strip():
        raise ConfigError("target and concept must be non-empty")
    return (
        f"Given the target text {target}, identify key knowledge related to the concept {concept}"
    )


@dataclass
class KnowledgeSet:
    """Candidate sentences (tagged with their pyramid layer) and one pooled
    embedding row per sentence."""

    sentences: list  # [(layer, text), ...]
    embeddings: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.sentences):
            raise ShapeError(
                f"{len(self.sentences)} sentences but embeddings of shape {self.embeddings.shape}"
            )

    @classmethod
    def from_layers(cls, layer_sentences, text_encoder) -> "KnowledgeSet":
        """Build from ``{layer: [sentence, ...]}`` using pooled sentence embeddings."""
        sentences = [(l, s) for l in sorted(layer_sentences) for s in layer_sentences[l]]
        if sentences:
            emb = np.stack([text_encoder.encode_pooled(s) for _, s in sentences])
        else:
            emb = np.zeros((0, text_encoder.hidden_dim))
        return cls(sentences, emb)

    def __len__(self):
        return len(self.sentences)


@dataclass
class SelectedKnowledge:
    items: list  # [(text, score), ...] descending score

    @property
    def texts(self) -> list:
        return [t for t, _ in self.items]


def attention_matrix(h_k, h_tc, d_k=None) -> np.ndarray:
    """``softmax(H_K H_tc^T / sqrt(d_k))`` normalized over sentences.

    Returns an ``(S, T)`` matrix whose columns each sum to 1. An empty knowledge
    set yields a ``(0, T)`` matrix, which selects nothing downstream.
    """
    h_k = np.asarray(h_k, dtype=np.float64)
    h_tc = np.asarray(h_tc, dtype=np.float64)
    if h_tc.ndim != 2 or h_tc.shape[0] == 0:
        raise ShapeError(f"prompt embedding must be a non-empty matrix, got {h_tc.shape}")
    if d_k is None:
        d_k = h_tc.shape[1]
    if h_k.ndim != 2 or h_k.shape[1] != h_tc.shape[1] or h_tc.shape[1] != d_k:
        raise ShapeError(f"knowledge {h_k.shape} and prompt {h_tc.shape} disagree with d_k={d_k}")
    if h_k.shape[0] == 0:
        return np.zeros((0, h_tc.shape[0]))
    raw = matmul(h_k, h_tc.T) / np.sqrt(d_k)
    return softmax_axis(raw, axis="cols")


def sentence_scores(a) -> np.ndarray:
    """Mean attention mass each sentence receives across prompt tokens."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] == 0:
        return np.zeros(0)
    return a.mean(axis=1)


def select_top_m(a, ks: KnowledgeSet, m: int = DEFAULT_M) -> SelectedKnowledge:
    if m < 0:
        raise ConfigError(f"m must be non-negative, got {m}")
    sigma = sentence_scores(a)
    if sigma.size != len(ks):
        raise ShapeError(f"{sigma.size} scores for {len(ks)} sentences")
    order = np.argsort(-sigma, kind="stable")[:m]
    return SelectedKnowledge([(ks.sentences[i][1], float(sigma[i])) for i in order])


def select_knowledge(ks: KnowledgeSet, target: str, concept: str, text_encoder, m: int = DEFAULT_M):
    """Run the whole selection stage; returns ``(SelectedKnowledge, prompt, A)``."""
    prompt = build_knowsel_prompt(target, concept)
    h_tc = text_encoder.encode_tokens(prompt)
    a = attention_matrix(ks.embeddings, h_tc, text_encoder.hidden_dim)
    return select_top_m(a, ks, m), prompt, a
