"""Contextual graph construction: frozen prompt embeddings, learnable node and
edge embeddings, and the box encoder used for the box-enhanced variant."""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import torch
import torch.nn as nn

from .batch import GraphBatch
from .scene_model import NumericError, Vocabulary, default_vocabulary


class ModeError(RuntimeError):
    """Raised when training-only inputs (boxes) are missing or misaligned."""


@runtime_checkable
class TextEmbeddingProvider(Protocol):
    name: str
    version: str
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return a ``[len(texts), dim]`` float array."""
        ...


class HashTextEmbedding:
    """Deterministic stand-in for a frozen text encoder.

    Each text is split into words; every (position, word) pair and every
    adjacent word bigram is hashed to a seed for a fixed Gaussian direction.
    The sum of those directions, normalized to unit length, is the embedding,
    so word order matters and equal strings give bitwise-equal vectors.
    """

    name = "hash-projection"
    version = "1"

    def __init__(self, dim: int = 512, salt: str = "sg2scene"):
        self.dim = dim
        self.salt = salt
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _direction(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(f"{self.salt}|{token}".encode(), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.standard_normal(self.dim)

    def _embed_one(self, text: str) -> np.ndarray:
        words = text.lower().split()
        feats = [f"w{k}:{w}" for k, w in enumerate(words)]
        feats += [f"b:{a} {b}" for a, b in zip(words, words[1:])]
        if not feats:
            feats = ["<empty>"]
        v = sum(self._direction(f) for f in feats)
        return (v / np.linalg.norm(v)).astype(np.float32)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for i, t in enumerate(texts):
            with self._lock:
                v = self._cache.get(t)
            if v is None:
                v = self._embed_one(t)
                with self._lock:
                    self._cache[t] = v
            out[i] = v
        return out


class ClipTextEmbedding:
    """Optional plug-in wrapping a CLIP text tower from ``transformers``."""

    version = "1"

    def __init__(self, model_name: str = "openai/clip-vit-base-patch32"):
        from transformers import CLIPModel, CLIPTokenizer

        self.name = f"clip:{model_name}"
        self._tokenizer = CLIPTokenizer.from_pretrained(model_name)
        self._model = CLIPModel.from_pretrained(model_name).eval()
        self.dim = int(self._model.config.projection_dim)

    @torch.no_grad()
    def embed(self, texts: Sequence[str]) -> np.ndarray:
        tokens = self._tokenizer(list(texts), padding=True, return_tensors="pt")
        feats = self._model.get_text_features(**tokens)
        return feats.float().numpy()


def provider_identity(provider: TextEmbeddingProvider) -> dict[str, object]:
    return {"name": provider.name, "version": provider.version, "dim": provider.dim}


def node_prompt(vocab: Vocabulary, class_id: int) -> str:
    return vocab.phrase(class_id)


def edge_prompt(vocab: Vocabulary, subject: int, predicate: int, obj: int) -> str:
    vocab.check_predicate(predicate)
    return f"{vocab.phrase(subject)} {vocab.predicate_name(predicate)} {vocab.phrase(obj)}"


class PromptTable:
    """Caches prompt embeddings per class and per (subject, predicate, object)."""

    def __init__(self, provider: TextEmbeddingProvider, vocab: Vocabulary | None = None):
        self.provider = provider
        self.vocab = vocab or default_vocabulary()
        self._nodes: dict[int, np.ndarray] = {}
        self._edges: dict[tuple[int, int, int], np.ndarray] = {}

    def embed_node_prompt(self, class_name: str | int) -> np.ndarray:
        cid = self.vocab.class_id(class_name)
        if cid not in self._nodes:
            self._nodes[cid] = self.provider.embed([node_prompt(self.vocab, cid)])[0]
        return self._nodes[cid]

    def embed_edge_prompt(
        self, subject: str | int, predicate: str | int, obj: str | int
    ) -> np.ndarray:
        key = (self.vocab.class_id(subject), self.vocab.predicate_id(predicate), self.vocab.class_id(obj))
        if key not in self._edges:
            self._edges[key] = self.provider.embed([edge_prompt(self.vocab, *key)])[0]
        return self._edges[key]

    def node_matrix(self, classes: Sequence[int], dtype=torch.float32) -> torch.Tensor:
        rows = [self.embed_node_prompt(int(c)) for c in classes]
        if not rows:
            return torch.zeros(0, self.provider.dim, dtype=dtype)
        return torch.from_numpy(np.stack(rows)).to(dtype)

    def edge_matrix(self, triples: Sequence[tuple[int, int, int]], dtype=torch.float32) -> torch.Tensor:
        rows = [self.embed_edge_prompt(*t) for t in triples]
        if not rows:
            return torch.zeros(0, self.provider.dim, dtype=dtype)
        return torch.from_numpy(np.stack(rows)).to(dtype)


class BoxEncoder(nn.Module):
    """Three-layer perceptron over the 7-vector (size, translation, yaw)."""

    def __init__(self, out_dim: int = 64, hidden_dim: int = 64):
        super().__init__()
        self.out_dim = out_dim
        self.net = nn.Sequential(
            nn.Linear(7, hidden_dim),
            nn.SiLU(),
            nn.Linear(hidden_dim, hidden_dim),
            nn.SiLU(),
            nn.Linear(hidden_dim, out_dim),
        )

    def forward(self, boxes: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(boxes).all():
            raise NumericError("box inputs must be finite")
        return self.net(boxes)


@dataclass
class ContextFeatures:
    """Per-node and per-edge feature bundles, index-aligned with a batch."""

    node_prompt: torch.Tensor  # frozen text embedding of the class prompt
    node_embedding: torch.Tensor  # learnable class embedding
    edge_prompt: torch.Tensor  # frozen text embedding of the triplet prompt
    edge_embedding: torch.Tensor  # learnable predicate embedding
    box_embedding: torch.Tensor | None = None  # training only

    @property
    def boxed(self) -> bool:
        return self.box_embedding is not None

    def node_features(self) -> torch.Tensor:
        parts = [self.node_prompt, self.node_embedding]
        if self.box_embedding is not None:
            parts.append(self.box_embedding)
        return torch.cat(parts, dim=-1)

    def edge_features(self) -> torch.Tensor:
        return torch.cat([self.edge_prompt, self.edge_embedding], dim=-1)


class ContextualGraph(nn.Module):
    """Learnable node/edge tables plus the box encoder."""

    def __init__(
        self,
        provider: TextEmbeddingProvider,
        vocab: Vocabulary | None = None,
        embed_dim: int = 64,
        box_dim: int = 64,
    ):
        super().__init__()
        self.vocab = vocab or default_vocabulary()
        self.prompts = PromptTable(provider, self.vocab)
        self.node_embedding = nn.Embedding(self.vocab.num_classes, embed_dim)
        self.edge_embedding = nn.Embedding(self.vocab.num_predicates, embed_dim)
        self.box_encoder = BoxEncoder(box_dim)
        self.prompt_dim = provider.dim
        self.embed_dim = embed_dim
        self.box_dim = box_dim

    @property
    def node_dim(self) -> int:
        return self.prompt_dim + self.embed_dim

    @property
    def edge_dim(self) -> int:
        return self.prompt_dim + self.embed_dim

    def forward(self, batch: GraphBatch, boxes: torch.Tensor | None = None) -> ContextFeatures:
        """Build the (box-enhanced) contextual graph features.

        ``boxes`` is the ``[N, 7]`` tensor in training mode and ``None`` for
        inference.
        """
        dtype = self.node_embedding.weight.dtype
        if boxes is not None and boxes.shape != (batch.num_nodes, 7):
            raise ModeError(f"expected boxes of shape {(batch.num_nodes, 7)}, got {tuple(boxes.shape)}")
        return ContextFeatures(
            node_prompt=self.prompts.node_matrix(batch.classes.tolist(), dtype),
            node_embedding=self.node_embedding(batch.classes),
            edge_prompt=self.prompts.edge_matrix(batch.edge_triples(), dtype),
            edge_embedding=self.edge_embedding(batch.predicates),
            box_embedding=None if boxes is None else self.box_encoder(boxes.to(dtype)),
        )


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))

