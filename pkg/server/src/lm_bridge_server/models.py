"""Model layer: anything that can tokenize, detokenize, and fill masks.

Two implementations: a dependency-free deterministic toy model (``dummy``)
used by the protocol tests, and a wrapper over any masked LM loadable from
the standard pretrained-model ecosystem.
"""

from __future__ import annotations

import hashlib
import math
from typing import Sequence


class ModelLoadError(Exception):
    pass


class DummyModel:
    """Deterministic word-level masked LM with no external dependencies.

    Scores are a stable hash of (context, position, token): nonsense as
    language, but reproducible everywhere, which is what a protocol
    conformance suite needs.
    """

    VOCAB = ["[PAD]", "[UNK]", "[MASK]"] + [f"tok{i}" for i in range(97)]

    def __init__(self):
        self._index = {w: i for i, w in enumerate(self.VOCAB)}

    @property
    def vocab_size(self) -> int:
        return len(self.VOCAB)

    @property
    def mask_id(self) -> int:
        return self._index["[MASK]"]

    def tokenize(self, text: str) -> list[int]:
        return [self._index.get(w, self._index["[UNK]"]) for w in text.split()]

    def detokenize(self, ids: Sequence[int]) -> str:
        return " ".join(self.VOCAB[i] for i in ids)

    def fill(self, tokens: Sequence[int], positions: Sequence[int], top_k: int):
        context = ",".join(map(str, tokens))
        out = []
        for pos in positions:
            scored = []
            for tok in range(self.vocab_size):
                digest = hashlib.sha256(f"{context}|{pos}|{tok}".encode()).digest()
                scored.append((int.from_bytes(digest[:8], "big"), tok))
            scored.sort(reverse=True)
            total = sum(s for s, _ in scored)
            dist = [(tok, math.log(s / total)) for s, tok in scored[:top_k]]
            out.append(dist)
        return out


class PretrainedModel:
    """A masked LM from the pretrained-model hub, evaluation mode, no gradients."""

    def __init__(self, name: str, device: str = "cpu"):
        try:
            import torch
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as exc:
            raise ModelLoadError(f"model dependencies unavailable: {exc}") from exc
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(name)
            self._model = AutoModelForMaskedLM.from_pretrained(name)
        except Exception as exc:
            raise ModelLoadError(f"cannot load model {name!r}: {exc}") from exc
        if self._tokenizer.mask_token_id is None:
            raise ModelLoadError(f"{name!r} has no mask token; not a masked LM")
        self._torch = torch
        self._model.to(device)
        self._model.eval()
        self._device = device

    @property
    def vocab_size(self) -> int:
        return len(self._tokenizer)

    @property
    def mask_id(self) -> int:
        return self._tokenizer.mask_token_id

    def tokenize(self, text: str) -> list[int]:
        return self._tokenizer.encode(text, add_special_tokens=False)

    def detokenize(self, ids: Sequence[int]) -> str:
        return self._tokenizer.decode(list(ids), skip_special_tokens=True)

    def fill(self, tokens: Sequence[int], positions: Sequence[int], top_k: int):
        torch = self._torch
        ids = torch.tensor([list(tokens)], dtype=torch.long, device=self._device)
        with torch.no_grad():
            logits = self._model(input_ids=ids).logits[0]
        out = []
        for pos in positions:
            logprobs = torch.log_softmax(logits[pos], dim=-1)
            values, indices = torch.topk(logprobs, k=min(top_k, logprobs.shape[-1]))
            out.append([(int(t), float(v)) for t, v in zip(indices, values)])
        return out


def load_model(name: str, device: str = "cpu"):
    if name == "dummy":
        return DummyModel()
    return PretrainedModel(name, device=device)
