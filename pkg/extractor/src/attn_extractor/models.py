"""Toy vision-language models with readable attention.

Two reference architectures, both pure numpy with weights derived
deterministically from the model id:

  * an identity-connector model: patch embeddings feed the decoder
    directly, so the image occupies grid_n^2 token positions;
  * a cross-attention connector model: a fixed set of query tokens
    attends over the patch embeddings for a few layers, and those
    queries become the image tokens (their count is independent of the
    grid size).

The decoder is a small causal transformer with rms pre-norm (without
normalization the residual stream inflates the attention logits until the
softmax saturates). Decoding is greedy and the whole forward path is
deterministic, so repeated extractions produce bit-identical tensors. Attention capture happens at well-defined hook
points that upcast to float32 before anything is stored, regardless of
the model's compute precision.

For a decoder-only stack there is no literal cross-attention from the
answer token; we read the self-attention rows at the first generated
token's position, restricted to the image-token columns and
renormalized. That interpretation is recorded in bundle metadata.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ExtractorError, UnsupportedModelError


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    grid_n: int
    t_tokens: int
    d_model: int
    llm_layers: int
    llm_heads: int
    vocab: int = 64
    connector_layers: int = 0  # 0 means the identity connector
    connector_heads: int = 0
    compute_dtype: str = "float32"
    attention_accessible: bool = True
    max_new_tokens: int = 3
    patch_px: int = 8


REGISTRY: dict[str, ModelSpec] = {
    "toy-identity": ModelSpec(
        "toy-identity", grid_n=4, t_tokens=16, d_model=32, llm_layers=2, llm_heads=2
    ),
    "toy-xattn": ModelSpec(
        "toy-xattn",
        grid_n=4,
        t_tokens=8,
        d_model=32,
        llm_layers=3,
        llm_heads=2,
        connector_layers=2,
        connector_heads=2,
    ),
    # Same architecture as toy-identity but computing in half precision;
    # exercises the upcast-at-the-hook path.
    "toy-identity-f16": ModelSpec(
        "toy-identity-f16",
        grid_n=4,
        t_tokens=16,
        d_model=32,
        llm_layers=2,
        llm_heads=2,
        compute_dtype="float16",
    ),
    # A model we can run but whose attention internals are not exposed.
    "opaque-vlm": ModelSpec(
        "opaque-vlm",
        grid_n=4,
        t_tokens=16,
        d_model=32,
        llm_layers=2,
        llm_heads=2,
        attention_accessible=False,
    ),
}


def build_model(model_id: str) -> "ToyVLM":
    spec = REGISTRY.get(model_id)
    if spec is None:
        known = ", ".join(sorted(REGISTRY))
        raise UnsupportedModelError(f"unknown model {model_id!r}; known models: {known}")
    if not spec.attention_accessible:
        raise UnsupportedModelError(
            f"model {model_id!r} does not expose attention weights; extraction needs "
            "a model served with attention outputs enabled"
        )
    return ToyVLM(spec)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _rmsnorm(x: np.ndarray) -> np.ndarray:
    """Pre-norm in float32 accumulation, returned in the input dtype.

    Without this the residual stream grows layer over layer and attention
    logits (quadratic in the hidden norm) saturate the softmax, which
    leaves zero image mass at capture precision for some inputs.
    """
    mean_sq = np.square(x.astype(np.float32)).mean(axis=-1, keepdims=True)
    scale = np.sqrt(mean_sq + 1e-6).astype(x.dtype)
    return x / scale


def _renormalized_f32(rows: np.ndarray) -> np.ndarray:
    """Upcast attention rows to float32 and rescale each to sum to one.

    Softmax rows already sum to ~1, but half-precision accumulation can
    drift past the analyzer's row-sum tolerance; normalizing after the
    upcast keeps the export independent of compute precision. Individual
    entries may underflow to exact zero; a whole row of zeros would mean
    the answer token put no measurable mass on the image at all, which is
    not a publishable attention map.
    """
    rows32 = rows.astype(np.float32)
    sums = rows32.sum(axis=-1, keepdims=True)
    if (sums == 0).any():
        raise ExtractorError(
            "attention capture produced a zero row over the image tokens "
            "(no measurable image mass at capture precision); nothing to "
            "renormalize"
        )
    return rows32 / sums


class ToyVLM:
    def __init__(self, spec: ModelSpec) -> None:
        if spec.d_model % spec.llm_heads:
            raise UnsupportedModelError(
                f"model {spec.model_id!r}: d_model {spec.d_model} not divisible by "
                f"{spec.llm_heads} heads"
            )
        self.spec = spec
        self._dtype = np.float16 if spec.compute_dtype == "float16" else np.float32
        seed = int.from_bytes(hashlib.sha256(spec.model_id.encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        d = spec.d_model

        def weight(*shape: int) -> np.ndarray:
            return (rng.standard_normal(shape) * 0.25).astype(self._dtype)

        self.w_img = weight(3, d)
        self.embed = weight(spec.vocab, d)
        self.connector: list[dict[str, np.ndarray]] = []
        if spec.connector_layers:
            self.query0 = weight(spec.t_tokens, d)
            for _ in range(spec.connector_layers):
                self.connector.append(
                    {k: weight(d, d) for k in ("wq", "wk", "wv", "wo")}
                )
        self.layers = [
            {
                "wq": weight(d, d),
                "wk": weight(d, d),
                "wv": weight(d, d),
                "wo": weight(d, d),
                "w1": weight(d, 2 * d),
                "w2": weight(2 * d, d),
            }
            for _ in range(spec.llm_layers)
        ]

    # -- text ----------------------------------------------------------------

    def tokenize(self, text: str) -> list[int]:
        """Stable hash of whitespace-split words into the toy vocabulary."""
        ids = []
        for word in text.lower().split():
            digest = hashlib.sha256(word.encode("utf-8")).digest()
            ids.append(2 + int.from_bytes(digest[:4], "big") % (self.spec.vocab - 2))
        return ids or [1]

    # -- vision --------------------------------------------------------------

    def image_tokens(self, image: Image.Image) -> tuple[np.ndarray, np.ndarray | None]:
        """Patch-embed the image and run the connector if the model has one.

        Returns (tokens, connector_weights): tokens is (T, D); weights is
        (L_c, H_c, T, N^2) float32 with renormalized rows, or None for the
        identity connector.
        """
        spec = self.spec
        n, p = spec.grid_n, spec.patch_px
        resized = image.convert("RGB").resize((n * p, n * p), Image.Resampling.BILINEAR)
        arr = np.asarray(resized, dtype=np.float32) / 255.0
        patches = arr.reshape(n, p, n, p, 3).mean(axis=(1, 3)).reshape(n * n, 3)
        feats = patches.astype(self._dtype) @ self.w_img  # (N^2, D)
        if not self.connector:
            return feats, None

        heads = spec.connector_heads
        hd = spec.d_model // heads
        x = self.query0
        maps = []
        normed_feats = _rmsnorm(feats)
        for layer in self.connector:
            xn = _rmsnorm(x)
            q = (xn @ layer["wq"]).reshape(spec.t_tokens, heads, hd).transpose(1, 0, 2)
            k = (normed_feats @ layer["wk"]).reshape(n * n, heads, hd).transpose(1, 0, 2)
            v = (normed_feats @ layer["wv"]).reshape(n * n, heads, hd).transpose(1, 0, 2)
            logits = q @ k.transpose(0, 2, 1) / np.asarray(np.sqrt(hd), dtype=self._dtype)
            weights = _softmax(logits)  # (H_c, T, N^2)
            maps.append(weights)
            out = (weights @ v).transpose(1, 0, 2).reshape(spec.t_tokens, spec.d_model)
            x = x + out @ layer["wo"]
        return x, _renormalized_f32(np.stack(maps))

    # -- decoder ---------------------------------------------------------------

    def _forward(self, seq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Causal transformer pass. Returns (hidden, attention (L, H, S, S))."""
        spec = self.spec
        s = seq.shape[0]
        heads = spec.llm_heads
        hd = spec.d_model // heads
        causal = np.tril(np.ones((s, s), dtype=bool))
        x = seq
        attns = []
        for layer in self.layers:
            xn = _rmsnorm(x)
            q = (xn @ layer["wq"]).reshape(s, heads, hd).transpose(1, 0, 2)
            k = (xn @ layer["wk"]).reshape(s, heads, hd).transpose(1, 0, 2)
            v = (xn @ layer["wv"]).reshape(s, heads, hd).transpose(1, 0, 2)
            logits = q @ k.transpose(0, 2, 1) / np.asarray(np.sqrt(hd), dtype=self._dtype)
            logits = np.where(causal, logits, np.asarray(-np.inf, dtype=self._dtype))
            weights = _softmax(logits)  # (H, S, S)
            attns.append(weights)
            x = x + (weights @ v).transpose(1, 0, 2).reshape(s, spec.d_model) @ layer["wo"]
            x = x + np.maximum(_rmsnorm(x) @ layer["w1"], 0) @ layer["w2"]
        return x, np.stack(attns)

    def greedy_decode(self, img_tokens: np.ndarray, text_ids: list[int]) -> tuple[list[int], np.ndarray]:
        """Generate max_new_tokens by argmax. Returns (ids, full sequence)."""
        seq = np.concatenate([img_tokens, self.embed[text_ids]], axis=0)
        generated = []
        for _ in range(self.spec.max_new_tokens):
            hidden, _ = self._forward(seq)
            logits = hidden[-1] @ self.embed.T
            next_id = int(np.argmax(logits))
            generated.append(next_id)
            seq = np.concatenate([seq, self.embed[next_id][None, :]], axis=0)
        return generated, seq

    def answer_attention(self, img_tokens: np.ndarray, text: str) -> np.ndarray:
        """Attention from the first generated token to the image tokens.

        Runs greedy decoding, then one pass over the finished sequence; the
        hook reads every layer and head's row at the first generated
        position, keeps the image-token columns, and upcasts before
        renormalizing. Returns (L, H, 1, T) float32. Causal masking makes
        the row independent of tokens generated afterwards.
        """
        ids = self.tokenize(text)
        _, seq = self.greedy_decode(img_tokens, ids)
        _, attns = self._forward(seq)
        first_answer = img_tokens.shape[0] + len(ids)
        rows = attns[:, :, first_answer, : img_tokens.shape[0]]  # (L, H, T)
        return _renormalized_f32(rows)[:, :, None, :]
