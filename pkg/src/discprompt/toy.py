"""A small trainable discriminator and a synthetic sentiment task.

The encoder is a few pre-norm transformer layers with a linear one-logit
head per token, pretrained with replaced-token detection where corruptions
are drawn from a random sampler instead of a generator network.
"""

from __future__ import annotations

import copy
import logging
import random
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from sklearn.metrics import roc_auc_score
from torch import nn

from .data import sample_few_shot
from .prompts import BuiltPrompt
from .tasks import InputExample, TaskSpec
from .tokenizer import WordTokenizer
from .training import Checkpoint

log = logging.getLogger(__name__)

PRETRAIN_STEPS = 4000


@dataclass(frozen=True)
class ToyEncoderConfig:
    vocab_size: int
    embedding_dim: int = 64
    layers: int = 2
    heads: int = 4
    max_positions: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if self.embedding_dim % self.heads:
            raise ValueError("embedding_dim must be divisible by heads")


class DiscriminativeHead(nn.Module):
    """z_t = w . h_t + b, one scalar per position."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(dim, 1)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.proj(hidden).squeeze(-1)


class ToyDiscriminator(nn.Module):
    def __init__(self, config: ToyEncoderConfig):
        super().__init__()
        self.config = config
        d = config.embedding_dim
        self.tokens = nn.Embedding(config.vocab_size, d)
        self.positions = nn.Embedding(config.max_positions, d)
        layer = nn.TransformerEncoderLayer(
            d, config.heads, dim_feedforward=4 * d, dropout=config.dropout, batch_first=True, norm_first=True
        )
        self.encoder = nn.TransformerEncoder(layer, config.layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(d)
        self.head = DiscriminativeHead(d)

    def hidden(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        pos = torch.arange(ids.shape[1]).unsqueeze(0)
        x = self.tokens(ids) + self.positions(pos)
        return self.norm(self.encoder(x, src_key_padding_mask=pad_mask))

    def forward(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        return self.head(self.hidden(ids, pad_mask))


class ToyScorer:
    """Scorer handle around :class:`ToyDiscriminator`.

    ``score`` returns one logit tensor per prompt. Gradients flow only when
    the scorer is trainable and in training mode.
    """

    def __init__(self, model: ToyDiscriminator, tokenizer: WordTokenizer, trainable: bool = True):
        self.model = model
        self.tokenizer = tokenizer
        self.trainable = trainable

    @property
    def config(self) -> ToyEncoderConfig:
        return self.model.config

    def train(self):
        self.model.train()
        return self

    def eval(self):
        self.model.eval()
        return self

    def parameters(self):
        return self.model.parameters()

    def clone(self) -> "ToyScorer":
        return ToyScorer(copy.deepcopy(self.model), self.tokenizer, self.trainable)

    def state_dict(self) -> dict:
        return {k: v.detach().clone() for k, v in self.model.state_dict().items()}

    def load_state_dict(self, state: dict) -> None:
        self.model.load_state_dict(state)

    def _batch(self, seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
        max_len = max(len(s) for s in seqs)
        if max_len > self.config.max_positions:
            raise ValueError(f"prompt of length {max_len} exceeds max_positions={self.config.max_positions}")
        ids = torch.full((len(seqs), max_len), self.tokenizer.pad_id, dtype=torch.long)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
        if int(ids.max()) >= self.config.vocab_size or int(ids.min()) < 0:
            raise ValueError("token id out of range")
        pad_mask = ids == self.tokenizer.pad_id
        return ids, pad_mask

    def score_ids(self, seqs: Sequence[Sequence[int]]) -> list[torch.Tensor]:
        ids, pad_mask = self._batch(seqs)
        z = self.model(ids, pad_mask)
        return [z[i, : len(s)] for i, s in enumerate(seqs)]

    def score(self, prompts: Sequence[BuiltPrompt]) -> list[torch.Tensor]:
        if not prompts:
            return []
        if self.trainable and self.model.training:
            return self.score_ids([p.token_ids for p in prompts])
        with torch.no_grad():
            return self.score_ids([p.token_ids for p in prompts])


def new_scorer(tokenizer: WordTokenizer, seed: int = 0, **config) -> ToyScorer:
    torch.manual_seed(seed)
    model = ToyDiscriminator(ToyEncoderConfig(vocab_size=tokenizer.vocab_size, **config))
    return ToyScorer(model, tokenizer)


# -- replaced-token detection pretraining ---------------------------------------


@dataclass
class RtdCorpusConfig:
    corpus: list[str]
    replacement_rate: float = 0.15
    replacement_sampler: str = "unigram-frequency"  # or "uniform-vocab"
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.replacement_rate < 1.0:
            raise ValueError("replacement_rate must lie in (0, 1)")
        if self.replacement_sampler not in ("uniform-vocab", "unigram-frequency"):
            raise ValueError(f"unknown sampler {self.replacement_sampler!r}")


class Corruptor:
    """Replaces a fraction of ordinary tokens with a different token."""

    def __init__(self, tokenizer: WordTokenizer, encoded: Sequence[Sequence[int]], rate: float, sampler: str, rng: np.random.Generator):
        self.rate = rate
        self.rng = rng
        special = tokenizer.special_ids
        candidates = np.array([i for i in range(tokenizer.vocab_size) if i not in special])
        if sampler == "uniform-vocab":
            probs = np.ones(len(candidates))
        else:
            counts = np.bincount(np.concatenate([np.asarray(s) for s in encoded]), minlength=tokenizer.vocab_size)
            probs = counts[candidates].astype(float) + 1e-3
        self.candidates = candidates
        self.probs = probs / probs.sum()
        self.special = np.array(sorted(special))

    def __call__(self, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (corrupted ids, 0/1 replaced labels); specials never change."""
        ordinary = ~np.isin(ids, self.special)
        replace = ordinary & (self.rng.random(ids.shape) < self.rate)
        out = ids.copy()
        n = int(replace.sum())
        if n:
            new = self.rng.choice(self.candidates, size=n, p=self.probs)
            old = ids[replace]
            clash = new == old
            while clash.any():
                new[clash] = self.rng.choice(self.candidates, size=int(clash.sum()), p=self.probs)
                clash = new == old
            out[replace] = new
        return out, replace.astype(np.float32)


def _encode_corpus(tokenizer: WordTokenizer, corpus: Sequence[str], max_positions: int) -> list[list[int]]:
    out = []
    for text in corpus:
        ids = tokenizer.encode(text).ids[: max_positions - 2]
        out.append([tokenizer.cls_id, *ids, tokenizer.sep_id])
    return out


def _pad(seqs: Sequence[Sequence[int]], pad_id: int) -> np.ndarray:
    arr = np.full((len(seqs), max(len(s) for s in seqs)), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        arr[i, : len(s)] = s
    return arr


def pretrain_rtd(
    config: RtdCorpusConfig,
    tokenizer: WordTokenizer,
    steps: int = PRETRAIN_STEPS,
    encoder: dict | None = None,
) -> ToyScorer:
    if not config.corpus:
        raise ValueError("pretraining corpus is empty")
    scorer = new_scorer(tokenizer, seed=config.seed, **(encoder or {}))
    model = scorer.model
    rng = np.random.default_rng(config.seed)
    encoded = _encode_corpus(tokenizer, config.corpus, scorer.config.max_positions)
    corrupt = Corruptor(tokenizer, encoded, config.replacement_rate, config.replacement_sampler, rng)
    opt = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    bce = nn.BCEWithLogitsLoss(reduction="none")
    model.train()
    for step in range(steps):
        batch = [encoded[i] for i in rng.integers(0, len(encoded), size=config.batch_size)]
        ids = _pad(batch, tokenizer.pad_id)
        corrupted, labels = corrupt(ids)
        pad_mask = torch.from_numpy(ids == tokenizer.pad_id)
        z = model(torch.from_numpy(corrupted), pad_mask)
        keep = torch.from_numpy(~np.isin(ids, corrupt.special)).float()
        loss = (bce(z, torch.from_numpy(labels)) * keep).sum() / keep.sum()
        if not torch.isfinite(loss):
            raise FloatingPointError(f"RTD loss became non-finite at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 200 == 0:
            log.debug("rtd step %d loss %.4f", step, loss.item())
    model.eval()
    return scorer


def rtd_eval(scorer: ToyScorer, corpus: Sequence[str], rate: float = 0.15, seed: int = 1, sampler: str = "unigram-frequency") -> dict:
    """Held-out RTD statistics: AUC and mean logits of replaced vs original tokens."""
    tok = scorer.tokenizer
    encoded = _encode_corpus(tok, corpus, scorer.config.max_positions)
    corrupt = Corruptor(tok, encoded, rate, sampler, np.random.default_rng(seed))
    zs, ys = [], []
    scorer.eval()
    for start in range(0, len(encoded), 256):
        ids = _pad(encoded[start : start + 256], tok.pad_id)
        corrupted, labels = corrupt(ids)
        with torch.no_grad():
            z = scorer.model(torch.from_numpy(corrupted), torch.from_numpy(ids == tok.pad_id)).numpy()
        keep = ~np.isin(ids, corrupt.special)
        zs.append(z[keep])
        ys.append(labels[keep])
    z, y = np.concatenate(zs), np.concatenate(ys)
    return {
        "auc": float(roc_auc_score(y, z)),
        "mean_replaced": float(z[y == 1].mean()),
        "mean_original": float(z[y == 0].mean()),
        "replaced_fraction": float(y.mean()),
    }


# -- synthetic sentiment task ---------------------------------------------------

# Label words double as ordinary sentiment words, so the corruption sampler
# regularly puts an opposite-polarity verdict where a consistent one stood.
POSITIVE = ("great", "good", "wonderful", "superb", "lovely", "brilliant")
NEGATIVE = ("terrible", "bad", "awful", "dull", "boring", "dreadful")
NEUTRAL = (
    "the", "a", "film", "movie", "story", "plot", "cast", "script", "director", "actor", "scene", "ending",
    "was", "is", "seems", "feels", "quite", "very", "really", "rather", "and", "but", "with", "its",
)
ANSWER_WORDS = {0: ("terrible", "bad"), 1: ("great", "good")}
TOY_TASK = TaskSpec.create("toy-sentiment", {"negative": "terrible", "positive": "great"}, "<S1> It is <V> .")


def _sentence(rng: random.Random, label: int) -> str:
    # 2-3 cues of the label's polarity outnumber at most one distractor,
    # so a cue-counting rule classifies every sentence correctly
    own, other = (NEGATIVE, POSITIVE) if label == 0 else (POSITIVE, NEGATIVE)
    words = [rng.choice(NEUTRAL) for _ in range(rng.randint(2, 5))]
    n_own = rng.choice((2, 3))
    cues = [rng.choice(own) for _ in range(n_own)]
    if n_own == 3 and rng.random() < 0.3:
        cues.append(rng.choice(other))
    for cue in cues:
        words.insert(rng.randint(0, len(words)), cue)
    return " ".join(words)


def generate_examples(n_per_class: int, rng: random.Random) -> list[InputExample]:
    out = [InputExample(_sentence(rng, y), None, y) for y in (0, 1) for _ in range(n_per_class)]
    rng.shuffle(out)
    return out


def pretraining_corpus(n: int, rng: random.Random) -> list[str]:
    """Unlabeled text in which sentiment words agree with a trailing verdict."""
    out = []
    for _ in range(n):
        y = rng.randint(0, 1)
        verdict = rng.choice(ANSWER_WORDS[y])
        if rng.random() < 0.8:
            out.append(f"{_sentence(rng, y)} it is {verdict} .")
        else:
            out.append(_sentence(rng, y))
    return out


def toy_tokenizer() -> WordTokenizer:
    words = [*POSITIVE, *NEGATIVE, *NEUTRAL, "it", ".", *(w for ws in ANSWER_WORDS.values() for w in ws)]
    return WordTokenizer.from_corpus(words)


@dataclass
class SyntheticTask:
    spec: TaskSpec
    train: list[InputExample]
    dev: list[InputExample]
    test: list[InputExample]
    full_train: list[InputExample]
    corpus: list[str]
    heldout_corpus: list[str] = field(default_factory=list)


def make_synthetic_task(
    seed: int,
    k: int = 16,
    *,
    pool_per_class: int = 500,
    test_per_class: int = 200,
    corpus_size: int = 5000,
    data_seed: int = 0,
) -> SyntheticTask:
    """Fixed data pool, test set and corpus; ``seed`` only drives the K-shot draw."""
    rng = random.Random(data_seed)
    full_train = generate_examples(pool_per_class, rng)
    test = generate_examples(test_per_class, rng)
    corpus = pretraining_corpus(corpus_size, rng)
    heldout = pretraining_corpus(max(corpus_size // 10, 100), rng)
    train, dev = sample_few_shot(full_train, k, seed)
    return SyntheticTask(TOY_TASK, train, dev, test, full_train, corpus, heldout)


def save_scorer(scorer: ToyScorer, path, *, steps: int = 0, metric: float = float("nan"), seed: int = 0) -> None:
    extra = {"encoder": asdict(scorer.config), "vocab": scorer.tokenizer.vocab}
    Checkpoint(scorer.state_dict(), steps, metric, None, seed, extra=extra).save(path)


def load_scorer(path) -> ToyScorer:
    ckpt = Checkpoint.load(path)
    tokenizer = WordTokenizer(dict(ckpt.extra["vocab"]))
    model = ToyDiscriminator(ToyEncoderConfig(**ckpt.extra["encoder"]))
    model.load_state_dict(ckpt.state)
    model.eval()
    return ToyScorer(model, tokenizer)
