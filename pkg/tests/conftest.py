import math
import random

import pytest
import torch

from discprompt import toy
from discprompt.tasks import TaskSpec
from discprompt.tokenizer import WordTokenizer

torch.set_num_threads(1)


def inv_sigmoid(p):
    return math.log(p / (1 - p))


class MockScorer:
    """Returns fixed logits per label id, truncated to each prompt's length."""

    trainable = False

    def __init__(self, table):
        self.table = table  # label id -> list of logits

    def score(self, prompts):
        return [torch.tensor(self.table[p.label.id][: len(p)], dtype=torch.float64) for p in prompts]


class FnScorer:
    trainable = False

    def __init__(self, fn):
        self.fn = fn

    def score(self, prompts):
        return [torch.as_tensor(self.fn(p), dtype=torch.float64) for p in prompts]


@pytest.fixture
def sst2():
    return TaskSpec.create("SST-2", {"negative": "terrible", "positive": "great"}, "<S1> It is <V> .")


@pytest.fixture
def qnli():
    return TaskSpec.create("QNLI", {"entailment": "Yes", "not_entailment": "No"}, "<S1> ? <V> , <S2>")


@pytest.fixture
def word_tok():
    text = "it's just merely very bad . it is terrible great yes no maybe ? , what is the capital of france paris is a city in europe"
    return WordTokenizer.from_corpus([text])


@pytest.fixture(scope="session")
def toy_task():
    return toy.make_synthetic_task(13)


@pytest.fixture(scope="session")
def pretrained(toy_task):
    """The RTD-pretrained toy scorer; built once per session (about a minute)."""
    tok = toy.toy_tokenizer()
    return toy.pretrain_rtd(toy.RtdCorpusConfig(toy_task.corpus), tok, toy.PRETRAIN_STEPS)


def random_sentence(rng: random.Random, words, n):
    return " ".join(rng.choice(words) for _ in range(n))


# criterion number -> "PASS/FAIL ..." line, filled in by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
