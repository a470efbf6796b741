import numpy as np
import pytest

from varnamer import bpe, corpus, toygen
from varnamer.inference import Predictor
from varnamer.instances import build_instances, derive_max_allowed
from varnamer.model import TransformerEncoder, preset
from varnamer.training import Trainer, recipe, finetune, pretrain

TOY_VOCAB_SIZE = 512
TOY_MAX_TOKEN_LENGTH = 6
TOY_SEED = 7


@pytest.fixture(scope="session")
def toy_dataset():
    return toygen.generate(200, 0.10, TOY_SEED)


@pytest.fixture(scope="session")
def toy_canons(toy_dataset):
    canons, _corpus_text = corpus.build_canonical_corpus(toy_dataset)
    return canons


@pytest.fixture(scope="session")
def toy_corpus_text(toy_dataset):
    _canons, text = corpus.build_canonical_corpus(toy_dataset)
    return text


@pytest.fixture(scope="session")
def toy_vocab(toy_corpus_text):
    return bpe.train_bpe(
        toy_corpus_text, TOY_VOCAB_SIZE, 50_000, max_token_length=TOY_MAX_TOKEN_LENGTH
    )


@pytest.fixture(scope="session")
def toy_instances(toy_canons, toy_vocab):
    return build_instances(toy_canons, toy_vocab)


@pytest.fixture(scope="session")
def tiny_model(toy_vocab):
    """Untrained toy-config model; deterministic but uninformative."""
    return TransformerEncoder(preset("varbert-toy", toy_vocab.size, dropout=0.0), seed=5)


class TrainedBundle:
    """Everything the toy end-to-end criteria share; built once per session."""

    def __init__(self, toy_dataset, toy_canons, toy_vocab, toy_instances):
        import time

        self.dataset = toy_dataset
        self.canons = toy_canons
        self.vocab = toy_vocab
        self.instances = toy_instances
        self.train_instances = [i for i in toy_instances if i.split == "train"]
        self.train_canons = [c for c in toy_canons if c.split == "train"]
        self.test_canons = [c for c in toy_canons if c.split == "test"]
        self.max_allowed = derive_max_allowed(toy_instances)
        model_config = preset("varbert-toy", toy_vocab.size, dropout=0.0)

        t0 = time.time()
        self.pretrain_result = pretrain(
            self.train_instances, toy_vocab, model_config, recipe("toy-pretrain")
        )
        # finetune on a copy so the pure-pretrained model stays available
        self.finetune_result = finetune(
            self.pretrain_result.model.astype(np.float32),
            toy_vocab,
            self.train_instances,
            recipe("toy-finetune"),
        )
        scratch_model = TransformerEncoder(model_config, seed=recipe("toy-finetune").seed)
        self.scratch_result = Trainer(
            scratch_model, toy_vocab, self.train_instances, recipe("toy-finetune")
        ).run()
        self.train_seconds = time.time() - t0

        from varnamer.evalmetrics import evaluate_variables

        t0 = time.time()
        predictor = Predictor(self.model, toy_vocab, max_allowed=self.max_allowed)
        self.oracle_train = evaluate_variables(predictor, self.train_canons, "oracle", k=10)
        self.heuristic_train = evaluate_variables(
            predictor, self.train_canons, "heuristic", k=10
        )
        mlm_predictor = Predictor(
            self.pretrain_result.model, toy_vocab, max_allowed=self.max_allowed
        )
        self.oracle_train_mlm_only = evaluate_variables(
            mlm_predictor, self.train_canons, "oracle", k=1
        )
        scratch_predictor = Predictor(
            self.scratch_result.model, toy_vocab, max_allowed=self.max_allowed
        )
        self.oracle_train_scratch = evaluate_variables(
            scratch_predictor, self.train_canons, "oracle", k=1
        )
        self.eval_seconds = time.time() - t0

    @property
    def model(self):
        return self.finetune_result.model


@pytest.fixture(scope="session")
def trained(toy_dataset, toy_canons, toy_vocab, toy_instances):
    return TrainedBundle(toy_dataset, toy_canons, toy_vocab, toy_instances)
