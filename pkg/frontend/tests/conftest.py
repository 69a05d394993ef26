"""Shared fixture: a tiny randomly initialized decoder-only checkpoint.

No network access is assumed; the model and a character-level tokenizer
are constructed locally and saved to a temp directory, then loaded back
through the same ``from_pretrained`` path a published checkpoint would use.
"""

import pytest
import torch

N_LAYERS = 4
N_HEADS = 4
N_KV_HEADS = 2
MAX_POS = 2048


def _build_tokenizer():
    from tokenizers import Tokenizer
    from tokenizers.models import WordLevel
    from tokenizers.pre_tokenizers import Split
    from transformers import PreTrainedTokenizerFast

    vocab = {"[UNK]": 0}
    for i in range(32, 127):
        vocab[chr(i)] = len(vocab)
    tok = Tokenizer(WordLevel(vocab, unk_token="[UNK]"))
    tok.pre_tokenizer = Split("", "isolated")
    return PreTrainedTokenizerFast(tokenizer_object=tok, unk_token="[UNK]"), len(vocab)


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    from transformers import LlamaConfig, LlamaForCausalLM

    tokenizer, vocab_size = _build_tokenizer()
    cfg = LlamaConfig(
        vocab_size=vocab_size,
        hidden_size=64,
        intermediate_size=128,
        num_hidden_layers=N_LAYERS,
        num_attention_heads=N_HEADS,
        num_key_value_heads=N_KV_HEADS,
        max_position_embeddings=MAX_POS,
    )
    torch.manual_seed(7)
    model = LlamaForCausalLM(cfg)
    path = tmp_path_factory.mktemp("ckpt") / "tiny"
    model.save_pretrained(path)
    tokenizer.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def long_prompt(tmp_path_factory):
    """~1.5k characters -> ~1.5k tokens under the character tokenizer."""
    text = ("The quick brown fox jumps over the lazy dog. " * 40)[:1500]
    path = tmp_path_factory.mktemp("prompts") / "long.txt"
    path.write_text(text, encoding="utf-8")
    return str(path)
