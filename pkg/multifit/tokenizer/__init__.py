from multifit.tokenizer.model import (
    META,
    Segmentation,
    TokenizerModel,
    load_model,
    model_hash,
    pre_split,
    save_model,
)
from multifit.tokenizer.unigram import UnigramTrainer, decode, train_unigram, viterbi_segment
from multifit.tokenizer.word import build_word_model, word_tokenize


def encode(text: str, model: TokenizerModel, add_bos: bool = False, add_eos: bool = False) -> list[int]:
    """Text to piece ids with the model's own rule (Viterbi or word lookup)."""
    if model.kind == "word":
        lookup = model.piece_to_id
        ids = [lookup.get(tok, model.unk_id) for tok in word_tokenize(text)]
    else:
        ids = list(viterbi_segment(text, model).ids)
    if add_bos:
        ids.insert(0, model.bos_id)
    if add_eos:
        ids.append(model.eos_id)
    return ids
