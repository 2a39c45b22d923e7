from tabforge.great.bpe import Vocab, train_bpe
from tabforge.great.model import (
    GreatConfig,
    GreatModel,
    build_great,
    great_generate,
    great_train_step,
)

__all__ = [
    "GreatConfig",
    "GreatModel",
    "Vocab",
    "build_great",
    "great_generate",
    "great_train_step",
    "train_bpe",
]
