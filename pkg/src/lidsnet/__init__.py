"""Lightweight intent detection: char-CNN + word-embedding BiLSTM encoder trained with a
triplet loss, then fine-tuned as a classifier. Pure numpy."""

__version__ = "0.1.0"

from .config import Config
from .model_store import load, save
from .text import load_dataset, tokenize
from .trainer import Model, predict, predict_proba, train

__all__ = ["Config", "Model", "load", "load_dataset", "predict", "predict_proba", "save", "tokenize", "train"]
