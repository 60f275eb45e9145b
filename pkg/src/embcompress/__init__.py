"""Online low-rank compression of word-embedding layers for text classifiers."""
from .analysis import HardwareCostModel, flop_report, flops_dense, flops_factorized
from .data import Dataset, Sentence, Vocabulary, load_tsv, make_synthetic
from .embedding import (EmbeddingTable, FactorizedEmbedding, choose_rank, factorize,
                        offline_compress)
from .linalg import FlopCounter, matmul, svd, truncate_svd
from .models import DanModel, LstmModel, build_model
from .modelfile import load_model, save_model
from .optim import CalrConfig, TrainConfig, clr, train
from .quantize import quantize, quantize_model

__version__ = "0.1.0"
