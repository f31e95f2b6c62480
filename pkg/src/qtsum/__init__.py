"""Quantized Transformer opinion summarization.

Train a sentence autoencoder with a multi-head vector-quantized bottleneck,
then rank review sentences by the popularity of the codes they sit near.
"""

__version__ = "0.1.0"

from .aspect import (
    AspectCodeMap,
    AspectSpec,
    aspect_entropy,
    aspect_summarize,
    build_aspect_code_map,
    compute_code_aspect_probs,
    select_aspect_head,
)
from .corpus import ReviewCorpus, load_reviews, save_reviews, split_corpus
from .extraction import (
    ExtractionConfig,
    Summary,
    build_summary,
    rank_nearest,
    rank_two_step,
    summarize_entity,
)
from .model import ModelConfig, QuantizedTransformer
from .quantizer import Codebook, ema_update, hard_assign, soft_assign
from .rouge import evaluate_corpus, rouge_l, rouge_n
from .tokenizer import Tokenizer, build_tokenizer, tokenize
from .training import TrainedModel, gradient_check, train
