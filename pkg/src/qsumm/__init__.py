"""Query-focused extractive summarisation of BioASQ ideal answers."""

from .corpus import AbstractStore, Dataset, Question, QuestionType, Snippet, load_dataset
from .rankers import AnswerConfig, SimpleSummariser, TrivialSummariser, assemble_answer
from .rouge import su4_score
from .svr import FeatureExtractor, SMORegressor
from .nnr import NeuralRegressor, VectorRegressor
from .systems import NNRSummariser, SVRSummariser, make_system
from .textproc import preprocess, split_sentences
from .vecspace import EmbeddingTable, SvdModel, TfidfModel, load_embeddings

__version__ = "0.1.0"
