'''
Speaker Similarity Prediction

A python library for predicting speaker similarity listening test scores
from speaker embeddings.
'''

__VERSION__ = "0.1.0"

from .config import Config
from .distance import DistanceMetric, baseline_correlation
from .embedder import ToyEmbedder, train_toy_embedder
from .errors import SpsimError
from .example import EvaluationDataset, EvaluationExample, ListenerScore, SpeakerEmbedding
from .network import DenseNet, LossSpec
from .parser import Parser, load_dataset, save_dataset
from .stats import ScoreDistribution, listener_split_upper_bound
from .synthetic import SyntheticWorldConfig, generate_synthetic, split_into_pieces
from .trainer import CvPlan, CvResult, RegressionModel, cross_validate, evaluate_pieces, make_plan, train
