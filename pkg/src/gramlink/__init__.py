"""Privacy-preserving record linkage through frequent-gram projections."""

from .core import UPPERCASE, Alphabet, Dataset, Record, edit_distance, load_dataset, occurrences
from .dp import PrivacyBudget, noisy_count, sample_laplace
from .embedding import GramBase, embed, embed_dataset, personalized_threshold, threshold_tables
from .fpm import MinerConfig, ScoredGram, fpm_mine, nonprivate_mine
from .protocol import ProtocolConfig, merge_bases, match, run_protocol
from .ptree import TreeConfig, build_tree, enforce_consistency, extract_grams, ptree_mine

__version__ = "0.1.0"
