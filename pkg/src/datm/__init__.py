"""Deep autoencoding topic model: deep gamma-Poisson decoder, Weibull encoder,
topic-layer-adaptive SG-MCMC for the globals and a supervised softmax head."""

from .corpus import Corpus, CorpusFormatError, HeldoutSplit, load_uci_bow, next_batch, split_heldout
from .decoder import GlobalParams, generate_synthetic, init_global_params, project_topic
from .encoder import EncoderParams, elbo, elbo_grad, encode, init_encoder
from .evaluation import (classification_error, export_topic_tree, match_topics, perplexity,
                         timing_report)
from .gibbs import gibbs_fit, gibbs_perplexity, gibbs_sweep
from .sampler import SamplerState, allocate_counts, tlasgr_step
from .supervised import (ClassifierParams, SupervisedConfig, SupervisedTrainer, predict,
                         supervised_elbo, supervised_elbo_grad)
from .trainer import (CheckpointError, TrainConfig, Trainer, load_checkpoint, save_checkpoint,
                      train_joint, train_layerwise)

__version__ = "0.1.0"
