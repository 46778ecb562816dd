from .common import (EmbeddingBank, nearest_items, nearest_items_distinct, nongreedy_perturb,
                     similarity_sample, similarity_weights)
from .cvae import (VARIANTS, CvaeConfig, ListCvae, PivotCvae, build_cvae, cvae_loss,
                   cvae_loss_grad, generate_slate, generate_slates, pivot_select, reconstruct,
                   train_cvae)
from .policies import (CvaePolicy, FixedSlatePolicy, RankerPolicy, SlatePolicy,
                       UniformRandomPolicy)
from .rankers import (PointwiseRanker, RankerConfig, mmr_rerank, pretrain_embeddings, rank_topk,
                      train_pointwise_ranker)
