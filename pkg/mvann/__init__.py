from mvann.dataset.dataset import Dataset, MultiVector  # noqa
from mvann.index.mv_index import IndexParams, build_index  # noqa
from mvann.index.search import SearchParams, knn_search  # noqa
from mvann.similarity.usim import SimilarityConfig, metric_preset  # noqa
