"""Analytics toolkit for call-detail-record (CDR) and airtime top-up data.

Subpackages cover the full desk-scale pipeline: synthetic data with planted
ground truth (synthgen), ingestion (ingest), per-subscriber behavioral
features (features), interaction graphs and centrality (socialgraph),
product-diffusion significance tests (adoption), temporal and mobility
anomalies (anomaly), Voronoi/IDW spatial tools (spatial), and model
training/evaluation scaffolding (mlkit).  The `cdrlab` console script ties
them together.
"""

__version__ = "0.1.0"
