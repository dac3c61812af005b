"""Desk-scale toolkit for BERT-style masked-LM pretraining, domain fine-tuning,
and cosine-similarity comparison of base vs domain-adapted sentence embeddings."""

__version__ = "0.1.0"
