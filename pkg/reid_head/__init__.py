"""
Module de la tête de ré-identification et du modèle complet.
"""
from reid_head.head import HeadConfig, HeadOutput, ReIDHead, embedding_tags, head_forward, test_embedding
from reid_head.model import ReIDModel
