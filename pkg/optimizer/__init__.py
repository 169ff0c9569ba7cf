"""
Module de l'optimiseur Adam et de la planification du taux d'apprentissage.
"""
from optimizer.adam import Adam, AdamState, adam_step
from optimizer.schedule import Schedule, apply_freeze, constant_lr, cosine_lr, learning_rate
