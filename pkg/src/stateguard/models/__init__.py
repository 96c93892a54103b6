from .autoencoder import Autoencoder, default_bottlenecks, reconstruction_loss, train_autoencoder
from .classifiers import (
    EnsembleModel,
    LogisticModel,
    MLPClassifier,
    accuracy,
    adversarial_quota,
    adversarially_train,
    as_matrix,
    distill,
    ensemble_predict,
    ensemble_vote,
    fit_logistic,
    fit_mlp,
    train_ensemble,
    train_logistic,
    train_mlp,
)
from .io import load_model, model_from_json, model_to_json, save_model
from .nn import DenseNet, TrainingError, TrainingMeta, finite_difference_check, one_hot
from .transfer import NaiveAttackReport, naive_continuous_attack, transferability_generate
