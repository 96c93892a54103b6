from .decision import (
    DecisionModel,
    ScoreDataset,
    SimConfig,
    feature_importance,
    generate_decision_dataset,
    linear_attributions,
    load_score_csv,
    save_score_csv,
    train_decision_model,
)
from .history import QueryHistory
from .indicators import (
    SCORE_NAMES,
    Calibration,
    IndicatorScores,
    calibrate,
    compute_scores,
    percentage_change,
    save_calibration,
    score_s1,
    score_s2,
    score_s3a,
    score_s3b,
    score_s4a,
    score_s4b,
)
from .oracle import MalProtectOracle, Oracle, OracleVerdict, PlainOracle, ScoreRecorder, defensive_action, oracle_predict
