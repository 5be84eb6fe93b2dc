from .heuristics import score_baz, score_jt, score_random
from .lambdamart import Binner, RegressionTree, TreeEnsemble, fit_tree, lambdamart_train
from .losses import (
    lambda_gradients,
    listmle_loss_grad,
    listnet_loss_grad,
    make_pairs,
    mse_loss_grad,
    ndcg_delta,
    ranked_positions,
    ranknet_loss_grad,
)
from .models import (
    DISPLAY_NAMES,
    HEURISTIC_KINDS,
    KINDS,
    LTR_KINDS,
    NEURAL_KINDS,
    ScoreModel,
    heuristic_model,
    load_model,
    save_model,
    score,
)
