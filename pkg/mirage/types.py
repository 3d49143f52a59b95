# -*- coding: utf-8 -*-
from typing import Callable, Protocol, Union, runtime_checkable

import numpy as np

Vector = np.ndarray
Matrix = np.ndarray


@runtime_checkable
class Predictor(Protocol):
    """Anything that maps a batch of rows to positive-class probabilities."""

    def predict_proba(self, X: Matrix) -> Vector:
        ...


PredictFn = Callable[[Matrix], Vector]


def as_predict_fn(model: Union[Predictor, PredictFn]) -> PredictFn:
    """
    Normalize a predictor object or a plain callable to a batch function.

    Args:
        model: Object with `predict_proba` or a callable on an (n, d) array.

    Returns:
        PredictFn: Function returning a length-n float vector.
    """
    if isinstance(model, Predictor):
        fn = model.predict_proba
    elif callable(model):
        fn = model
    else:
        raise TypeError(f"not a predictor: {type(model).__name__}")

    def predict(X: Matrix) -> Vector:
        return np.asarray(fn(np.atleast_2d(X)), dtype=float).reshape(-1)

    return predict
