"""Finite-difference checks shared by the unit and acceptance suites."""
from __future__ import annotations

import numpy as np

import dvp.network as network
from dvp.autodiff import Tensor, no_grad
from dvp.network import Architecture, DnCNN
from dvp.noise import VarianceModel, make_yhat, sample_z
from dvp.objective import BatchItem, loss_all
from dvp.perturb import compute_weights, make_perturbed, select_subset
from oracles import numerical_grad, relative_error

KINK_MARGIN = 1e-4


class _ReluRecorder:
    def __init__(self, relu):
        self.relu, self.min_abs = relu, np.inf

    def __call__(self, x):
        self.min_abs = min(self.min_abs, float(np.min(np.abs(x.data))))
        return self.relu(x)


def _instance(rng):
    model = DnCNN(Architecture(depth=3, channels=3), rng, dtype=np.float64)
    for p in model.params:
        p.data = p.data + 0.3 * rng.standard_normal(p.shape)
    vm = VarianceModel([0.01, 0.01])
    items = []
    for _ in range(2):
        y = rng.uniform(0, 1, (10, 10))
        alpha = float(rng.uniform(0.1, 1.0))
        aux = make_yhat(y, sample_z(y, vm, rng), alpha)
        S = select_subset(10, 10, rng)
        pert = make_perturbed(aux, y, vm, S, rng)
        with no_grad():
            r1 = model(Tensor(pert.yhat1[None, None])).data[0, 0]
            r2 = model(Tensor(pert.yhat2[None, None])).data[0, 0]
        items.append(BatchItem(y, aux, pert, compute_weights(r1, r2, S, pert.yhat1, pert.yhat2)))
    return model, items


def lall_gradcheck(rng, gamma=1.0, coords=30) -> float:
    """Relative error for one kink-free random instance of L_all (W frozen)."""
    while True:
        model, items = _instance(rng)
        rec = _ReluRecorder(network.relu)
        network.relu = rec
        try:
            with no_grad():
                loss_all(model, items, gamma)
        finally:
            network.relu = rec.relu
        if rec.min_abs > KINK_MARGIN:
            break

    def f(arrays):
        for p, a in zip(model.params, arrays):
            p.data = a
        with no_grad():
            return float(loss_all(model, items, gamma).data)

    arrays = [p.data.copy() for p in model.params]
    model.zero_grad()
    for p in model.params:
        p.data = p.data.copy()
    loss_all(model, items, gamma).backward()
    analytic = [p.grad.copy() for p in model.params]
    num = numerical_grad(f, arrays, coords=coords, rng=rng)
    flat_a = np.concatenate([a.ravel() for a in analytic])
    flat_n = np.concatenate([n.ravel() for n in num])
    return relative_error(flat_a, flat_n)
