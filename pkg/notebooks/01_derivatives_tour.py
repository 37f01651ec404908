# %% [markdown]
# # A short tour of the derivative engine
#
# The network loss needs f, ∂_t f and ∂_x f at every collocation point, and
# then the gradient of a loss built from all three with respect to the
# weights.  Every traced value carries its primal together with the two
# input tangents, and one reverse sweep covers all three channels.

# %%
import numpy as np

from transport_pinn import autodiff as ad
from transport_pinn import mlp
from transport_pinn.autodiff import ParameterStore, Tape

# %% [markdown]
# Product rule on plain inputs: y = t·x has ∂_t y = x and ∂_x y = t.

# %%
with Tape():
    t = ad.lift_input(2.0, "t")
    x = ad.lift_input(5.0, "x")
    y = t * x
print("y =", y.item(), " dy/dt =", float(y.tangent_t), " dy/dx =", float(y.tangent_x))

# %% [markdown]
# Gradients can flow through a tangent.  Here the loss is (∂_x tanh(θx))²
# and we compare against central differences.

# %%
store = ParameterStore.from_values([0.7])


def loss_of(theta):
    s = ParameterStore.from_values(theta)
    with Tape():
        val = ad.square(ad.tangent_x(ad.tanh(ad.lift_param(s, 0) * ad.lift_input(0.3, "x"))))
        return val.item()


with Tape():
    val = ad.square(ad.tangent_x(ad.tanh(ad.lift_param(store, 0) * ad.lift_input(0.3, "x"))))
    ad.backward(val, store)
print("reverse sweep:", store.gradient[0])
print("finite diff:  ", ad.finite_diff_gradient(loss_of, store)[0])

# %% [markdown]
# A small tanh network evaluated on a batch of (t, x, v) points gives the
# three columns f, f_t, f_x in one pass.

# %%
cfg = mlp.NetworkConfig((3, 16, 16, 1), seed=0)
params = mlp.init_parameters(cfg)
pts = np.random.default_rng(0).uniform([0, 0, -1], [0.06, 1, 1], size=(5, 3))
print(np.round(mlp.evaluate_grid(params, cfg, pts), 5))
print("parameters:", cfg.n_params, "  paper-size network:", mlp.NetworkConfig().n_params)
