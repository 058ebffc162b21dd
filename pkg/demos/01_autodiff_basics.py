"""Tour of the reverse-mode tensor core: tapes, backward, gradient checking."""

import numpy as np

from rgbdseg import Tensor, grad_check, no_grad

# --- building a graph and differentiating it -------------------------------
a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
b = Tensor(np.array([10.0, 20.0]), requires_grad=True)

y = ((a @ a) * 0.5 + b).relu().sum()
y.backward()
print("y =", y.item())
print("dy/da =\n", a.grad)
print("dy/db =", b.grad)

# gradients accumulate across backward calls until cleared
y2 = ((a @ a) * 0.5 + b).relu().sum()
y2.backward()
print("after a second backward, dy/db doubles:", b.grad)
a.grad = b.grad = None

# --- no_grad turns the tape off -------------------------------------------
with no_grad():
    silent = (a * 3).sum()
print("inside no_grad nothing records a backward:", silent.requires_grad)

# --- finite-difference verification ---------------------------------------
def f(ts):
    return ((ts["a"] @ ts["a"]).sigmoid() * ts["w"]).sum()

report = grad_check(f, {"a": Tensor(np.random.default_rng(0).standard_normal((3, 3))),
                        "w": Tensor(np.random.default_rng(1).standard_normal((3, 3)))})
print(f"grad_check: max rel error {report.max_rel_error:.2e} "
      f"over {sum(report.checked.values())} coordinates")

# relu kinks near zero are excluded (flagged), not failed
edgy = Tensor(np.array([1.0, 5e-5, -2.0]))
rep = grad_check(lambda t: t.relu().sum(), edgy)
print(f"kink-aware: checked {sum(rep.checked.values())}, "
      f"flagged {sum(rep.flagged.values())} (the coordinate sitting on the hinge)")
