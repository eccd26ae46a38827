"""Central finite-difference checks of the actor and critic gradients."""
import numpy as np

from qosched.nn import PolicyNetwork, ValueNetwork


def _flat(grads):
    return np.concatenate([np.concatenate([dW.ravel(), db.ravel()]) for dW, db in grads])


def _fd(net, f, eps=1e-6):
    out = []
    for p in net.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + eps
            hi = f()
            p[idx] = old - eps
            lo = f()
            p[idx] = old
            g[idx] = (hi - lo) / (2 * eps)
        out.append(g.ravel())
    return np.concatenate(out)


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def actor_probe(rng, sizes=(12, 10, 10, 5)):
    """Relative error between analytic and numerical grad of log pi(a|O)."""
    net = PolicyNetwork(list(sizes), rng)
    x = rng.normal(size=sizes[0])
    mask = rng.random(sizes[-1]) < 0.7
    mask[rng.integers(sizes[-1])] = True
    a = int(rng.choice(np.flatnonzero(mask)))
    probs = net.probs(x, mask)
    analytic = _flat(net.gradient(x, net.log_prob_grad_output(probs, a)))
    numeric = _fd(net, lambda: float(np.log(net.probs(x, mask)[a])))
    return rel_err(analytic, numeric)


def critic_probe(rng, sizes=(12, 10, 10, 1)):
    """Relative error between analytic and numerical grad of (target - V(O))**2."""
    net = ValueNetwork(list(sizes), rng)
    x = rng.normal(size=sizes[0])
    target = float(rng.normal() * 3)
    delta = target - net.value(x)
    analytic = _flat(net.gradient(x, np.array([-2.0 * delta])))
    numeric = _fd(net, lambda: (target - net.value(x)) ** 2)
    return rel_err(analytic, numeric)
