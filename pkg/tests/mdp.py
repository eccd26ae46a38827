"""A 3-state chain MDP and the A2C update loop used by the oracle tests.

States 0 and 1 are live, state 2 is terminal.  Action 0 ("stay") pays a small
reward and keeps the agent where it is; action 1 ("advance") moves one state
to the right and pays ``goal`` when it enters the terminal state.
"""
import numpy as np

from qosched.a2c import actor_update, critic_update, epsilon_at, select_action, td_error
from qosched.nn import PolicyNetwork, ValueNetwork

N_STATES, N_ACTIONS, TERMINAL = 3, 2, 2


def transition(s: int, a: int, stay_reward: float, goal: float):
    """(next state, reward)."""
    if a == 0:
        return s, stay_reward
    nxt = s + 1
    return nxt, (goal if nxt == TERMINAL else 0.0)


def value_iteration(gamma: float, stay_reward: float, goal: float, tol: float = 1e-12):
    """Optimal greedy action for every live state, by exhaustive value iteration."""
    v = np.zeros(N_STATES)
    while True:
        q = np.zeros((TERMINAL, N_ACTIONS))
        for s in range(TERMINAL):
            for a in range(N_ACTIONS):
                nxt, r = transition(s, a, stay_reward, goal)
                q[s, a] = r + gamma * (0.0 if nxt == TERMINAL else v[nxt])
        new = np.append(q.max(axis=1), 0.0)
        if np.max(np.abs(new - v)) < tol:
            return q.argmax(axis=1)
        v = new


def onehot(s: int) -> np.ndarray:
    x = np.zeros(N_STATES)
    x[s] = 1.0
    return x


def greedy_policy(actor: PolicyNetwork) -> np.ndarray:
    mask = np.ones(N_ACTIONS, dtype=bool)
    return np.array([int(np.argmax(actor.probs(onehot(s), mask))) for s in range(TERMINAL)])


def train_a2c(seed: int, steps: int = 10_000, gamma: float = 0.9, stay_reward: float = 0.05,
              goal: float = 1.0, lr_actor: float = 0.01, lr_critic: float = 0.05,
              explore: int = 3700, episode_cap: int = 20, hidden: int = 16):
    """Run the scheduler's A2C update rule on the chain; returns the trained actor."""
    rng = np.random.default_rng(seed)
    actor = PolicyNetwork([N_STATES, hidden, N_ACTIONS], rng)
    critic = ValueNetwork([N_STATES, hidden, 1], rng)
    mask = np.ones(N_ACTIONS, dtype=bool)
    s, t_ep = 0, 0
    for step in range(steps):
        obs = onehot(s)
        a = select_action(actor.probs(obs, mask), epsilon_at(step, 1.0, 0.0, explore), rng, mask)
        nxt, r = transition(s, a, stay_reward, goal)
        terminal = nxt == TERMINAL
        v_next = 0.0 if terminal else critic.value(onehot(nxt))
        delta = td_error(r, gamma, v_next, critic.value(obs))
        critic_update(critic, obs, delta, lr_critic, 1.0)
        actor_update(actor, obs, mask, a, delta, lr_actor, 1.0)
        t_ep += 1
        if terminal or t_ep >= episode_cap:
            s, t_ep = 0, 0
        else:
            s = nxt
    return actor
