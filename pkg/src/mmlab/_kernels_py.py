"""Pure-Python implementation of the hot loops; mirrors ``_kernels.pyx`` line for line."""
import numpy as np


def _layers(theta, dims):
    layers, off = [], 0
    for k in range(len(dims) - 1):
        n_in, n_out = int(dims[k]), int(dims[k + 1])
        W = theta[off:off + n_in * n_out].reshape(n_out, n_in)
        off += n_in * n_out
        b = theta[off:off + n_out]
        off += n_out
        layers.append((W, b))
    return layers


def _forward(layers, x):
    h = x
    last = len(layers) - 1
    for k, (W, b) in enumerate(layers):
        h = W @ h + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h


def forward_one(theta, dims, x, out):
    out[:] = _forward(_layers(theta, dims), np.asarray(x, float))


def rollout(ask1, bid1, last, mid2, spread, imb, vol, hist, acct, n_steps,
            fixed_action, max_inv, theta, dims, mu, sd, eps, u, ra,
            comm2, punish, inclusive, comm_in_reward, liquidate, lag,
            t_out, states, actions, ma_out, mb_out, dcash_out, dinv_out, rew_out,
            inv_out, cash_out, val_out, wealth_out):
    n = len(ask1)
    t, inv, cash, val, wealth, fills = (int(x) for x in acct)
    use_net = fixed_action < 0
    layers = _layers(theta, dims) if use_net else None
    mu = np.asarray(mu, float)
    sd = np.asarray(sd, float)
    ask1 = ask1.tolist(); bid1 = bid1.tolist(); last = last.tolist()
    mid2 = mid2.tolist(); spread = spread.tolist()

    def features(row, t):
        states[row, 0] = imb[t]
        states[row, 1] = vol[t]
        states[row, 2] = inv
        states[row, 3] = spread[t]
        states[row, 4] = (hist[t] - hist[t - lag]) / 2.0

    i = 0
    while i < n_steps and t < n - 1:
        features(i, t)
        if use_net:
            if u[i] < eps[i]:
                a = int(ra[i])
            else:
                q = _forward(layers, (states[i] - mu) / sd)
                a = 0
                for j in range(1, len(q)):
                    if q[j] > q[a]:
                        a = j
        else:
            a = fixed_action
        if max_inv > 0:
            if inv >= max_inv:
                a &= 2
            if inv <= -max_inv:
                a &= 1
        nxt = last[t + 1]
        if inclusive:
            ma = 1 if (a & 2) and nxt >= ask1[t] else 0
            mb = 1 if (a & 1) and nxt <= bid1[t] else 0
        else:
            ma = 1 if (a & 2) and nxt > ask1[t] else 0
            mb = 1 if (a & 1) and nxt < bid1[t] else 0
        nf = ma + mb
        dcash = spread[t] * nf - comm2 * nf
        rcash = dcash if comm_in_reward else dcash + comm2 * nf
        inv += mb - ma
        dval = inv * (mid2[t + 1] - mid2[t])
        t += 1
        if liquidate and t == n - 1 and inv != 0:
            cost = abs(inv) * (spread[t] + comm2)
            dcash -= cost
            rcash -= cost
            inv = 0
        cash += dcash
        val += dval
        wealth += dcash + dval
        fills += nf
        hist[t] = val
        r = rcash + dval
        if punish:
            r -= 2 * abs(inv)
        t_out[i] = t - 1
        actions[i] = a
        ma_out[i] = ma
        mb_out[i] = mb
        dcash_out[i] = dcash
        dinv_out[i] = dval
        rew_out[i] = r
        inv_out[i] = inv
        cash_out[i] = cash
        val_out[i] = val
        wealth_out[i] = wealth
        i += 1
    features(i, t)
    acct[:] = (t, inv, cash, val, wealth, fills)
    return i
