"""Pure-numpy GRU sequence kernel (fallback when the compiled one is absent).

Layout conventions shared with the compiled kernel:
  x     (T, B, D)  time-major inputs, C-contiguous float64
  mask  (T, B)     1.0 for real steps, 0.0 for padding (state carries through)
  wx    (D, 3H)    input kernels, gate order [update | reset | candidate]
  wh    (H, 3H)    recurrent kernels, same gate order
  b     (3H,)      biases
Cell: z = S(xWxz + hWhz + bz), r = S(xWxr + hWhr + br),
      n = tanh(xWxn + (r*h)Whn + bn), h' = (1-z)*h + z*n,
      h  = m*h' + (1-m)*h   (masked steps leave the state untouched).
``reverse=True`` runs the recurrence from the last step to the first.
"""

import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gru_forward(x, mask, h0, wx, wh, b, reverse=False):
    t_len, batch, _ = x.shape
    h_dim = wh.shape[0]
    xp = x.reshape(t_len * batch, -1) @ wx + b
    xp = xp.reshape(t_len, batch, 3 * h_dim)

    z_all = np.empty((t_len, batch, h_dim))
    r_all = np.empty((t_len, batch, h_dim))
    n_all = np.empty((t_len, batch, h_dim))
    h_out = np.empty((t_len, batch, h_dim))

    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    h = h0.copy()
    for t in steps:
        azr = xp[t, :, : 2 * h_dim] + h @ wh[:, : 2 * h_dim]
        z = _sigmoid(azr[:, :h_dim])
        r = _sigmoid(azr[:, h_dim:])
        an = xp[t, :, 2 * h_dim:] + (r * h) @ wh[:, 2 * h_dim:]
        n = np.tanh(an)
        h_new = h + z * (n - h)
        m = mask[t][:, None]
        h = m * h_new + (1.0 - m) * h
        z_all[t], r_all[t], n_all[t], h_out[t] = z, r, n, h

    cache = (x, mask, h0, wx, wh, z_all, r_all, n_all, h_out, reverse)
    return h_out, cache


def gru_backward(dh_out, cache):
    x, mask, h0, wx, wh, z_all, r_all, n_all, h_out, reverse = cache
    t_len, batch, h_dim = h_out.shape

    dxp = np.zeros((t_len, batch, 3 * h_dim))
    dwh = np.zeros_like(wh)
    dh = np.zeros((batch, h_dim))

    steps = list(range(t_len - 1, -1, -1) if reverse else range(t_len))
    for i in range(t_len - 1, -1, -1):
        t = steps[i]
        h_prev = h_out[steps[i - 1]] if i > 0 else h0
        m = mask[t][:, None]
        z, r, n = z_all[t], r_all[t], n_all[t]

        dht = dh_out[t] + dh
        dhnew = dht * m
        dh = dht * (1.0 - m)

        dz = dhnew * (n - h_prev)
        dn = dhnew * z
        dh += dhnew * (1.0 - z)

        dan = dn * (1.0 - n * n)
        drh = dan @ wh[:, 2 * h_dim:].T
        dwh[:, 2 * h_dim:] += (r * h_prev).T @ dan
        dr = drh * h_prev
        dh += drh * r

        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dazr = np.concatenate([daz, dar], axis=1)
        dh += dazr @ wh[:, : 2 * h_dim].T
        dwh[:, : 2 * h_dim] += h_prev.T @ dazr

        dxp[t, :, :h_dim] = daz
        dxp[t, :, h_dim: 2 * h_dim] = dar
        dxp[t, :, 2 * h_dim:] = dan

    dxp_flat = dxp.reshape(t_len * batch, 3 * h_dim)
    dx = (dxp_flat @ wx.T).reshape(x.shape)
    dwx = x.reshape(t_len * batch, -1).T @ dxp_flat
    db = dxp_flat.sum(axis=0)
    return dx, dwx, dwh, db
