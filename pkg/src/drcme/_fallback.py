"""Pure numpy versions of the compiled kernels in ``_core``."""

import numpy as np


def sq_euclidean(A, B):
    AA = np.einsum("ij,ij->i", A, A)[:, None]
    BB = np.einsum("ij,ij->i", B, B)[None, :]
    D = AA + BB - 2.0 * (A @ B.T)
    np.maximum(D, 0.0, out=D)
    return D


def gaussian_gram(A, B, bandwidth):
    D = sq_euclidean(A, B)
    D *= -0.5 / (bandwidth * bandwidth)
    return np.exp(D, out=D)


def gaussian_gram_sym(X, bandwidth):
    G = gaussian_gram(X, X, bandwidth)
    G = 0.5 * (G + G.T)
    np.fill_diagonal(G, 1.0)
    return G


def pairwise_distances(X):
    n = X.shape[0]
    iu = np.triu_indices(n, k=1)
    diff = X[iu[0]] - X[iu[1]]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def quad_forms(Q, U):
    return np.einsum("pi,pi->p", U @ Q, U)
