"""
Process tensors in matrix-product-operator form.

Node tensors are indexed (chi_out, chi_in, mu, nu): nu is the Liouville index entering the node after the system
propagator, mu the one leaving it. Extended states sigma_k are (L, chi_k) arrays; the reduced state after step k is
sigma_k @ caps[k]. Costates lambda_k pair with extended states through sum(lambda_k * sigma_k) without conjugation.
"""
import typing

import jax
from jax import numpy as jnp

from .backend import COMPLEX, all_finite, as_complex
from .constants import NumericalError


class PtNode(typing.NamedTuple):
    """A diagonal node stores only the chi_out == chi_in diagonal, shape (chi, L, L)."""
    tensor: jnp.ndarray
    diagonal: bool = False

    @property
    def chi_out(self) -> int:
        return self.tensor.shape[0]

    @property
    def chi_in(self) -> int:
        return self.tensor.shape[0] if self.diagonal else self.tensor.shape[1]

    def dense(self) -> jnp.ndarray:
        if not self.diagonal:
            return self.tensor
        return jnp.einsum("amn,ab->abmn", self.tensor, jnp.eye(self.tensor.shape[0], dtype=self.tensor.dtype))

    def apply(self, state: jnp.ndarray) -> jnp.ndarray:
        if self.diagonal:
            return jnp.einsum("amn,...na->...ma", self.tensor, state)
        return jnp.einsum("abmn,...nb->...ma", self.tensor, state)

    def apply_transpose(self, costate: jnp.ndarray) -> jnp.ndarray:
        if self.diagonal:
            return jnp.einsum("...ma,amn->...na", costate, self.tensor)
        return jnp.einsum("...ma,abmn->...nb", costate, self.tensor)


class ProcessTensor:
    def __init__(self, nodes: typing.Sequence[PtNode], dt: float, system_dim: int,
                 caps: typing.Optional[typing.Sequence[jnp.ndarray]] = None,
                 metadata: typing.Optional[typing.Dict[str, typing.Any]] = None):
        self.nodes = list(nodes)
        self.dt = float(dt)
        self.system_dim = int(system_dim)
        self.metadata = dict(metadata or {})
        if caps is None:
            caps = [jnp.ones((1,), COMPLEX)] + [jnp.eye(node.chi_out, 1, dtype=COMPLEX)[:, 0]
                                                for node in self.nodes]
        self.caps = [as_complex(cap) for cap in caps]
        self.validate()

    @classmethod
    def identity(cls, steps: int, system_dim: int, dt: float) -> 'ProcessTensor':
        dim = system_dim ** 2
        node = PtNode(jnp.eye(dim, dtype=COMPLEX).reshape(1, 1, dim, dim))
        return cls([node] * steps, dt, system_dim, metadata={"builder": "identity"})

    @property
    def steps(self) -> int:
        return len(self.nodes)

    @property
    def liouville_dim(self) -> int:
        return self.system_dim ** 2

    def validate(self):
        dim = self.liouville_dim
        if len(self.caps) != self.steps + 1:
            raise ValueError(f"Expected {self.steps + 1} caps, got {len(self.caps)}")
        previous = 1
        for idx, node in enumerate(self.nodes):
            if node.tensor.shape[-2:] != (dim, dim):
                raise ValueError(f"Node {idx} has Liouville shape {node.tensor.shape[-2:]}, expected {(dim, dim)}")
            if node.chi_in != previous:
                raise ValueError(f"Node {idx} has chi_in={node.chi_in} but the previous bond is {previous}")
            if self.caps[idx + 1].shape != (node.chi_out,):
                raise ValueError(f"Cap {idx + 1} has shape {self.caps[idx + 1].shape}, expected {(node.chi_out,)}")
            previous = node.chi_out
        if previous != 1:
            raise ValueError(f"Last node must have chi_out=1, got {previous}")

    def bond_profile(self) -> typing.List[int]:
        return [1] + [node.chi_out for node in self.nodes]

    def max_bond(self) -> int:
        return max(self.bond_profile())


def bond_profile(pt: ProcessTensor) -> typing.List[int]:
    return pt.bond_profile()


def _check_props(pt: ProcessTensor, props: jnp.ndarray):
    if len(props) != pt.steps:
        raise ValueError(f"Got {len(props)} system propagators for a process tensor with {pt.steps} steps")
    if pt.steps and tuple(props[0].shape) != (pt.liouville_dim, pt.liouville_dim):
        raise ValueError(f"Propagator shape {tuple(props[0].shape)} does not match Liouville dimension "
                         f"{pt.liouville_dim}")


def _check_finite(states: typing.Sequence[jnp.ndarray], what: str):
    finite = [bool(flag) for flag in jnp.stack([jnp.all(jnp.isfinite(state)) for state in states])]
    if not all(finite):
        raise NumericalError(f"Non-finite {what} at step {finite.index(False)}")


def _forward(pt: ProcessTensor, props: jnp.ndarray, state: jnp.ndarray) -> typing.List[jnp.ndarray]:
    states = [state]
    for node, prop in zip(pt.nodes, props):
        states.append(node.apply(jnp.einsum("mn,...nb->...mb", prop, states[-1])))
    _check_finite(states, "extended state")
    return states


def contract_forward(pt: ProcessTensor, props: jnp.ndarray, rho0: jnp.ndarray
                     ) -> typing.Tuple[jnp.ndarray, typing.List[jnp.ndarray]]:
    """Returns the final reduced state and the extended states sigma_0..sigma_T."""
    _check_props(pt, props)
    rho0 = as_complex(rho0)
    if rho0.shape != (pt.liouville_dim,):
        raise ValueError(f"Initial state has shape {rho0.shape}, expected {(pt.liouville_dim,)}")
    states = _forward(pt, props, rho0[:, None])
    return states[-1][:, 0], states


def dynamics(pt: ProcessTensor, props: jnp.ndarray, rho0: jnp.ndarray) -> jnp.ndarray:
    """Reduced states rho_0..rho_T, shape (T + 1, L). rho0 may carry leading batch dimensions."""
    _check_props(pt, props)
    rho0 = as_complex(rho0)
    states = _forward(pt, props, rho0[..., None])
    return jnp.stack([state @ cap for state, cap in zip(states, pt.caps)], -2)


def backpropagate(pt: ProcessTensor, props: jnp.ndarray, lambda_final: jnp.ndarray) -> typing.List[jnp.ndarray]:
    """Costates lambda_0..lambda_T with lambda_{k-1} = U_k^T (lambda_k . O_k)."""
    _check_props(pt, props)
    lambda_final = as_complex(lambda_final)
    if lambda_final.ndim == 1:
        lambda_final = lambda_final[:, None]
    if lambda_final.shape != (pt.liouville_dim, 1):
        raise ValueError(f"Final costate has shape {lambda_final.shape}, expected {(pt.liouville_dim, 1)}")
    costates = [lambda_final]
    for idx in range(pt.steps - 1, -1, -1):
        weight = pt.nodes[idx].apply_transpose(costates[-1])
        if weight.shape[-1] != pt.nodes[idx].chi_in:
            raise ValueError(f"Costate bond mismatch at step {idx + 1}")
        costates.append(props[idx].T @ weight)
    costates = costates[::-1]
    _check_finite(costates, "costate")
    return costates


def gradient_wrt_propagators(pt: ProcessTensor, states: typing.Sequence[jnp.ndarray],
                             costates: typing.Sequence[jnp.ndarray]) -> jnp.ndarray:
    """dZ/dU_k[mu, nu] so that dZ = Re sum_k sum(G_k * dU_k). Shape (T, L, L)."""
    if len(states) != pt.steps + 1 or len(costates) != pt.steps + 1:
        raise ValueError(f"Expected {pt.steps + 1} states and costates, got {len(states)} and {len(costates)}")
    grads = [pt.nodes[idx].apply_transpose(costates[idx + 1]) @ states[idx].T for idx in range(pt.steps)]
    if not grads:
        return jnp.zeros((0, pt.liouville_dim, pt.liouville_dim), COMPLEX)
    return jnp.stack(grads)


def recompress(pt: ProcessTensor, eps_rel: float) -> ProcessTensor:
    """
    QR sweep left to right, then truncated SVD sweep right to left. Singular values with s / s_max < eps_rel are
    dropped. metadata["max_discarded"] holds the largest relative discarded weight sum(s_dropped^2) / sum(s^2).
    """
    if not 0 <= eps_rel < 1:
        raise ValueError(f"eps_rel must lie in [0, 1), got {eps_rel}")
    nodes = [node.dense() for node in pt.nodes]
    caps = list(pt.caps)
    dim = pt.liouville_dim

    for idx in range(len(nodes) - 1):
        node = nodes[idx]
        chi_out, chi_in = node.shape[:2]
        q, r = jnp.linalg.qr(node.transpose(1, 2, 3, 0).reshape(chi_in * dim * dim, chi_out))
        nodes[idx] = q.reshape(chi_in, dim, dim, -1).transpose(3, 0, 1, 2)
        nodes[idx + 1] = jnp.einsum("abmn,rb->armn", nodes[idx + 1], r)
        caps[idx + 1] = r @ caps[idx + 1]

    max_discarded = 0.
    for idx in range(len(nodes) - 1, 0, -1):
        node = nodes[idx]
        chi_out, chi_in = node.shape[:2]
        try:
            u, s, vh = jnp.linalg.svd(node.transpose(1, 0, 2, 3).reshape(chi_in, chi_out * dim * dim),
                                      full_matrices=False)
        except Exception as exc:
            raise NumericalError(f"SVD failed at node {idx}: {exc}")
        if not all_finite(s):
            raise NumericalError(f"SVD did not converge at node {idx}")
        if float(s[0]) == 0:
            keep = 1
        else:
            keep = int(jnp.sum(s >= eps_rel * s[0])) if eps_rel > 0 else int(s.shape[0])
        total = float(jnp.sum(s ** 2))
        if total > 0:
            max_discarded = max(max_discarded, float(jnp.sum(s[keep:] ** 2)) / total)
        u, s, vh = u[:, :keep], s[:keep], vh[:keep]
        nodes[idx] = vh.reshape(keep, chi_out, dim, dim).transpose(1, 0, 2, 3)
        nodes[idx - 1] = jnp.einsum("br,bimn->rimn", u * s[None], nodes[idx - 1])
        caps[idx] = (u.conj().T @ caps[idx]) / jnp.where(s > 0, s, 1)

    metadata = dict(pt.metadata, recompressed=eps_rel, max_discarded=max_discarded)
    return ProcessTensor([PtNode(node) for node in nodes], pt.dt, pt.system_dim, caps, metadata)


def complexity(pt: ProcessTensor) -> typing.Dict[str, typing.Any]:
    """Leading-order cost O(T S^4 chi^2) of one forward or backward sweep, using the largest bond."""
    chi = pt.max_bond()
    return {"steps": pt.steps, "system_dim": pt.system_dim, "max_bond": chi,
            "estimate": pt.steps * pt.system_dim ** 4 * chi ** 2}


def random(steps: int, system_dim: int, chi: int, key: jax.Array, dt: float = 0.1) -> ProcessTensor:
    """Synthetic process tensor with Gaussian nodes, normalized so repeated contraction stays bounded."""
    dim = system_dim ** 2
    bonds = [1] + [chi] * (steps - 1) + [1]
    nodes = []
    for idx in range(steps):
        real, imag = jax.random.normal(jax.random.fold_in(key, idx), (2, bonds[idx + 1], bonds[idx], dim, dim))
        tensor = (real + 1j * imag) / jnp.sqrt(2. * bonds[idx] * dim)
        nodes.append(PtNode(tensor.astype(COMPLEX)))
    caps = [jnp.ones((bond,), COMPLEX) / bond for bond in bonds]
    return ProcessTensor(nodes, dt, system_dim, caps, {"builder": "random", "chi": chi})
