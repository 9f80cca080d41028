"""
Checkpoint codec.

A checkpoint is a numpy ``.npz`` archive (a zip of ``.npy`` arrays, row-major float64) with
the keys:

* ``layer.<j>.weight`` / ``layer.<j>.bias``: task network initialization theta
* ``attenuator.layer.<j>.weight`` / ``attenuator.layer.<j>.bias``: attenuator parameters phi
* ``attenuation.<g>``: learned task-independent attenuation groups, in scope order
* ``meta.sizes``, ``meta.head``, ``meta.transform``, ``meta.scope``: architecture description

Values round-trip bit-exactly.
"""

import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

import numpy as np

from l2f.autodiff import variable
from l2f.exceptions import CheckpointError
from l2f.models import Attenuator, LayeredParams, LearnedAttenuation, TaskNetwork
from l2f.schema import Head, Method, Scope, Transform

logger = logging.getLogger(__name__)


@dataclass
class Checkpoint:
    network: TaskNetwork
    attenuator: Optional[Attenuator] = None
    attenuation: Optional[LearnedAttenuation] = None

    def method_settings(self) -> Dict[str, Any]:
        """Method, transform and scope implied by the stored parameters, as dotted config keys."""
        if self.attenuation is not None:
            return {'meta.method': Method.LEARNED_SCOPE, 'meta.scope': self.attenuation.scope}
        if self.attenuator is not None:
            transform = self.attenuator.transform
            method = Method.L2F if transform is Transform.SIGMOIDED_GAMMA else Method.TRANSFORM_VARIANT
            return {'meta.method': method, 'meta.transform': transform}
        return {'meta.method': Method.MAML}


def _layer_entries(prefix: str, params: LayeredParams) -> dict:
    entries = {}
    for j, (weight, bias) in enumerate(params.arrays()):
        entries[f'{prefix}layer.{j}.weight'] = weight
        entries[f'{prefix}layer.{j}.bias'] = bias
    return entries


def _read_layers(archive, prefix: str) -> Optional[LayeredParams]:
    arrays = []
    j = 0
    while f'{prefix}layer.{j}.weight' in archive:
        arrays.append((archive[f'{prefix}layer.{j}.weight'], archive[f'{prefix}layer.{j}.bias']))
        j += 1
    return LayeredParams.from_arrays(arrays) if arrays else None


def save_checkpoint(path: str, network: TaskNetwork, attenuator: Attenuator = None,
                    attenuation: LearnedAttenuation = None) -> str:
    """
    Write a checkpoint.

    :param path: destination file; written as given, no suffix is appended
    :param network: task network holding theta
    :param attenuator: attenuator holding phi, if any
    :param attenuation: learned task-independent attenuation, if any
    :return: the path written
    """
    entries = _layer_entries('', network.params)
    entries['meta.sizes'] = np.array(network.sizes, dtype=np.int64)
    entries['meta.head'] = np.array(network.head.value)
    if attenuator is not None:
        entries.update(_layer_entries('attenuator.', attenuator.params))
        entries['meta.transform'] = np.array(attenuator.transform.value)
    if attenuation is not None:
        entries['meta.scope'] = np.array(attenuation.scope.value)
        for g, gamma in enumerate(attenuation.arrays()):
            entries[f'attenuation.{g}'] = gamma

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as handle:
        np.savez(handle, **entries)
    logger.debug('Checkpoint written to %s', path)
    return path


def load_checkpoint(path: str) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    if not os.path.exists(path):
        raise CheckpointError(f'Checkpoint {path} does not exist')
    with np.load(path, allow_pickle=False) as archive:
        params = _read_layers(archive, '')
        if params is None or 'meta.sizes' not in archive:
            raise CheckpointError(f'{path} is not an l2f checkpoint')
        sizes = tuple(int(s) for s in archive['meta.sizes'])
        if params.sizes() != sizes:
            raise CheckpointError(f'{path}: layer shapes {params.shapes()} do not match sizes {list(sizes)}')
        network = TaskNetwork(sizes, params, Head.parse(str(archive['meta.head'])))

        attenuator = None
        phi = _read_layers(archive, 'attenuator.')
        if phi is not None:
            attenuator = Attenuator(phi, Transform.parse(str(archive['meta.transform'])), params.layer_count)

        attenuation = None
        if 'meta.scope' in archive:
            gammas = []
            g = 0
            while f'attenuation.{g}' in archive:
                gammas.append(variable(archive[f'attenuation.{g}']))
                g += 1
            attenuation = LearnedAttenuation(Scope.parse(str(archive['meta.scope'])), gammas)
    return Checkpoint(network, attenuator, attenuation)


def check_architecture(checkpoint: Checkpoint, sizes: Sequence[int]) -> None:
    """Raise :class:`CheckpointError` listing expected and found shapes when they differ."""
    expected = [((fan_out, fan_in), (fan_out,)) for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]
    found = checkpoint.network.params.shapes()
    if expected != found:
        raise CheckpointError(f'Architecture mismatch: expected layer shapes {expected}, found {found}')
