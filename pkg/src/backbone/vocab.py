"""Fixed integer vocabulary and text templates.

Class "names" are single token ids: class `c` is token `CLASS_OFFSET + c`.
"""

from collections.abc import Sequence

import numpy as np

from errors import ContractError, TemplateError

PAD = 0
SOS = 1
EOS = 2
A = 3
PHOTO = 4
OF = 5
X = 6  # placeholder marking a learnable prompt position
CLASS_OFFSET = 8

SLOT = -1  # stands for the class token inside a template

FROZEN_TEMPLATE: tuple[int, ...] = (SOS, A, PHOTO, OF, A, SLOT, EOS)


def learnable_template(prompt_length: int) -> tuple[int, ...]:
    """`X X ... X {class}` between the start and end tokens."""
    if prompt_length < 1:
        raise TemplateError("a learnable template needs at least one prompt position")
    return (SOS, *([X] * prompt_length), SLOT, EOS)


def class_token(class_id: int, vocab_size: int) -> int:
    token = CLASS_OFFSET + class_id
    if class_id < 0 or token >= vocab_size:
        raise ContractError(
            f"class {class_id} maps to token {token}, "
            f"outside a vocabulary of {vocab_size}"
        )
    return token


def render(
    template: Sequence[int], class_ids: Sequence[int], text_len: int, vocab_size: int
) -> np.ndarray:
    """Token ids `[text_len, N_c]`, one column per class, right-padded with PAD."""
    slots = [i for i, token in enumerate(template) if token == SLOT]
    if len(slots) != 1:
        raise TemplateError(
            f"template must contain exactly one class slot, found {len(slots)}"
        )
    if len(template) > text_len:
        raise TemplateError(
            f"template of length {len(template)} exceeds text_len={text_len}"
        )
    if any(token >= vocab_size for token in template):
        raise ContractError(f"template token outside a vocabulary of {vocab_size}")

    ids = np.full((text_len, len(class_ids)), PAD, dtype=np.int64)
    ids[: len(template)] = np.asarray(template, dtype=np.int64)[:, None]
    ids[slots[0]] = [class_token(c, vocab_size) for c in class_ids]
    return ids
