"""Array-backed binary heaps for numba code.

Entries are ``(key, id)`` pairs ordered lexicographically, so equal keys are
broken by id. The max-heap keeps the largest pair on top, the min-heap the
smallest. Callers own the buffers and track the size.
"""

from numba import njit


@njit(cache=True, inline="always")
def _greater(k1, i1, k2, i2):
    return k1 > k2 or (k1 == k2 and i1 > i2)


@njit(cache=True)
def max_push(keys, ids, size, key, idx):
    pos = size
    while pos > 0:
        parent = (pos - 1) >> 1
        if _greater(key, idx, keys[parent], ids[parent]):
            keys[pos] = keys[parent]
            ids[pos] = ids[parent]
            pos = parent
        else:
            break
    keys[pos] = key
    ids[pos] = idx
    return size + 1


@njit(cache=True)
def _max_sift_down(keys, ids, size, key, idx):
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _greater(keys[child + 1], ids[child + 1], keys[child], ids[child]):
            child += 1
        if _greater(keys[child], ids[child], key, idx):
            keys[pos] = keys[child]
            ids[pos] = ids[child]
            pos = child
        else:
            break
    keys[pos] = key
    ids[pos] = idx


@njit(cache=True)
def max_pop(keys, ids, size):
    size -= 1
    if size > 0:
        _max_sift_down(keys, ids, size, keys[size], ids[size])
    return size


@njit(cache=True)
def max_replace_top(keys, ids, size, key, idx):
    _max_sift_down(keys, ids, size, key, idx)


@njit(cache=True)
def min_push(keys, ids, size, key, idx):
    pos = size
    while pos > 0:
        parent = (pos - 1) >> 1
        if _greater(keys[parent], ids[parent], key, idx):
            keys[pos] = keys[parent]
            ids[pos] = ids[parent]
            pos = parent
        else:
            break
    keys[pos] = key
    ids[pos] = idx
    return size + 1


@njit(cache=True)
def min_pop(keys, ids, size):
    size -= 1
    if size > 0:
        key = keys[size]
        idx = ids[size]
        pos = 0
        while True:
            child = 2 * pos + 1
            if child >= size:
                break
            if child + 1 < size and _greater(keys[child], ids[child], keys[child + 1], ids[child + 1]):
                child += 1
            if _greater(key, idx, keys[child], ids[child]):
                keys[pos] = keys[child]
                ids[pos] = ids[child]
                pos = child
            else:
                break
        keys[pos] = key
        ids[pos] = idx
    return size
