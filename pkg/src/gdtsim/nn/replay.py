from ..errors import EmptyBufferError


class ReplayBuffer:
    """Fixed-capacity FIFO store of transitions with uniform sampling."""

    def __init__(self, capacity=1000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._items = []
        self._cursor = 0

    def __len__(self):
        return len(self._items)

    def push(self, transition):
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity

    def items(self):
        """Contents oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._cursor:] + self._items[:self._cursor]

    def sample(self, k, rng):
        if not self._items:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        if k > len(self._items):
            raise ValueError(f"sample size {k} exceeds buffer size {len(self._items)}")
        idx = rng.integers(0, len(self._items), size=k)
        return [self._items[i] for i in idx]
