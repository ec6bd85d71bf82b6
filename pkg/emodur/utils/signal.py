from threading import Lock, local


class Signal:
    """Signal class

    Provides interfaces for setting and getting flags shared between the
    components of a run, e.g. the trainer and the predictor's inference path.

    Names listed in ``thread_local`` hold one value per thread: a thread sees
    the initial value until it sets its own, and setting it never affects
    other threads. All other names are shared by every thread.

    Attributes:
        signals: A dict of all shared signal names and values.
        init_status: The initial values of all signals.
    """

    def __init__(self, thread_local=()):
        """Init Signal with empty dicts"""
        self._signals = {}
        self._init_status = {}
        self._lock = Lock()
        self._local_names = frozenset(thread_local)
        self._local = local()

    def _local_values(self):
        if not hasattr(self._local, "values"):
            self._local.values = {}
        return self._local.values

    def set(self, **signals):
        """Set signals.

        Args:
            signals: key-value pairs of signals, for example
                     ``{'training': True, 'stop': False}``
        """
        with self._lock:
            for name in signals:
                if name not in self._init_status:
                    self._init_status[name] = signals[name]
                if name in self._local_names:
                    self._local_values()[name] = signals[name]
                else:
                    self._signals[name] = signals[name]

    def incr(self, name, step=1):
        """Increase a counter signal, creating it at 0 if missing.

        Returns:
            int: the new value.
        """
        with self._lock:
            if name not in self._init_status:
                self._init_status[name] = 0
            values = self._local_values() if name in self._local_names else self._signals
            values[name] = values.get(name, self._init_status[name]) + step
            return values[name]

    def reset(self):
        """Reset shared signals, and this thread's local ones, to their initial values"""
        with self._lock:
            self._signals = {
                name: value for name, value in self._init_status.items() if name not in self._local_names
            }
            self._local_values().clear()

    def get(self, name):
        """Get a signal value by its name.

        Args:
            name: a string indicating the signal name.

        Returns:
            Value of the signal or None if the name is invalid.
        """
        if name in self._local_names:
            return self._local_values().get(name, self._init_status.get(name))
        return self._signals.get(name)

    def names(self):
        """Return all the signal names"""
        return self._init_status.keys()
