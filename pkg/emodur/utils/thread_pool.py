import logging
from queue import Queue
from threading import Thread


class Worker(Thread):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.daemon = True


class ThreadPool:
    """Simple implementation of a thread pool

    This is the base class of the evaluation workers. It incorporates two FIFO
    queues and a number of "workers", namely threads. All threads share the two
    queues; each thread watches ``in_queue``, processes every task it gets and
    puts the result to ``out_queue``.

    Note:
        This class is not designed as a generic thread pool. Workers must
        treat shared objects (e.g. a trained model) as read-only.

    Attributes:
        name (str): thread pool name.
        thread_num (int): number of available threads.
        in_queue (Queue): input queue of tasks.
        out_queue (Queue): output queue of finished tasks.
        workers (list): a list of working threads.
        logger (Logger): standard python logger.
    """

    def __init__(self, thread_num, in_queue=None, out_queue=None, name=None):
        if thread_num < 1:
            raise ValueError(f'"thread_num" must be positive, got {thread_num}')
        self.thread_num = thread_num
        self.in_queue = in_queue if in_queue else Queue()
        self.out_queue = out_queue if out_queue else Queue()
        self.name = name if name else __name__
        self.workers = []
        self.logger = logging.getLogger(self.name)

    def init_workers(self, *args, **kwargs):
        self.workers = []
        for i in range(self.thread_num):
            worker = Worker(target=self.worker_exec, name=f"{self.name}-{i + 1:03d}", args=args, kwargs=kwargs)
            self.workers.append(worker)

    def start(self, *args, **kwargs):
        self.init_workers(*args, **kwargs)
        for worker in self.workers:
            self.logger.debug("thread %s started", worker.name)
            worker.start()

    def join(self):
        for worker in self.workers:
            worker.join()

    def input(self, task, block=True, timeout=None):
        self.in_queue.put(task, block, timeout)

    def output(self, task, block=True, timeout=None):
        self.out_queue.put(task, block, timeout)

    def drain(self):
        """Pop every finished task from ``out_queue``.

        Returns:
            list: the finished tasks in completion order.
        """
        results = []
        while not self.out_queue.empty():
            results.append(self.out_queue.get())
        return results

    def worker_exec(self, *args, **kwargs):
        raise NotImplementedError
