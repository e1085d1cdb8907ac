"""Replay-based continual learning over sequentially arriving subclasses.

Each task introduces one broadband and one low-latency traffic subclass as
Gaussian-mixture feature clusters.  A small classifier is retrained per task
on the new data plus a bounded replay memory of earlier exemplars, its output
head growing as subclasses appear.  The usual accuracy-matrix metric suite is
computed over the run.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .nn import AdamState, Tensor, adam_step, cross_entropy, xavier_uniform

__all__ = [
    "Task",
    "TaskStream",
    "ReplayMemory",
    "ContinualClassifier",
    "make_task_stream",
    "update_memory",
    "train_task",
    "evaluate",
    "run_continual",
    "compute_af_ap",
    "cl_metrics",
    "cl_objective",
    "stream_to_csv",
    "stream_from_csv",
    "metrics_to_csv",
]

SUPER_EMBB, SUPER_URLLC = 0, 1


@dataclass
class Task:
    x: np.ndarray          # (n, d)
    y: np.ndarray          # (n,), global subclass ids
    subclasses: list       # introduced here, in id order
    superclass: dict       # subclass id -> superclass


@dataclass
class TaskStream:
    tasks: list
    dim: int

    @property
    def num_subclasses(self) -> int:
        return sum(len(t.subclasses) for t in self.tasks)

    @property
    def superclass(self) -> dict:
        out = {}
        for t in self.tasks:
            out.update(t.superclass)
        return out


def make_task_stream(num_tasks: int = 7, samples_per_class: int = 100,
                     dim: int = 6, margin: float = 4.0,
                     seed: int = 0) -> TaskStream:
    """Synthetic stream; every task brings one subclass of each superclass.

    Cluster centers are spread on coordinate directions scaled by ``margin``
    so the stream is linearly separable with slack; unit-variance noise.
    """
    rng = np.random.default_rng(seed)
    tasks = []
    next_id = 0
    for t in range(num_tasks):
        xs, ys, subs, supers = [], [], [], {}
        for sup in (SUPER_EMBB, SUPER_URLLC):
            center = rng.normal(size=dim)
            center *= margin / np.linalg.norm(center)
            center += margin * 2.0 * (t + 1) * np.eye(dim)[
                (2 * t + sup) % dim]
            xs.append(center + rng.normal(size=(samples_per_class, dim)))
            ys.append(np.full(samples_per_class, next_id))
            subs.append(next_id)
            supers[next_id] = sup
            next_id += 1
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        perm = rng.permutation(len(x))
        tasks.append(Task(x=x[perm], y=y[perm], subclasses=subs,
                          superclass=supers))
    return TaskStream(tasks=tasks, dim=dim)


@dataclass
class ReplayMemory:
    """Bounded per-task exemplar store."""

    capacity: int
    store: dict = field(default_factory=dict)   # task id -> (x, y)

    def all_samples(self):
        if not self.store:
            return None
        xs = np.concatenate([v[0] for v in self.store.values()])
        ys = np.concatenate([v[1] for v in self.store.values()])
        return xs, ys

    def size(self, task_id: int) -> int:
        return 0 if task_id not in self.store else len(self.store[task_id][0])


def update_memory(mem: ReplayMemory, task_id: int, x: np.ndarray,
                  y: np.ndarray, seed: int = 0) -> ReplayMemory:
    """Add a task's samples, uniformly down-sampling to capacity."""
    if mem.capacity <= 0:
        raise ValueError("memory capacity must be positive")
    if task_id in mem.store:
        old_x, old_y = mem.store[task_id]
        x = np.concatenate([old_x, x])
        y = np.concatenate([old_y, y])
    if len(x) > mem.capacity:
        rng = np.random.default_rng(seed + task_id)
        keep = rng.choice(len(x), size=mem.capacity, replace=False)
        keep.sort()
        x, y = x[keep], y[keep]
    mem.store[task_id] = (x.copy(), y.copy())
    return mem


class ContinualClassifier:
    """Two-layer network whose output head grows with new subclasses."""

    def __init__(self, dim: int, hidden: int = 32, seed: int = 0):
        self._rng = np.random.default_rng(seed)
        self.w1 = Tensor(xavier_uniform(self._rng, dim, hidden),
                         requires_grad=True)
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = Tensor(np.zeros((hidden, 0)), requires_grad=True)
        self.b2 = Tensor(np.zeros(0), requires_grad=True)
        self.hidden = hidden

    @property
    def num_classes(self) -> int:
        return self.w2.data.shape[1]

    def grow(self, n_new: int):
        """Append output columns; existing logits keep their weights."""
        if n_new <= 0:
            return
        hidden, old = self.w2.data.shape
        fresh = xavier_uniform(self._rng, hidden, old + n_new,
                               shape=(hidden, n_new))
        self.w2 = Tensor(np.concatenate([self.w2.data, fresh], axis=1),
                         requires_grad=True)
        self.b2 = Tensor(np.concatenate([self.b2.data, np.zeros(n_new)]),
                         requires_grad=True)

    def logits(self, x: np.ndarray) -> Tensor:
        h = (Tensor(x) @ self.w1 + self.b1).relu()
        return h @ self.w2 + self.b2

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.logits(x).data.argmax(axis=1)

    def params(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def clone_params(self) -> dict:
        return {k: p.data.copy() for k, p in self.params().items()}


def train_task(model: ContinualClassifier, mem: ReplayMemory | None,
               task: Task, known_superclass: dict, epochs: int = 30,
               lr: float = 1e-3, batch_size: int = 32, seed: int = 0):
    """Cross-entropy training on the task data plus replayed exemplars."""
    for sub, sup in task.superclass.items():
        if sup not in (SUPER_EMBB, SUPER_URLLC):
            raise ValueError(f"subclass {sub} has unknown superclass {sup}")
    needed = max(task.subclasses) + 1
    model.grow(needed - model.num_classes)

    x, y = task.x, task.y
    if mem is not None:
        replay = mem.all_samples()
        if replay is not None:
            x = np.concatenate([x, replay[0]])
            y = np.concatenate([y, replay[1]])

    rng = np.random.default_rng(seed)
    state = AdamState(model.params(), lr=lr)
    n = len(x)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            state.zero_grad()
            loss = cross_entropy(model.logits(x[idx]), y[idx])
            if not np.isfinite(loss.item()):
                raise FloatingPointError("non-finite continual loss")
            loss.backward()
            adam_step(state)
        # rebind in case grow() replaced tensors (it does not mid-task,
        # but keeps the optimizer honest if callers interleave)
        state.params = model.params()
    return model


def evaluate(model: ContinualClassifier, task: Task) -> float:
    return float((model.predict(task.x) == task.y).mean())


def _mean_loss(params: dict, x: np.ndarray, y: np.ndarray) -> float:
    h = np.maximum(x @ params["w1"] + params["b1"], 0.0)
    logits = h @ params["w2"] + params["b2"]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return float((lse - z[np.arange(len(y)), y]).mean())


def compute_af_ap(theta0: dict, theta_tau: dict, task0: Task):
    """Forgetting and performance of the final model on the first task.

    Loss forms: AF = mean(loss under theta0 - loss under theta_tau) on the
    first task's data; AP = mean loss of theta_tau there.  Labels outside
    theta0's head contribute only to the theta_tau terms.
    """
    x, y = task0.x, task0.y
    loss0 = _mean_loss(theta0, x, y)
    loss_tau = _mean_loss(theta_tau, x, y)
    af = loss0 - loss_tau
    ap = loss_tau
    return af, ap


def cl_metrics(r: np.ndarray, baselines: np.ndarray | None = None) -> dict:
    """Standard metric suite over the accuracy matrix R[t', i].

    Forgetting-style quantities are zero for a single-task run.
    """
    r = np.asarray(r, dtype=float)
    t = r.shape[0]
    if np.isnan(r[np.tril_indices(t)]).any():
        raise ValueError("accuracy matrix not filled through the last task")
    tsa = r[-1, :].copy()
    if t == 1:
        tsf = np.zeros(1)
        bwt = 0.0
    else:
        tsf = np.array([r[:-1, i].max() - r[-1, i] if i < t - 1
                        else 0.0 for i in range(t)])
        bwt = float(np.mean([r[-1, i] - r[i, i] for i in range(t - 1)]))
    if baselines is None or t == 1:
        fwt = 0.0
    else:
        fwt = float(np.mean([r[i - 1, i] - baselines[i]
                             for i in range(1, t)]))
    return {
        "TSA": tsa,
        "TSF": tsf,
        "AA": float(tsa.mean()),
        "AF_acc": float(tsf.mean()),
        "BWT": bwt,
        "FWT": fwt,
        "CF": float(tsf.max()),
    }


def cl_objective(af: float, ap_acc: float) -> float:
    """Forgetting plus accuracy shortfall, to be minimized."""
    if not 0.0 <= ap_acc <= 1.0:
        raise ValueError("accuracy must lie in [0, 1]")
    return af + (1.0 - ap_acc)


def run_continual(stream: TaskStream, replay: bool = True,
                  capacity: int = 1000, epochs: int = 30, lr: float = 1e-3,
                  hidden: int = 32, seed: int = 0) -> dict:
    """Full sequential run; returns the matrix, metrics and snapshots."""
    model = ContinualClassifier(stream.dim, hidden=hidden, seed=seed)
    mem = ReplayMemory(capacity=capacity) if replay else None
    t = len(stream.tasks)
    r = np.full((t, t), np.nan)

    # forward-transfer baseline: a fresh model evaluated on each task
    baselines = np.empty(t)
    for i, task in enumerate(stream.tasks):
        fresh = ContinualClassifier(stream.dim, hidden=hidden, seed=seed)
        fresh.grow(max(task.subclasses) + 1)
        baselines[i] = evaluate(fresh, task)

    theta0 = None
    for ti, task in enumerate(stream.tasks):
        train_task(model, mem, task, stream.superclass, epochs=epochs,
                   lr=lr, seed=seed + ti)
        if mem is not None:
            update_memory(mem, ti, task.x, task.y, seed=seed)
        if ti == 0:
            theta0 = model.clone_params()
        # evaluate the full row so forward transfer is computable
        for i in range(t):
            r[ti, i] = evaluate(model, stream.tasks[i])
    af_loss, ap_loss = compute_af_ap(theta0, model.clone_params(),
                                     stream.tasks[0])
    metrics = cl_metrics(r, baselines)
    ap_acc = float(r[-1, 0])
    metrics.update({
        "AF_loss": af_loss,
        "AP_loss": ap_loss,
        "AP_acc": ap_acc,
        "objective": cl_objective(metrics["AF_acc"], ap_acc),
    })
    return {"matrix": r, "metrics": metrics, "model": model,
            "baselines": baselines}


# ---------------------------------------------------------------------------
# serialization


def stream_to_csv(stream: TaskStream) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["task", "subclass", "superclass"]
               + [f"f{i + 1}" for i in range(stream.dim)])
    sup = stream.superclass
    for ti, task in enumerate(stream.tasks):
        for xi, yi in zip(task.x, task.y):
            w.writerow([ti, int(yi), sup[int(yi)]]
                       + [repr(float(v)) for v in xi])
    return buf.getvalue()


def stream_from_csv(text: str) -> TaskStream:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:3] != ["task", "subclass", "superclass"]:
        raise ValueError("missing task-stream header")
    dim = len(rows[0]) - 3
    by_task: dict = {}
    for row in rows[1:]:
        ti, sub, sup = int(row[0]), int(row[1]), int(row[2])
        by_task.setdefault(ti, {"x": [], "y": [], "sup": {}})
        by_task[ti]["x"].append([float(v) for v in row[3:]])
        by_task[ti]["y"].append(sub)
        by_task[ti]["sup"][sub] = sup
    tasks = []
    for ti in sorted(by_task):
        d = by_task[ti]
        tasks.append(Task(x=np.array(d["x"]), y=np.array(d["y"]),
                          subclasses=sorted(d["sup"]), superclass=d["sup"]))
    return TaskStream(tasks=tasks, dim=dim)


def metrics_to_csv(matrix: np.ndarray, metrics: dict,
                   baselines: np.ndarray) -> str:
    """Per-task metric rows with the run-level values repeated."""
    buf = io.StringIO()
    buf.write("task,TSA,TSF,AA,AF,BWT,FWT,CF\n")
    for i in range(matrix.shape[0]):
        buf.write(f"{i},{metrics['TSA'][i]:.6f},{metrics['TSF'][i]:.6f},"
                  f"{metrics['AA']:.6f},{metrics['AF_acc']:.6f},"
                  f"{metrics['BWT']:.6f},{metrics['FWT']:.6f},"
                  f"{metrics['CF']:.6f}\n")
    return buf.getvalue()
