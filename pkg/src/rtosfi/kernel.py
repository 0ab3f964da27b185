"""A cooperative FreeRTOS-style kernel whose state lives in a KernelImage.

Every scheduler variable, list, TCB, queue and timer is stored in the image
and reached through 32-bit handles, so a corrupted handle behaves the way a
wild pointer does on a hosted port: if it lands on an object of the right kind
the kernel carries on with the wrong object, otherwise the run panics.

Task bodies are generators.  One ``next()`` executes one time slice; a body
ends its slice by calling a kernel service that switches context (yield,
block, delete) and then yielding.  After each slice the tick interrupt runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

from .image import ImageError, KernelImage
from .layout import (
    CMD_PEND_FUNCTION, CMD_START, CMD_STOP, FRAME_SIZE, I_CONTAINER, I_NEXT,
    I_OWNER, I_PREV, I_VALUE, INTERNAL_SCALARS, ITEM_SIZE, L_END, L_INDEX,
    L_NUM, LIST_SIZE, MAX_DELAY, MINI_ITEM_SIZE, NAME_LEN, NOTIFY_NOT_WAITING,
    NOTIFY_RECEIVED, NOTIFY_WAITING, Q_HEAD, Q_HOLDER, Q_ITEMSIZE, Q_LENGTH,
    Q_MSG_SIZE, Q_READ, Q_RX_LIST, Q_STORAGE, Q_TX_LIST, Q_WAITING, Q_WRITE,
    SCHEDULER_LISTS, SCHEDULER_POINTERS, SCHEDULER_VARIABLES, T_BASEPRIO,
    T_DELAYABORT, T_EVENT, T_MUTEXES, T_NAME, T_NOTIFSTATE, T_NOTIFVAL,
    T_PRIO, T_RUNTIME, T_STACK, T_STATE, T_TASKNUM, T_TCBNUM, T_TOP,
    TCB_SIZE, TIMER_SIZE, TM_ID, TM_ITEM, TM_PERIOD, TM_RELOAD, U32,
)

PANIC_REASONS = ("invalid_handle", "unmapped_access", "traversal_overrun",
                 "stack_overflow", "assertion")

EVENT_KINDS = ("task_switch_in", "task_switch_out", "task_create",
               "task_delete", "tick_overflow", "timer_fire", "shutdown")

CONTINUE = "continue"
SHUTDOWN = "shutdown"

END_SCHEDULER = 1  # pended-function id understood by the timer daemon


class KernelPanic(Exception):
    """Unrecoverable kernel fault; ends the current run only."""

    def __init__(self, reason: str, tick: int, detail: str = ""):
        super().__init__(f"{reason} at tick {tick}: {detail}")
        self.reason = reason
        self.tick = tick
        self.detail = detail


_EVENT_RE = re.compile(r"tick=(?P<tick>\d+) kind=(?P<kind>\S+) task=(?P<task>.*?) detail=(?P<detail>.*)")


@dataclass(frozen=True)
class KernelEvent:
    tick: int
    kind: str
    task: str
    detail: str = ""

    def format(self) -> str:
        return f"tick={self.tick} kind={self.kind} task={self.task} detail={self.detail}"

    @classmethod
    def parse(cls, line: str) -> "KernelEvent":
        m = _EVENT_RE.fullmatch(line.rstrip("\n"))
        if m is None:
            raise ValueError(f"not a kernel event line: {line!r}")
        return cls(int(m["tick"]), m["kind"], m["task"], m["detail"])


@dataclass(frozen=True)
class KernelConfig:
    tick_rate_hz: int = 1000
    max_priorities: int = 7
    image_capacity: int = 0x10000
    idle_stack_words: int = 64
    timer_stack_words: int = 96
    timer_queue_length: int = 8
    timer_task_priority: Optional[int] = None  # None: highest priority
    traversal_budget_factor: int = 10

    def __post_init__(self):
        if not 1 <= self.max_priorities <= 7:
            raise ValueError("max_priorities must be in 1..7")
        if self.tick_rate_hz <= 0:
            raise ValueError("tick_rate_hz must be positive")

    @property
    def timer_priority(self) -> int:
        if self.timer_task_priority is None:
            return self.max_priorities - 1
        return self.timer_task_priority


class _Task:
    """Host-side execution context of one task (what the CPU would hold)."""

    __slots__ = ("name", "tcb", "body", "sp", "magic", "system", "done")

    def __init__(self, name, tcb, sp, magic, system):
        self.name = name
        self.tcb = tcb
        self.body: Optional[Iterator] = None
        self.sp = sp
        self.magic = magic
        self.system = system
        self.done = False


TaskEntry = Callable[["Kernel"], Iterator]


class Kernel:
    """Scheduler state plus the services tasks call.

    Use :func:`kernel_init` to build one.  ``now`` is the simulated clock in
    ticks; it is host time, independent of the (injectable) ``xTickCount``.
    """

    def __init__(self, config: KernelConfig = KernelConfig()):
        self.config = config
        self.image = img = KernelImage(config.image_capacity)
        self._r = img.read32
        self._w = img.write32
        self.addr: dict[str, int] = {}
        self.tasks: dict[int, _Task] = {}
        self._by_magic: dict[int, _Task] = {}
        self.current: Optional[_Task] = None
        self.events: list[tuple] = []
        self.now = 0
        self.tick_events = 0
        self.running = False
        self.finished = False
        self.trigger = None  # (tick, event_index, callback)
        self.used_mutex: set[int] = set()
        self.used_notify: set[int] = set()
        self.outputs: dict = {}
        self.timers: dict[int, str] = {}
        self.system_tcbs: set[int] = set()
        self._shutdown_requested = False
        self._budget = 0
        self._task_seq = 0

        maxp = config.max_priorities
        for name in SCHEDULER_VARIABLES:
            kind = "handle" if name in ("xTimerQueue", "xTimerTaskHandle") else "scalar"
            self.addr[name] = img.allocate(name, 4, kind).base
        for name in SCHEDULER_POINTERS:
            self.addr[name] = img.allocate(name, 4, "handle").base
        for name in INTERNAL_SCALARS:
            self.addr[name] = img.allocate(name, 4, "scalar").base
        arr = img.allocate("pxReadyTasksLists", LIST_SIZE * maxp, "array")
        self.ready_base = arr.base
        for p in range(maxp):
            self._new_list(f"pxReadyTasksLists[{p}]", arr.base + p * LIST_SIZE, parent=arr.name)
        for name in SCHEDULER_LISTS:
            self._new_list(name)

        a = self.addr
        self.A_CUR = a["pxCurrentTCB"]
        self.A_TOP = a["uxTopReadyPriority"]
        self.A_TICK = a["xTickCount"]
        self.A_NEXT = a["xNextTaskUnblockTime"]
        self.A_SUSP = a["uxSchedulerSuspended"]
        self.A_YIELD = a["xYieldPending"]

        w = self._w
        w(a["pxDelayedTaskList"], a["xDelayedTaskList1"])
        w(a["pxOverflowDelayedTaskList"], a["xDelayedTaskList2"])
        w(a["pxCurrentTimerList"], a["xActiveTimerList1"])
        w(a["pxOverflowTimerList"], a["xActiveTimerList2"])
        w(self.A_NEXT, MAX_DELAY)

        self.timer_queue = self._new_queue("TmrQ", config.timer_queue_length, Q_MSG_SIZE)
        w(a["xTimerQueue"], self.timer_queue)
        idle = self._create("IDLE", 0, _idle_body, config.idle_stack_words, system=True)
        w(a["xIdleTaskHandle"], idle)
        tmr = self._create("Tmr Svc", config.timer_priority, _timer_body,
                           config.timer_stack_words, system=True)
        w(a["xTimerTaskHandle"], tmr)

    # ------------------------------------------------------------------
    # object construction

    def _new_list(self, name, base=None, parent=None):
        img = self.image
        if base is None:
            rec = img.allocate(name, LIST_SIZE, "list", parent)
        else:
            rec = img.register(name, base, LIST_SIZE, "list", parent)
        img.register(f"{name}.xListEnd", rec.base + L_END, MINI_ITEM_SIZE, "list_item", name)
        self.addr[name] = rec.base
        self._budget += 1
        self.list_init(rec.base)
        return rec.base

    def _new_queue(self, name, length, item_size):
        img = self.image
        qname = f"Queue:{name}"
        rec = img.allocate(qname, Q_STORAGE + length * item_size, "queue")
        q = rec.base
        self._new_list(f"{qname}.xTasksWaitingToSend", q + Q_TX_LIST, qname)
        self._new_list(f"{qname}.xTasksWaitingToReceive", q + Q_RX_LIST, qname)
        w = self._w
        w(q + Q_LENGTH, length)
        w(q + Q_ITEMSIZE, item_size)
        w(q + Q_HEAD, q + Q_STORAGE)
        return q

    def create_mutex(self, name: str = "mutex") -> int:
        q = self._new_queue(name, 1, 0)
        self._w(q + Q_WAITING, 1)
        return q

    def create_timer(self, name: str, period: int, auto_reload: bool = False) -> int:
        img = self.image
        rec = img.allocate(f"Timer:{name}", TIMER_SIZE, "timer")
        t = rec.base
        img.register(f"Timer:{name}.xTimerListItem", t + TM_ITEM, ITEM_SIZE, "list_item", rec.name)
        self._budget += 1
        w = self._w
        w(t + TM_ITEM + I_OWNER, t)
        w(t + TM_PERIOD, period)
        w(t + TM_RELOAD, int(auto_reload))
        w(t + TM_ID, len(self.timers))
        self.timers[t] = name
        return t

    def task_create(self, name: str, priority: int, entry: TaskEntry,
                    stack_words: int = 128) -> int:
        """Create a task and put it at the end of its ready list."""
        if not 0 <= priority < self.config.max_priorities:
            raise ValueError(f"priority {priority} outside 0..{self.config.max_priorities - 1}")
        tcb = self._create(name, priority, entry, stack_words, system=False)
        if self.running:
            self._emit("task_create", name)
        return tcb

    def _create(self, name, priority, entry, stack_words, system):
        img = self.image
        r, w = self._r, self._w
        seq = self._task_seq
        self._task_seq += 1
        stack = img.allocate(f"Stack:{name}", stack_words * 4, "stack")
        rec = img.allocate(f"TCB:{name}", TCB_SIZE, "tcb")
        tcb = rec.base
        img.register(f"TCB:{name}.xStateListItem", tcb + T_STATE, ITEM_SIZE, "list_item", rec.name)
        img.register(f"TCB:{name}.xEventListItem", tcb + T_EVENT, ITEM_SIZE, "list_item", rec.name)
        img.register(f"TCB:{name}.pcTaskName", tcb + T_NAME, NAME_LEN, "name_string", rec.name)
        self._budget += 2

        img.write_bytes(tcb + T_NAME, name.encode()[:NAME_LEN - 1].ljust(NAME_LEN, b"\0"))
        w(tcb + T_STACK, stack.base)
        w(tcb + T_PRIO, priority)
        w(tcb + T_BASEPRIO, priority)
        w(tcb + T_STATE + I_OWNER, tcb)
        w(tcb + T_EVENT + I_OWNER, tcb)
        w(tcb + T_EVENT + I_VALUE, self.config.max_priorities - priority)
        w(tcb + T_TASKNUM, seq)

        # initial context frame, as pxPortInitialiseStack would build it
        sp = stack.base + stack.size - FRAME_SIZE
        magic = 0x7A5C0000 | ((seq * 0x9E37) & 0xFFFF)
        w(sp, magic)
        w(tcb + T_TOP, sp)

        a = self.addr
        w(a["uxCurrentNumberOfTasks"], r(a["uxCurrentNumberOfTasks"]) + 1)
        n = (r(a["uxTaskNumber"]) + 1) & U32
        w(a["uxTaskNumber"], n)
        w(tcb + T_TCBNUM, n)

        task = _Task(name, tcb, sp, magic, system)
        task.body = entry(self)
        self.tasks[tcb] = task
        self._by_magic[magic] = task
        if system:
            self.system_tcbs.add(tcb)
        if not self.running:
            cur = r(self.A_CUR)
            if cur == 0 or r(cur + T_PRIO) <= priority:
                w(self.A_CUR, tcb)
        self._add_ready(tcb)
        return tcb

    # ------------------------------------------------------------------
    # helpers

    @property
    def budget(self) -> int:
        """List traversal step budget: 10 x allocated list items by default."""
        return self.config.traversal_budget_factor * self._budget

    def _panic(self, reason, detail=""):
        raise KernelPanic(reason, self.now, detail)

    def _check(self, raw, kind):
        if not self.image.is_valid(raw, kind):
            raise KernelPanic("invalid_handle", self.now, f"{raw:#x} is not a {kind}")
        return raw

    def _emit(self, kind, task, detail=""):
        self.events.append((self.now, kind, task, detail))
        self.tick_events += 1
        trig = self.trigger
        if trig is not None and trig[0] == self.now and trig[1] == self.tick_events:
            self.trigger = None
            trig[2](self)

    def read(self, name: str) -> int:
        """Read a named 32-bit kernel global."""
        return self._r(self.addr[name])

    def write(self, name: str, value: int) -> None:
        self._w(self.addr[name], value)

    def name_of(self, tcb: int) -> str:
        task = self.tasks.get(tcb)
        return task.name if task else f"?{tcb:#x}"

    def ready_list(self, priority: int) -> int:
        return self.ready_base + priority * LIST_SIZE

    def kernel_events(self) -> list[KernelEvent]:
        return [KernelEvent(*e) for e in self.events]

    # ------------------------------------------------------------------
    # lists

    def list_init(self, lst: int) -> None:
        w = self._w
        end = lst + L_END
        w(lst + L_NUM, 0)
        w(lst + L_INDEX, end)
        w(end + I_VALUE, MAX_DELAY)
        w(end + I_NEXT, end)
        w(end + I_PREV, end)

    def list_insert_end(self, lst: int, item: int) -> None:
        r, w, chk = self._r, self._w, self._check
        chk(lst, "list")
        chk(item, "list_item")
        index = chk(r(lst + L_INDEX), "list_item")
        prev = chk(r(index + I_PREV), "list_item")
        w(item + I_NEXT, index)
        w(item + I_PREV, prev)
        w(prev + I_NEXT, item)
        w(index + I_PREV, item)
        w(item + I_CONTAINER, lst)
        w(lst + L_NUM, r(lst + L_NUM) + 1)

    def list_insert_ordered(self, lst: int, item: int) -> None:
        """Insert keeping non-decreasing item values; equal keys go last."""
        r, w, chk = self._r, self._w, self._check
        chk(lst, "list")
        chk(item, "list_item")
        value = r(item + I_VALUE)
        end = lst + L_END
        if value == MAX_DELAY:
            it = chk(r(end + I_PREV), "list_item")
        else:
            it = end
            budget = self.budget
            steps = 0
            while True:
                nxt = chk(r(it + I_NEXT), "list_item")
                if r(nxt + I_VALUE) > value:
                    break
                it = nxt
                steps += 1
                if steps > budget:
                    self._panic("traversal_overrun", f"ordered insert into {lst:#x}")
        nxt = chk(r(it + I_NEXT), "list_item")
        w(item + I_NEXT, nxt)
        w(nxt + I_PREV, item)
        w(item + I_PREV, it)
        w(it + I_NEXT, item)
        w(item + I_CONTAINER, lst)
        w(lst + L_NUM, r(lst + L_NUM) + 1)

    def list_remove(self, item: int) -> int:
        """Unlink ``item`` from its container; returns the remaining count."""
        r, w, chk = self._r, self._w, self._check
        chk(item, "list_item")
        lst = chk(r(item + I_CONTAINER), "list")
        nxt = chk(r(item + I_NEXT), "list_item")
        prev = chk(r(item + I_PREV), "list_item")
        w(nxt + I_PREV, prev)
        w(prev + I_NEXT, nxt)
        if r(lst + L_INDEX) == item:
            w(lst + L_INDEX, prev)
        w(item + I_CONTAINER, 0)
        n = (r(lst + L_NUM) - 1) & U32
        w(lst + L_NUM, n)
        return n

    def list_items(self, lst: int) -> Iterator[int]:
        """Walk member items from the head, bounded by the step budget."""
        r, chk = self._r, self._check
        chk(lst, "list")
        end = lst + L_END
        it = chk(r(end + I_NEXT), "list_item")
        budget = self.budget
        steps = 0
        while it != end:
            yield it
            it = chk(r(it + I_NEXT), "list_item")
            steps += 1
            if steps > budget:
                self._panic("traversal_overrun", f"walking list {lst:#x}")

    def list_owners(self, lst: int) -> Iterator[int]:
        for item in self.list_items(lst):
            yield self._r(item + I_OWNER)

    def list_values(self, lst: int) -> list[int]:
        return [self._r(it + I_VALUE) for it in self.list_items(lst)]

    def _head_owner(self, lst, kind="tcb"):
        r, chk = self._r, self._check
        chk(lst, "list")
        end = lst + L_END
        head = chk(r(end + I_NEXT), "list_item")
        if head == end:
            self._panic("invalid_handle", f"owner of end marker of list {lst:#x}")
        return chk(r(head + I_OWNER), kind)

    def _next_owner(self, lst):
        r, w, chk = self._r, self._w, self._check
        end = lst + L_END
        index = chk(r(lst + L_INDEX), "list_item")
        nxt = chk(r(index + I_NEXT), "list_item")
        if nxt == end:
            nxt = chk(r(nxt + I_NEXT), "list_item")
        w(lst + L_INDEX, nxt)
        if nxt == end:
            self._panic("invalid_handle", f"owner of end marker of list {lst:#x}")
        return chk(r(nxt + I_OWNER), "tcb")

    # ------------------------------------------------------------------
    # scheduling

    def _add_ready(self, tcb):
        r = self._r
        prio = r(tcb + T_PRIO)
        if prio >= self.config.max_priorities:
            self._panic("unmapped_access", f"ready list index {prio}")
        if prio > r(self.A_TOP):
            self._w(self.A_TOP, prio)
        self.list_insert_end(self.ready_base + prio * LIST_SIZE, tcb + T_STATE)

    def _select_highest(self):
        r = self._r
        top = r(self.A_TOP)
        maxp = self.config.max_priorities
        while True:
            if top >= maxp:
                self._panic("unmapped_access", f"ready list index {top}")
            lst = self.ready_base + top * LIST_SIZE
            if r(lst + L_NUM) != 0:
                break
            if top == 0:
                self._panic("assertion", "no ready task")
            top -= 1
        tcb = self._next_owner(lst)
        self._w(self.A_CUR, tcb)
        self._w(self.A_TOP, top)
        return tcb

    def schedule_next(self) -> int:
        """Pick the next task: highest non-empty priority, round-robin within."""
        return self._select_highest()

    def current_tcb(self) -> int:
        return self._check(self._r(self.A_CUR), "tcb")

    def _switch_context(self):
        r, w = self._r, self._w
        running = self.current
        cur = self._check(r(self.A_CUR), "tcb")
        # save: push the frame on the running stack, store SP in the TCB
        sp = running.sp
        w(sp, running.magic)
        w(cur + T_TOP, sp)
        if r(cur + T_TOP) <= r(cur + T_STACK):
            self._panic("stack_overflow", f"task {self.name_of(cur)}")
        w(cur + T_RUNTIME, r(cur + T_RUNTIME) + 1)
        self._emit("task_switch_out", running.name)
        w(self.A_YIELD, 0)
        nxt = self._select_highest()
        task = self.tasks[nxt]
        self._emit("task_switch_in", task.name)
        self._restore(nxt)

    def _restore(self, tcb):
        sp = self._r(tcb + T_TOP)
        if sp & 3:
            self._panic("unmapped_access", f"misaligned stack pointer {sp:#x}")
        try:
            word = self.image.read32(sp)
        except ImageError:
            self._panic("unmapped_access", f"stack pointer {sp:#x} outside image")
        task = self._by_magic.get(word)
        if task is None:
            self._panic("stack_overflow", f"corrupt context frame at {sp:#x}")
        if task.done:
            self._panic("assertion", f"resumed finished task {task.name}")
        task.sp = sp
        self.current = task

    def task_yield(self) -> None:
        self._switch_context()

    def task_delete_self(self) -> None:
        r, w = self._r, self._w
        a = self.addr
        tcb = self._check(r(self.A_CUR), "tcb")
        if self.list_remove(tcb + T_STATE) == 0:
            self._reset_ready_priority(r(tcb + T_PRIO))
        if r(tcb + T_EVENT + I_CONTAINER):
            self.list_remove(tcb + T_EVENT)
        w(a["uxTaskNumber"], r(a["uxTaskNumber"]) + 1)
        self.list_insert_end(a["xTasksWaitingTermination"], tcb + T_STATE)
        w(a["uxDeletedTasksWaitingCleanup"], r(a["uxDeletedTasksWaitingCleanup"]) + 1)
        self.current.done = True
        self._emit("task_delete", self.current.name)
        if r(a["xSchedulerRunning"]) == 0:
            self._panic("assertion", "task function returned")
        self._switch_context()

    def _reset_ready_priority(self, prio):
        # taskRESET_READY_PRIORITY: look at the list the task claims to have
        # left; an index past the array is an access outside the object.
        if prio >= self.config.max_priorities:
            self._panic("unmapped_access", f"ready list index {prio}")
        lst = self.ready_base + prio * LIST_SIZE
        if self._r(lst + L_NUM) == 0 and self._r(self.A_TOP) == prio and prio:
            self._w(self.A_TOP, prio - 1)

    def _delete_other(self, tcb):
        """vTaskDelete on a task that is not running."""
        r, w = self._r, self._w
        a = self.addr
        self._check(tcb, "tcb")
        self.list_remove(tcb + T_STATE)
        if r(tcb + T_EVENT + I_CONTAINER):
            self.list_remove(tcb + T_EVENT)
        w(a["uxTaskNumber"], r(a["uxTaskNumber"]) + 1)
        w(a["uxCurrentNumberOfTasks"], r(a["uxCurrentNumberOfTasks"]) - 1)
        task = self.tasks.get(tcb)
        if task is not None:
            task.done = True
            self._emit("task_delete", task.name)
        self._reset_next_unblock()

    def _reset_next_unblock(self):
        r = self._r
        lst = self._check(r(self.addr["pxDelayedTaskList"]), "list")
        if r(lst + L_NUM) == 0:
            self._w(self.A_NEXT, MAX_DELAY)
        else:
            head = self._check(r(lst + L_END + I_NEXT), "list_item")
            self._w(self.A_NEXT, r(head + I_VALUE))

    def _suspend_all(self):
        self._w(self.A_SUSP, self._r(self.A_SUSP) + 1)

    def _resume_all(self):
        r, w = self._r, self._w
        a = self.addr
        n = (r(self.A_SUSP) - 1) & U32
        w(self.A_SUSP, n)
        if n:
            return
        pending = a["xPendingReadyList"]
        moved = False
        while r(self._check(pending, "list") + L_NUM):
            tcb = self._head_owner(pending)
            self.list_remove(tcb + T_EVENT)
            self.list_remove(tcb + T_STATE)
            self._add_ready(tcb)
            moved = True
        if moved:
            self._reset_next_unblock()
        pended = r(a["xPendedTicks"])
        if pended:
            self._advance_ticks(pended)
            w(a["xPendedTicks"], 0)

    def start_scheduler(self) -> None:
        w = self._w
        w(self.A_NEXT, MAX_DELAY)
        w(self.addr["xSchedulerRunning"], 1)
        w(self.A_TICK, 0)
        self.running = True
        tcb = self._select_highest()
        task = self.tasks[tcb]
        self._emit("task_switch_in", task.name)
        self._restore(tcb)

    # ------------------------------------------------------------------
    # time

    def tick_advance(self) -> None:
        """One tick interrupt (xTaskIncrementTick)."""
        r, w = self._r, self._w
        if r(self.A_SUSP):
            a = self.addr["xPendedTicks"]
            w(a, r(a) + 1)
            return
        t = (r(self.A_TICK) + 1) & U32
        w(self.A_TICK, t)
        if t == 0:
            self._switch_delayed_lists()
        if t >= r(self.A_NEXT):
            self._unblock_due(t)

    def _advance_ticks(self, n):
        """Process ``n`` ticks at once, stopping only where something happens."""
        r, w = self._r, self._w
        while n:
            t = r(self.A_TICK)
            nxt = r(self.A_NEXT)
            to_wrap = (U32 - t) + 1
            to_unblock = nxt - t if nxt > t else 1
            step = min(n, to_wrap, to_unblock)
            t = (t + step) & U32
            w(self.A_TICK, t)
            n -= step
            if t == 0:
                self._switch_delayed_lists()
            if t >= r(self.A_NEXT):
                self._unblock_due(t)

    def _switch_delayed_lists(self):
        r, w = self._r, self._w
        a = self.addr
        cur = self._check(r(a["pxDelayedTaskList"]), "list")
        if r(cur + L_NUM) != 0:
            self._panic("assertion", "delayed list not empty at tick overflow")
        ovf = self._check(r(a["pxOverflowDelayedTaskList"]), "list")
        w(a["pxDelayedTaskList"], ovf)
        w(a["pxOverflowDelayedTaskList"], cur)
        w(a["xNumOfOverflows"], r(a["xNumOfOverflows"]) + 1)
        self._emit("tick_overflow", self.current.name if self.current else "",
                   f"overflows={r(a['xNumOfOverflows'])}")
        self._reset_next_unblock()

    def _unblock_due(self, t):
        r, w = self._r, self._w
        a_delayed = self.addr["pxDelayedTaskList"]
        budget = self.budget
        steps = 0
        while True:
            lst = self._check(r(a_delayed), "list")
            if r(lst + L_NUM) == 0:
                w(self.A_NEXT, MAX_DELAY)
                return
            head = self._check(r(lst + L_END + I_NEXT), "list_item")
            if head == lst + L_END:
                self._panic("invalid_handle", "owner of end marker of delayed list")
            tcb = self._check(r(head + I_OWNER), "tcb")
            wake = r(head + I_VALUE)
            if t < wake:
                w(self.A_NEXT, wake)
                return
            self.list_remove(head)
            if r(tcb + T_EVENT + I_CONTAINER):
                self.list_remove(tcb + T_EVENT)
            self._add_ready(tcb)
            steps += 1
            if steps > budget:
                self._panic("traversal_overrun", "unblocking delayed tasks")

    def _add_current_to_delayed(self, ticks, indefinite):
        r, w = self._r, self._w
        a = self.addr
        tcb = self._check(r(self.A_CUR), "tcb")
        self.image.write8(tcb + T_DELAYABORT, 0)
        self.list_remove(tcb + T_STATE)
        if ticks == MAX_DELAY and indefinite:
            self.list_insert_end(a["xSuspendedTaskList"], tcb + T_STATE)
            return
        now = r(self.A_TICK)
        wake = (now + ticks) & U32
        w(tcb + T_STATE + I_VALUE, wake)
        if wake < now:
            self.list_insert_ordered(self._check(r(a["pxOverflowDelayedTaskList"]), "list"),
                                     tcb + T_STATE)
        else:
            self.list_insert_ordered(self._check(r(a["pxDelayedTaskList"]), "list"),
                                     tcb + T_STATE)
            if wake < r(self.A_NEXT):
                w(self.A_NEXT, wake)

    def task_delay(self, ticks: int) -> None:
        """Block the running task for ``ticks`` ticks, then switch."""
        if ticks:
            self._suspend_all()
            self._add_current_to_delayed(ticks, indefinite=False)
            self._resume_all()
        self._switch_context()

    # ------------------------------------------------------------------
    # queues, mutex, notifications

    def queue_send(self, q: int, cmd: int, arg: int) -> bool:
        r, w, chk = self._r, self._w, self._check
        chk(q, "queue")
        n = r(q + Q_WAITING)
        length = r(q + Q_LENGTH)
        if n >= length:
            return False
        widx = r(q + Q_WRITE)
        if widx >= length:
            self._panic("assertion", f"queue write index {widx}")
        slot = q + Q_STORAGE + widx * Q_MSG_SIZE
        w(slot, cmd)
        w(slot + 4, arg)
        w(q + Q_WRITE, (widx + 1) % length)
        w(q + Q_WAITING, n + 1)
        rx = q + Q_RX_LIST
        if r(rx + L_NUM):
            self._wake_from_event_list(rx)
        return True

    def queue_receive(self, q: int):
        r, w, chk = self._r, self._w, self._check
        chk(q, "queue")
        n = r(q + Q_WAITING)
        if n == 0:
            return None
        length = r(q + Q_LENGTH)
        ridx = r(q + Q_READ)
        if ridx >= length:
            self._panic("assertion", f"queue read index {ridx}")
        slot = q + Q_STORAGE + ridx * Q_MSG_SIZE
        msg = (r(slot), r(slot + 4))
        w(q + Q_READ, (ridx + 1) % length)
        w(q + Q_WAITING, n - 1)
        return msg

    def _wake_from_event_list(self, lst):
        r = self._r
        tcb = self._head_owner(lst)
        self.list_remove(tcb + T_EVENT)
        if r(self.A_SUSP):
            self.list_insert_end(self.addr["xPendingReadyList"], tcb + T_EVENT)
            return
        self.list_remove(tcb + T_STATE)
        self._add_ready(tcb)
        cur = self._check(r(self.A_CUR), "tcb")
        if r(tcb + T_PRIO) > r(cur + T_PRIO):
            self._w(self.A_YIELD, 1)

    def mutex_take(self, m: int) -> bool:
        r, w = self._r, self._w
        self._check(m, "queue")
        if r(m + Q_WAITING) == 0:
            return False
        cur = self._check(r(self.A_CUR), "tcb")
        w(m + Q_WAITING, 0)
        w(m + Q_HOLDER, cur)
        w(cur + T_MUTEXES, r(cur + T_MUTEXES) + 1)
        self.used_mutex.add(cur)
        return True

    def mutex_give(self, m: int) -> bool:
        r, w = self._r, self._w
        self._check(m, "queue")
        cur = self._check(r(self.A_CUR), "tcb")
        if r(m + Q_HOLDER) != cur:
            return False
        held = (r(cur + T_MUTEXES) - 1) & U32
        w(cur + T_MUTEXES, held)
        base = r(cur + T_BASEPRIO)
        if r(cur + T_PRIO) != base and held == 0:
            # priority disinheritance
            self.list_remove(cur + T_STATE)
            w(cur + T_PRIO, base)
            w(cur + T_EVENT + I_VALUE, (self.config.max_priorities - base) & U32)
            self._add_ready(cur)
        w(m + Q_HOLDER, 0)
        w(m + Q_WAITING, 1)
        return True

    def notify_give(self, tcb: int) -> None:
        img = self.image
        self._check(tcb, "tcb")
        prev = img.read8(tcb + T_NOTIFSTATE)
        img.write8(tcb + T_NOTIFSTATE, NOTIFY_RECEIVED)
        self._w(tcb + T_NOTIFVAL, self._r(tcb + T_NOTIFVAL) + 1)
        self.used_notify.add(tcb)
        if prev == NOTIFY_WAITING:
            self.list_remove(tcb + T_STATE)
            self._add_ready(tcb)

    def notify_take(self, clear: bool = True) -> int:
        """Non-blocking ulTaskNotifyTake for the running task."""
        img = self.image
        cur = self._check(self._r(self.A_CUR), "tcb")
        value = self._r(cur + T_NOTIFVAL)
        if value:
            self._w(cur + T_NOTIFVAL, 0 if clear else value - 1)
        img.write8(cur + T_NOTIFSTATE, NOTIFY_NOT_WAITING)
        self.used_notify.add(cur)
        return value

    # ------------------------------------------------------------------
    # software timers

    def timer_start(self, timer: int) -> bool:
        return self.queue_send(self._check(self._r(self.addr["xTimerQueue"]), "queue"),
                               CMD_START, timer)

    def timer_stop(self, timer: int) -> bool:
        return self.queue_send(self._check(self._r(self.addr["xTimerQueue"]), "queue"),
                               CMD_STOP, timer)

    def pend_function_call(self, fn_id: int) -> bool:
        return self.queue_send(self._check(self._r(self.addr["xTimerQueue"]), "queue"),
                               CMD_PEND_FUNCTION, fn_id)

    def _sample_time_now(self):
        r = self._r
        a_last = self.addr["xLastTime"]
        now = r(self.A_TICK)
        switched = now < r(a_last)
        if switched:
            self._switch_timer_lists()
        self._w(a_last, now)
        return now, switched

    def _switch_timer_lists(self):
        r, w = self._r, self._w
        a = self.addr
        cur = self._check(r(a["pxCurrentTimerList"]), "list")
        budget = self.budget
        steps = 0
        while r(cur + L_NUM):
            timer = self._head_owner(cur, "timer")
            self.list_remove(timer + TM_ITEM)
            self._fire(timer)
            if r(timer + TM_RELOAD):
                expiry = (r(timer + TM_ITEM + I_VALUE) + r(timer + TM_PERIOD)) & U32
                w(timer + TM_ITEM + I_VALUE, expiry)
                self.list_insert_ordered(cur, timer + TM_ITEM)
            steps += 1
            if steps > budget:
                self._panic("traversal_overrun", "switching timer lists")
        ovf = self._check(r(a["pxOverflowTimerList"]), "list")
        w(a["pxCurrentTimerList"], ovf)
        w(a["pxOverflowTimerList"], cur)

    def _next_expire_time(self):
        r = self._r
        lst = self._check(r(self.addr["pxCurrentTimerList"]), "list")
        if r(lst + L_NUM) == 0:
            return 0, True
        head = self._check(r(lst + L_END + I_NEXT), "list_item")
        return r(head + I_VALUE), False

    def _fire(self, timer):
        self._emit("timer_fire", self.current.name if self.current else "",
                   self.timers.get(timer, f"{timer:#x}"))

    def _insert_timer(self, timer, expiry, now):
        r, w = self._r, self._w
        w(timer + TM_ITEM + I_VALUE, expiry & U32)
        w(timer + TM_ITEM + I_OWNER, timer)
        key = "pxOverflowTimerList" if expiry > U32 else "pxCurrentTimerList"
        lst = self._check(r(self.addr[key]), "list")
        self.list_insert_ordered(lst, timer + TM_ITEM)

    def timer_daemon_step(self) -> None:
        """Fire due timers, replay pended ticks, then drain the command queue."""
        r = self._r
        self._suspend_all()
        now, switched = self._sample_time_now()
        if not switched:
            budget = self.budget
            steps = 0
            while True:
                expiry, empty = self._next_expire_time()
                if empty or expiry > now:
                    break
                lst = self._check(r(self.addr["pxCurrentTimerList"]), "list")
                timer = self._head_owner(lst, "timer")
                self.list_remove(timer + TM_ITEM)
                self._fire(timer)
                if r(timer + TM_RELOAD):
                    self._insert_timer(timer, expiry + r(timer + TM_PERIOD), now)
                steps += 1
                if steps > budget:
                    self._panic("traversal_overrun", "processing expired timers")
        self._resume_all()

        q = self._check(r(self.addr["xTimerQueue"]), "queue")
        while True:
            msg = self.queue_receive(q)
            if msg is None:
                break
            cmd, arg = msg
            if cmd == CMD_PEND_FUNCTION:
                if arg == END_SCHEDULER:
                    self._end_scheduler()
                    return
            elif cmd == CMD_START:
                timer = self._check(arg, "timer")
                if r(timer + TM_ITEM + I_CONTAINER):
                    self.list_remove(timer + TM_ITEM)
                now = r(self.A_TICK)
                self._insert_timer(timer, now + r(timer + TM_PERIOD), now)
            elif cmd == CMD_STOP:
                timer = self._check(arg, "timer")
                if r(timer + TM_ITEM + I_CONTAINER):
                    self.list_remove(timer + TM_ITEM)
            else:
                self._panic("assertion", f"unknown timer command {cmd}")

    def _timer_block(self):
        r = self._r
        q = self._check(r(self.addr["xTimerQueue"]), "queue")
        if r(q + Q_WAITING) == 0:
            expiry, empty = self._next_expire_time()
            cur = self._check(r(self.A_CUR), "tcb")
            self._suspend_all()
            self.list_insert_end(q + Q_RX_LIST, cur + T_EVENT)
            if empty:
                self._add_current_to_delayed(MAX_DELAY, indefinite=True)
            else:
                now = r(self.A_TICK)
                self._add_current_to_delayed(max(1, (expiry - now) & U32), indefinite=False)
            self._resume_all()
        self._switch_context()

    def _end_scheduler(self):
        r, w = self._r, self._w
        a = self.addr
        self._delete_other(self._check(r(a["xIdleTaskHandle"]), "tcb"))
        self._delete_other(self._check(r(a["xTimerTaskHandle"]), "tcb"))
        w(a["xSchedulerRunning"], 0)
        self.running = False
        self.finished = True
        self._emit("shutdown", self.current.name)

    # ------------------------------------------------------------------
    # idle

    def idle_step(self) -> str:
        """Reclaim one deleted TCB, or report whether only system tasks remain."""
        r, w = self._r, self._w
        a = self.addr
        if r(a["uxDeletedTasksWaitingCleanup"]) > 0:
            term = a["xTasksWaitingTermination"]
            tcb = self._head_owner(term)
            self.list_remove(tcb + T_STATE)
            w(a["uxCurrentNumberOfTasks"], r(a["uxCurrentNumberOfTasks"]) - 1)
            w(a["uxDeletedTasksWaitingCleanup"], r(a["uxDeletedTasksWaitingCleanup"]) - 1)
            return CONTINUE
        system = self.system_tcbs
        for lst in self._state_lists():
            for owner in self.list_owners(lst):
                if owner not in system:
                    return CONTINUE
        return SHUTDOWN

    def _state_lists(self):
        a = self.addr
        for p in range(self.config.max_priorities):
            yield self.ready_base + p * LIST_SIZE
        yield a["xDelayedTaskList1"]
        yield a["xDelayedTaskList2"]
        yield a["xPendingReadyList"]
        yield a["xSuspendedTaskList"]

    # ------------------------------------------------------------------
    # main loop

    def run(self, max_ticks: int) -> bool:
        """Advance until shutdown or until ``now`` exceeds ``max_ticks``.

        Returns True on graceful shutdown, False on timeout.  KernelPanic
        propagates; image access errors are converted to panics.
        """
        try:
            if not self.running and not self.finished:
                self._begin_tick()
                self.start_scheduler()
            while self.running:
                try:
                    next(self.current.body)
                except StopIteration:
                    self._panic("assertion", f"task {self.current.name} returned")
                if not self.running:
                    self.now += 1
                    break
                self.tick_advance()
                self.now += 1
                # a trigger whose event index never occurred fires at tick end
                trig = self.trigger
                if trig is not None and trig[0] < self.now:
                    self.trigger = None
                    trig[2](self)
                if self.now > max_ticks:
                    return False
                self._begin_tick()
        except ImageError as exc:
            raise KernelPanic("unmapped_access", self.now, str(exc)) from None
        return self.finished

    def _begin_tick(self):
        self.tick_events = 0
        trig = self.trigger
        if trig is not None and trig[0] == self.now and trig[1] == 0:
            self.trigger = None
            trig[2](self)


def _idle_body(k: Kernel):
    while True:
        if k.idle_step() == SHUTDOWN and not k._shutdown_requested:
            if k.pend_function_call(END_SCHEDULER):
                k._shutdown_requested = True
        k.task_yield()
        yield


def _timer_body(k: Kernel):
    while True:
        k.timer_daemon_step()
        if not k.running:
            yield
            continue
        k._timer_block()
        yield


def kernel_init(config: KernelConfig = KernelConfig()) -> Kernel:
    """Allocate every scheduler object and create the idle and timer tasks."""
    return Kernel(config)
