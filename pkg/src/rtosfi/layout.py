"""Field offsets of kernel structures inside the image (32-bit reference)."""

MAX_DELAY = 0xFFFFFFFF
U32 = 0xFFFFFFFF

# ListItem_t
I_VALUE = 0
I_NEXT = 4
I_PREV = 8
I_OWNER = 12
I_CONTAINER = 16
ITEM_SIZE = 20

# MiniListItem_t used as the list end marker: value, next, prev
MINI_ITEM_SIZE = 12

# List_t
L_NUM = 0
L_INDEX = 4
L_END = 8
LIST_SIZE = L_END + MINI_ITEM_SIZE

# TCB_t
T_TOP = 0
T_STATE = 4
T_EVENT = 24
T_PRIO = 44
T_STACK = 48
T_NAME = 52
T_TCBNUM = 68
T_TASKNUM = 72
T_BASEPRIO = 76
T_MUTEXES = 80
T_TAG = 84
T_RUNTIME = 88
T_NOTIFVAL = 92
T_NOTIFSTATE = 96
T_DELAYABORT = 97
TCB_SIZE = 100
NAME_LEN = 16

# (name, offset, size) of every injectable TCB field, in TCB_t order of the
# FreeRTOS documentation tables.
TCB_FIELDS = (
    ("pcTaskName", T_NAME, NAME_LEN),
    ("pxStack", T_STACK, 4),
    ("pxTaskTag", T_TAG, 4),
    ("pxTopOfStack", T_TOP, 4),
    ("ucDelayAborted", T_DELAYABORT, 1),
    ("ucNotifyState", T_NOTIFSTATE, 1),
    ("ulNotifiedValue", T_NOTIFVAL, 4),
    ("ulRunTimeCounter", T_RUNTIME, 4),
    ("uxBasePriority", T_BASEPRIO, 4),
    ("uxMutexesHeld", T_MUTEXES, 4),
    ("uxPriority", T_PRIO, 4),
    ("uxTaskNumber", T_TASKNUM, 4),
    ("uxTCBNumber", T_TCBNUM, 4),
    ("xEventListItem", T_EVENT, ITEM_SIZE),
    ("xStateListItem", T_STATE, ITEM_SIZE),
)

# Queue_t (also used for the mutex)
Q_WAITING = 0
Q_LENGTH = 4
Q_ITEMSIZE = 8
Q_HEAD = 12
Q_WRITE = 16
Q_READ = 20
Q_TX_LIST = 24
Q_RX_LIST = 44
Q_HOLDER = 64
Q_STORAGE = 68
Q_MSG_SIZE = 8

# Timer_t
TM_ITEM = 0
TM_PERIOD = 20
TM_RELOAD = 24
TM_ID = 28
TIMER_SIZE = 32

# Saved context frame at the top of a task stack; the first word identifies
# the code that was running when the frame was pushed.
FRAME_SIZE = 16

# Notification states
NOTIFY_NOT_WAITING = 0
NOTIFY_WAITING = 1
NOTIFY_RECEIVED = 2

# Timer command ids carried through the timer queue
CMD_PEND_FUNCTION = 0
CMD_START = 1
CMD_STOP = 3

# Table I globals, in table order.
SCHEDULER_VARIABLES = (
    "uxCurrentNumberOfTasks",
    "uxDeletedTasksWaitingCleanup",
    "xPendedTicks",
    "uxTaskNumber",
    "uxTopReadyPriority",
    "xNextTaskUnblockTime",
    "xTickCount",
    "xNumOfOverflows",
    "xSchedulerRunning",
    "xTimerQueue",
    "xTimerTaskHandle",
    "xYieldPending",
)

# Table II pointers.
SCHEDULER_POINTERS = (
    "pxCurrentTCB",
    "pxCurrentTimerList",
    "pxDelayedTaskList",
    "pxOverflowDelayedTaskList",
    "pxOverflowTimerList",
    "xIdleTaskHandle",
)

# Table III lists other than the ready-list array.
SCHEDULER_LISTS = (
    "xDelayedTaskList1",
    "xDelayedTaskList2",
    "xPendingReadyList",
    "xActiveTimerList1",
    "xActiveTimerList2",
    "xSuspendedTaskList",
    "xTasksWaitingTermination",
)

# Kernel-private scalars that exist in the image but are not injection targets.
INTERNAL_SCALARS = (
    "uxSchedulerSuspended",
    "xLastTime",
)
