"""cyclab: shadow/A-B deployment runtime for cyclic industrial control.

A single-process simulation of an OT control device: a wait-free ring
pipeline with transactional reads, a four-stage cyclic executive, software
output gating with cycle-atomic switching, a device-level adaptation manager,
layered digital twins, and a management gateway with a two-phase switch
agreement across devices.
"""

__version__ = "0.1.0"
