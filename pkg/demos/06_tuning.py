"""
Tuning engine knobs against measured performance
=================================================

An actor-critic loop proposes knob settings, measures the resulting
throughput, shapes the measurements into rewards, and keeps the best
setting seen.  Here the environment is a closed-form simulation so the
demo is fast and deterministic; EngineEnvironment plugs a live engine
into the same loop.
"""

from mmsearch import SimulatedEnvironment, default_knob_schema, tune
from mmsearch.tuning import reward_base, reward_exp, reward_log

schema = default_knob_schema()
print("knobs under control:")
for knob in schema.knobs:
    print(f"  {knob.name:<16} [{knob.lo:g}, {knob.hi:g}]  default {knob.default:g}")

# reward shaping: improvement over the baseline, scaled up when the
# previous step was already moving the same way
for dq0, dq_prev in [(0.1, 0.05), (0.1, -0.05), (-0.1, 0.05), (0.0, 0.9)]:
    print(f"dq0={dq0:+.2f} dq_prev={dq_prev:+.2f}  "
          f"base {reward_base(dq0, dq_prev):+.4f}  "
          f"exp {reward_exp(dq0, dq_prev):+.4f}  "
          f"log-variant {reward_log(dq0, dq_prev, variant=True):+.4f}")

env = SimulatedEnvironment(schema)
result = tune(env, steps=50, seed=0)

print(f"\nbaseline {result.baseline_perf:.2f} -> best {result.best_perf:.2f} "
      f"({result.improvement:+.1%} over {len(result.trace)} steps)")
print("best knobs:", result.best_knobs)

print("\nlast five steps:")
for st in result.trace[-5:]:
    print(f"  step {st.step:>2}  perf {st.perf:7.2f}  reward {st.reward:+8.4f}  "
          f"dq0 {st.dq0:+.3f}")

# the trace's best step is exactly what the result reports
best_step = max(result.trace, key=lambda s: s.perf)
assert best_step.perf == result.best_perf
assert best_step.knobs == result.best_knobs
print(f"\nbest setting came from step {best_step.step}")
