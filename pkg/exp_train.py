"""Dev experiment: train one mode, print metrics every few hundred steps."""
import sys, time, math, json
sys.path.insert(0, "src")
import numpy as np
from notesing.network import ModelConfig, Model, Trainer
from notesing.attention import AttentionMode
from notesing.synthdata import (CorpusSpec, generate_corpus, expand_alignment,
                                monotonicity_rate, timing_error, f0_rmse_cents,
                                truth_log_f0)

mode = sys.argv[1] if len(sys.argv) > 1 else "prop"
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
every = int(sys.argv[3]) if len(sys.argv) > 3 else 500
seed = int(sys.argv[4]) if len(sys.argv) > 4 else 0
noise = float(sys.argv[5]) if len(sys.argv) > 5 else None
stop_below = float(sys.argv[6]) if len(sys.argv) > 6 else None
rfac = int(sys.argv[7]) if len(sys.argv) > 7 else 3

MODES = {
    "base":    dict(use_position=False, use_aux=False, guided=0.0,  transition="full"),
    "nf":      dict(use_position=False, use_aux=True,  guided=0.0,  transition="full"),
    "np":      dict(use_position=True,  use_aux=False, guided=0.0,  transition="full"),
    "npnf":    dict(use_position=True,  use_aux=True,  guided=0.0,  transition="full"),
    "prop":    dict(use_position=True,  use_aux=True,  guided=10.0, transition="full"),
    "noatt":   dict(use_position=True,  use_aux=True,  guided=0.0,  transition="full", oracle=True),
    "notrans": dict(use_position=True,  use_aux=True,  guided=10.0, transition="fixed_half"),
    "ptrans":  dict(use_position=True,  use_aux=True,  guided=10.0, transition="phoneme_only"),
    "ttrans":  dict(use_position=True,  use_aux=True,  guided=10.0, transition="time_only"),
}
mm = MODES[mode]

spec = CorpusSpec(seed=seed) if noise is None else CorpusSpec(seed=seed, noise_std=noise)
corpus = generate_corpus(spec)
train, test = corpus[:60], corpus[60:]
print("train T:", sorted(s.total_frames for s, _ in train)[:5], "...",
      sorted(s.total_frames for s, _ in train)[-3:])

cfg = ModelConfig(mode=AttentionMode(mm["use_position"], mm["transition"]),
                  use_aux=mm["use_aux"], use_attention=not mm.get("oracle", False),
                  guided_weight=mm["guided"], seed=seed, reduction_factor=rfac)
model = Model(cfg)
trainer = Trainer(model, train)

def train_eval_feat(k=10):
    """Dropout-free teacher-forced feature loss averaged over k train songs."""
    vals = []
    for score, truth in train[:k]:
        oracle = truth.alignment if not cfg.use_attention else None
        res = model.forward_teacher(score, truth.frames, dropout_rng=None,
                                    oracle_alignment=oracle)
        vals.append(res.report.feat_decoder + res.report.feat_postnet)
    return float(np.mean(vals))

def evaluate():
    mono, mae, f0 = [], [], []
    for score, truth in test:
        oracle = truth.alignment if not cfg.use_attention else None
        syn = model.synthesize(score, oracle_alignment=oracle)
        mono.append(monotonicity_rate(syn.alignment))
        fa = expand_alignment(syn.alignment, cfg.reduction_factor, score.total_frames)
        mae.append(timing_error(fa, score, truth.alignment))
        voiced = truth.frames[:, -1]
        f0.append(f0_rmse_cents(syn.frames[:, -2], truth_log_f0(score, truth), voiced))
    return float(np.mean(mono)), float(np.mean(mae)), float(np.mean(f0))

t0 = time.time()
while trainer.step_count < steps:
    rep = trainer.run(min(every, steps - trainer.step_count))
    if stop_below is not None:
        ev = train_eval_feat()
        print(f"[{mode}] step {trainer.step_count:5d} eval-feat {ev:.3e}",
              flush=True)
        if ev < stop_below:
            print(f"[{mode}] eval-feat {ev:.2e} < {stop_below:g} at step "
                  f"{trainer.step_count}", flush=True)
            break
    mono, mae, f0 = evaluate()
    el = time.time() - t0
    print(f"[{mode}] step {trainer.step_count:5d} ({el/60:.1f}m) "
          f"loss {rep.total:8.4f} fd {rep.feat_decoder:7.4f} g {rep.guided:7.4f} | "
          f"mono {mono:.3f} mae {mae:6.2f} f0 {f0:7.1f}", flush=True)
mono, mae, f0 = evaluate()
print(json.dumps(dict(mode=mode, steps=trainer.step_count, mono=mono, mae=mae, f0=f0)))

# decompose per-song F0 error: alignment-induced (weighted pitch vs truth note
# pitch) versus residual-channel error
from notesing.score import note_pitch_vector
from notesing.synthdata import CENT, RESIDUAL_UNIT
for i, (score, truth) in enumerate(test):
    oracle = truth.alignment if not cfg.use_attention else None
    syn = model.synthesize(score, oracle_alignment=oracle)
    pitch = note_pitch_vector(score)
    r = cfg.reduction_factor
    m_path = np.repeat(syn.alignment.T @ pitch, r)[:score.total_frames]
    truth_pitch = pitch[truth.alignment]
    voiced = truth.frames[:, -1] >= 0.5
    em = (m_path - truth_pitch)[voiced] / CENT
    er = (syn.raw_frames[:, -2] - truth.frames[:, -2])[voiced] * RESIDUAL_UNIT / CENT
    both = em + er
    print(f"song {i}: f0 {np.sqrt(np.mean(both**2)):7.1f} "
          f"align {np.sqrt(np.mean(em**2)):7.1f} resid {np.sqrt(np.mean(er**2)):7.1f} "
          f"frac>100c {np.mean(np.abs(both) > 100):.3f}")

import os
os.makedirs("dev_runs", exist_ok=True)
from notesing.network import save_checkpoint
save_checkpoint(f"dev_runs/{mode}_s{seed}.ckpt", model.params)
