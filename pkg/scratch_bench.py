"""Scratch tuning harness (not part of the package)."""
import sys, time
import numpy as np
import layoutlens as ll
from layoutlens import synth, fit, metrics, losses

SEEDS = [0, 1, 2, 3, 4, 5, 6, 7]


def iou_of(scene, bounds, view):
    pred_f, _ = ll.project_xy(bounds, scene.heights)
    gt_f, _ = ll.project_xy(scene.gt_layout(view), scene.heights)
    return metrics.iou_2d(pred_f.points, gt_f.points)


def run(name, sched, iters, sets, lr=0.03, seeds=SEEDS, win=None):
    tot = 0.0
    n = 0
    per = []
    t0 = time.time()
    for seed in seeds:
        room = synth.sample_room(seed=seed, corner_count=4)
        scene = synth.make_scene_pair(room, (0, 1), height=256, width=512)
        prev = None
        for si, (hw, ni, en) in enumerate(zip(sched, iters, sets)):
            cfg = fit.FitConfig(
                loss_config=losses.LossConfig(enabled=en, manhattan_window=win),
                init=("flat" if si == 0 else "user"), seed=0, step_size=lr,
                schedule=(hw,), stage_iterations=(ni,), init_boundaries=prev)
            res = fit.fit_pair(scene, cfg)
            prev = {v: ll.unconstrain(res.boundaries[v]) for v in "ab"}
        ia = iou_of(scene, res.boundaries['a'], 'a')
        ib = iou_of(scene, res.boundaries['b'], 'b')
        tot += ia + ib
        n += 2
        per.append(round((ia + ib) / 2, 3))
    print(f"{name}: mean={tot/n:.3f} per-seed={per} ({time.time()-t0:.0f}s)",
          flush=True)


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "all"
    ALL = ("photo", "src_tgt", "ceil_floor", "manhattan")
    NO_ST = ("photo", "ceil_floor", "manhattan")
    if which in ("all", "A"):
        run("A base16", ((16,32),(32,64),(64,128),(128,256),(256,512)),
            (400,300,300,120,50), [ALL]*5)
    if which in ("all", "B"):
        run("B start32", ((32,64),(64,128),(128,256),(256,512)),
            (700,300,120,50), [ALL]*4)
    if which in ("all", "C"):
        run("C mix", ((16,32),(32,64),(64,128),(128,256),(256,512)),
            (400,300,300,120,50), [NO_ST, ALL, ALL, ALL, ALL])
    if which in ("all", "D"):
        run("D lr05", ((16,32),(32,64),(64,128),(128,256),(256,512)),
            (400,300,300,120,50), [ALL]*5, lr=0.05)

def run_lrs(name, sched, iters, sets, lrs, seeds=SEEDS, win=None):
    tot = 0.0; n = 0; per = []
    t0 = time.time()
    for seed in seeds:
        room = synth.sample_room(seed=seed, corner_count=4)
        scene = synth.make_scene_pair(room, (0, 1), height=256, width=512)
        prev = None
        for si, (hw, ni, en, lr) in enumerate(zip(sched, iters, sets, lrs)):
            cfg = fit.FitConfig(
                loss_config=losses.LossConfig(enabled=en, manhattan_window=win),
                init=("flat" if si == 0 else "user"), seed=0, step_size=lr,
                schedule=(hw,), stage_iterations=(ni,), init_boundaries=prev)
            res = fit.fit_pair(scene, cfg)
            prev = {v: ll.unconstrain(res.boundaries[v]) for v in "ab"}
        ia = iou_of(scene, res.boundaries['a'], 'a')
        ib = iou_of(scene, res.boundaries['b'], 'b')
        tot += ia + ib; n += 2
        per.append(round((ia + ib) / 2, 3))
    print(f"{name}: mean={tot/n:.3f} per-seed={per} ({time.time()-t0:.0f}s)", flush=True)
