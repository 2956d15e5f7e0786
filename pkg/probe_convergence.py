"""Scratch probe: how many steps do desk-scale phases need? (not part of the package)"""
import time
import numpy as np
from deshadow.arch import desk_spec
from deshadow.model import DualBranchModel, image_to_chw, mask_to_chw
from deshadow.imaging import synth_pair
from deshadow import nn
from deshadow.nn.optim import init_adam, adam_step

spec = desk_spec()
trips = [synth_pair(s, 64, 64, darkening=0.4, softness=1.5) for s in (101, 102, 103, 104)]
xs = np.stack([image_to_chw(t.shadow) for t in trips])
gts = np.stack([image_to_chw(t.shadow_free) for t in trips])
mks = np.stack([mask_to_chw(t.mask) for t in trips])
mask_sel = np.stack([t.mask for t in trips])  # (4, H, W)
print("mask area fracs:", [f"{t.mask.mean():.3f}" for t in trips], flush=True)

def region_l1(pred, gt, sel):
    sel3 = np.broadcast_to(sel[:, None], pred.shape)
    return float(np.abs(pred - gt)[sel3].mean())

for lr in (1e-3, 2e-3):
    print(f"=== phase 1, lr={lr} ===", flush=True)
    model = DualBranchModel(spec, seed=7)
    model.params.freeze("idb.")
    state = init_adam(model.params, lr)
    xt = nn.Tensor(xs)
    t0 = time.time()
    step = 0
    while step < 6000:
        step += 1
        model.params.zero_grad()
        out, _ = model.imb_apply(xt)
        loss = nn.l1_loss(out, xt)
        nn.backward(loss)
        adam_step(model.params, state)
        if step % 250 == 0:
            print(f"  step {step}: loss {loss.item():.5f} ({time.time()-t0:.0f}s)", flush=True)
        if loss.item() < 0.008:
            print(f"  reached {loss.item():.5f} at step {step} ({time.time()-t0:.0f}s)", flush=True)
            break
    if lr == 1e-3:
        continue
    # phase 2 from this IMB
    imb_nonshadow = region_l1(np.clip(out.data, 0, 1), xs, ~(mask_sel > 0.5))
    print(f"  imb nonshadow L1: {imb_nonshadow:.5f}", flush=True)
    for lr2 in (1e-3,):
        print(f"=== phase 2, lr={lr2}, k=4 ===", flush=True)
        model.params.freeze("imb.")
        for p in model.params.values():
            if p.name.startswith("idb."):
                p.frozen = False
        state2 = init_adam(model.params, lr2)
        with nn.no_grad():
            _, taps = model.imb_apply(nn.Tensor(xs))
        taps = {s: nn.Tensor(t.data) for s, t in taps.items()}
        xt = nn.Tensor(xs); mt = nn.Tensor(mks); gt_t = nn.Tensor(gts)
        t0 = time.time()
        for step in range(1, 1501):
            model.params.zero_grad()
            outs, _ = model.idb_unroll(xt, mt, taps, 4)
            loss = nn.l1_loss(outs[-1], gt_t)
            nn.backward(loss)
            adam_step(model.params, state2)
            if step % 50 == 0:
                pred = np.clip(outs[-1].data, 0, 1)
                sl1 = region_l1(pred, gts, mask_sel > 0.5)
                nl1 = region_l1(pred, gts, ~(mask_sel > 0.5))
                print(f"  step {step}: loss {loss.item():.5f} shadowL1 {sl1:.5f} nonshadowL1 {nl1:.5f} ({time.time()-t0:.0f}s)", flush=True)
                if sl1 < 0.015 and nl1 < 1.4 * imb_nonshadow:
                    print("  targets met", flush=True)
                    break
