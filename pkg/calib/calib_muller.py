import numpy as np, time, json
from chebscat import geometry as geo, kernels as ker, mie, postprocess as post
from chebscat.solver import Problem, solve_direct, solve_gmres

out = {}
lam = 1.0
med1 = ker.Medium.from_relative(1.0, 1.0, lam)
pw = ker.PlaneWave([0,0,1], [1,0,0], 1.0)

# ---- criterion 2: Muller eps=4, 24 patches 8x8 (N=6144), direct solve
med2 = ker.Medium.from_relative(4.0, 1.0, lam)
spec = ker.FormulationSpec(ker.MULLER, med1, med2)
patches = geo.unit_sphere_patches(0.5, 1, (8,8))
prob = Problem(patches, spec, pw, aca_tol=1e-5)
t0=time.time()
res = solve_direct(prob)
t_direct = time.time()-t0
errs = post.mie_comparison(prob, res.solution, 0.5)
th = np.linspace(0, 180, 181)
cut = post.rcs_cut(prob, res.solution, 0.0, th)
sig = mie.mie_rcs(mie.MieSpec(0.5, med1, med2), th, 0.0)
rcs_err = float(np.linalg.norm(cut.sigma_m2-sig)/np.linalg.norm(sig))
out["criterion2"] = {"N": prob.n_dofs, "t": t_direct, "residual": res.residual,
                     "errs": errs, "rcs_err": rcs_err,
                     "fill": res.metrics["fill_s"], "factor": res.metrics["factor_s"],
                     "CR": res.metrics["compression_rate"]}
print(json.dumps(out["criterion2"], indent=1))

# ---- criterion 3 prep: resonance widths for 1 lambda_e sphere around n=6 (eps~20) and n=4 (~28.6)
tpl = mie.MieSpec(0.5, med1, ker.Medium.from_relative(20.0, 1.0, lam))
for lo, hi in ((19.5, 20.5), (28.0, 29.2)):
    eps_r = mie.find_resonance(tpl, (lo, hi))
    # width: |c| half max
    import numpy as np
    L = int(np.ceil(np.sqrt(hi)*np.pi)) + 8
    grid = np.linspace(eps_r-0.4, eps_r+0.4, 401)
    prof = np.array([mie._mode_profile(tpl, e, L).max() for e in grid])
    pk = prof.max(); i = int(np.argmax(prof))
    l = i
    while l>0 and prof[l] > pk/2: l-=1
    r = i
    while r<400 and prof[r] > pk/2: r+=1
    print(f"resonance in [{lo},{hi}]: eps={eps_r:.4f} width~{grid[r]-grid[l]:.4f} peak={pk:.1f}")
    out.setdefault("resonances", []).append({"interval": [lo,hi], "eps": eps_r, "width": grid[r]-grid[l]})

json.dump(out, open("calib/muller_out.json","w"), indent=1)
