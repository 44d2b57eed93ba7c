"""Small-scale fluctuation exponent runs; the acceptance sizes take much longer.

Run:  python demos/exponents.py
"""
from lgpolymer.experiments import exp_chi, exp_zeta

chi = exp_chi(N_list=(32, 64, 128, 256), reps=1500, reps_min=500, seed=5)
print("N      Var log Z")
for N, v, se in chi.csv_rows:
    print(f"{N:<6d} {v:8.3f} +- {se:.3f}")
print(f"slope {chi.estimates['fit']['slope']:.3f} (Var log Z grows like N^(2/3))")

zeta = exp_zeta(N_list=(32, 64, 128, 256), reps=300, seed=5)
print("N      SD crossing point")
for N, sd, se in zeta.csv_rows:
    print(f"{N:<6d} {sd:8.3f} +- {se:.3f}")
print(f"slope {zeta.estimates['fit']['slope']:.3f} (the crossing point fluctuates on scale N^(2/3))")
