"""Reference values computed independently of the package and frozen here.

Each value was produced with mpmath at 30 digits from a route the package
does not use, as noted beside it.
"""

# Watson's closed form sqrt(6)/(32 pi^3) Gamma(1/24)Gamma(5/24)Gamma(7/24)Gamma(11/24);
# cross-checked against int_0^inf e^{-t} I_0(t/3)^3 dt
G0_D3 = 1.51638605915197801815601215968

# 1/g(0) and 2/(2 g(0) - 1) from the 1x1 and 2x2 Green systems
CAP_ORIGIN = 0.659462670449000857173726815567
CAP_EDGE = 0.983878115009123864787130412153

# 3/(2 pi)
C3 = 0.477464829275686007306651290118

# exp(u s / (1 - s g(0))) at u = 0.5, s = 0.3
LAPLACE_U05_S03 = 1.31677669378318727058073339853

# floor(sqrt(1e3 log 1e4)) and 300 floor(sqrt(0.1) 1e4)
L0_N1E4 = 95
LHAT0_N1E4 = 948600

# d = 3 Brownian capacity of [0,1]^3 (E(f) = 1/2 int |grad f|^2 normalisation),
# 2 pi times the literature value 0.66068 of the Newtonian cube capacity
CUBE_CAP_LITERATURE = 4.15117
