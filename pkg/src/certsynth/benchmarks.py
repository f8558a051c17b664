"""Built-in benchmark library: the fifteen appendix systems plus extras.

Each instance is a reach-while-stay problem over a switched polynomial
plant; S is a box and I, G are origin-centered balls, after the prescribed
change of origin where a system's operating point is not the origin.
Parameters follow the published result tables, with the verifier precision
lowered one notch where the table value would tie eps_t3 (the termination
strengthening must dominate the verifier precision).
"""

from __future__ import annotations

from fractions import Fraction

from certsynth.intervals import Box
from certsynth.model import Mode, Problem, Rws, SwitchedPlant
from certsynth.poly import Polynomial, parse_poly
from certsynth.regions import Ball


def _modes(state, named_fields):
    return [Mode(name, [parse_poly(s, state) for s in fields])
            for name, fields in named_fields]


def _rws(state, modes, s_box, r_i, r_g, params, name, disturbance=None,
         template_kind="quadratic_minus_one"):
    n = len(state)
    plant = SwitchedPlant(tuple(state), modes,
                          Box(disturbance) if disturbance is not None else None)
    spec = Rws(I=Ball((0.0,) * n, r_i), S=Box(s_box), G=Ball((0.0,) * n, r_g))
    from certsynth.model import TemplateConfig
    return Problem(name=name, plant=plant, spec=spec,
                   template=TemplateConfig(kind=template_kind), params=params)


def _scale_fields(fields, state_scale, rate_scale):
    """Rescale state y = x/state_scale: new field = rate_scale*f(state_scale*y)."""
    n = fields[0].arity
    subs = [Polynomial.variable(n, i) * state_scale for i in range(n)]
    return [f.compose(subs) * rate_scale for f in fields]


# ----------------------------------------------------------------- systems

def harmonic():
    state = ("x", "y")
    modes = _modes(state, [(f"u={u:+d}", ("y", f"-x + ({u})")) for u in (-1, 0, 1)])
    return _rws(state, modes, [(-1, 1), (-1, 1)], r_i=0.8, r_g=0.2,
                params={"eps": 0.01, "eps_t1": 0.1, "eps_t3": 0.01, "delta": 1e-3},
                name="harmonic")


def linear_ss_1():
    state = ("x", "y")
    rows = [
        ("u1", ("0.0403*x + 0.5689*y", "0.6771*x - 0.2556*y")),
        ("u2", ("0.2617*x - 0.2747*y", "1.2134*x - 0.1331*y")),
        ("u3", ("1.4725*x - 1.2173*y", "0.0557*x - 0.0412*y")),
        ("u4", ("-0.5217*x + 0.8701*y", "-1.4320*x + 0.8075*y")),
        ("u5", ("-2.1707*x - 1.0106*y", "-0.0592*x + 0.6145*y")),
    ]
    return _rws(state, _modes(state, rows), [(-1, 1), (-1, 1)], r_i=0.5, r_g=0.1,
                params={"eps": 0.001, "eps_t1": 0.1, "eps_t3": 0.001, "delta": 1e-4},
                name="linear_ss_1")


def dc_motor(sigma_d: float | None = None):
    # omega' = omega - 20; u restricted to {-3, 3}
    B, J, k, R, L = 1e-4, 25e-5, 0.05, 0.5, 15e-4
    a11, a12 = -B / J, k / J            # -0.4, 200
    a21, a22, b2 = -k / L, -R / L, 1 / L
    state = ("w", "i")
    rows = []
    for u in (-3.0, 3.0):
        f1 = f"({a11})*(w + 20) + ({a12})*i"
        f2 = f"({a21})*(w + 20) + ({a22})*i + ({b2 * u})"
        rows.append((f"u={u:+g}", (f1, f2)))
    dist = None if sigma_d is None else [(-sigma_d, sigma_d), (-sigma_d, sigma_d)]
    name = "dc_motor" if sigma_d is None else f"dc_motor_robust_{sigma_d:g}"
    return _rws(state, _modes(state, rows), [(-21, 10), (-3, 3)], r_i=2.0, r_g=0.5,
                params={"eps": 0.01, "eps_t1": 0.1, "eps_t3": 0.01, "delta": 1e-4},
                name=name, disturbance=dist)


def dcdc():
    state = ("i", "v")
    raw = [
        ("u1", ("0.0167*i + 0.3333", "-0.0142*v")),
        ("u2", ("-0.0183*i - 0.0663*v + 0.3333", "0.0711*i - 0.0142*v")),
    ]
    origin = (1.25, 5.55)
    modes = [Mode(name, [parse_poly(s, state).shift(origin) for s in fields])
             for name, fields in raw]
    return _rws(state, modes, [(-0.6, 0.4), (-0.6, 0.4)], r_i=0.35, r_g=0.15,
                params={"eps": 1e-4, "eps_t1": 0.2, "eps_t3": 1e-4, "delta": 1e-5},
                name="dcdc")


def tulip_2d():
    state = ("x1", "x2")
    raw = [
        ("u1", ("-x2 - 1.5*x1 - 0.5*x1^3", "x1 - x2^2 + 2")),
        ("u2", ("-x2 - 1.5*x1 - 0.5*x1^3", "x1 - x2")),
        ("u3", ("-x2 - 1.5*x1 - 0.5*x1^3 + 2", "x1 + 10")),
    ]
    origin = (-0.75, 1.75)
    modes = [Mode(name, [parse_poly(s, state).shift(origin) for s in fields])
             for name, fields in raw]
    return _rws(state, modes, [(-1.25, 2.75), (-3.25, 1.25)], r_i=1.0, r_g=0.25,
                params={"eps": 0.1, "eps_t1": 0.1, "eps_t3": 0.1, "delta": 1e-3},
                name="tulip_2d")


def sliding_motion():
    state = ("x", "y")
    rows = [(f"u={u:+d}", (f"{u}", "y^2*x")) for u in (-4, 0, 4)]
    # borderline margins: the published run also failed at coarser precision
    return _rws(state, _modes(state, rows), [(-1, 1), (-1, 1)], r_i=0.5, r_g=0.1,
                params={"eps": 1e-4, "eps_t1": 0.1, "eps_t3": 1e-4, "delta": 1e-6},
                name="sliding_motion")


def _pendulum_modes(state, g, h, l, m, levels):
    # sin ~ t - t^3/6, cos ~ 1 - t^2/2 over the operating range
    a = g / l
    b = h / (m * l * l)
    c = 1 / (m * l)
    rows = []
    for u in levels:
        f2 = (f"({a})*(t - t^3*{1 / 6}) - ({b})*w"
              f" + ({c * u})*(1 - t^2*0.5)")
        rows.append((f"u={u:+g}", ("w", f2)))
    return _modes(state, rows)


def inverted_pendulum_a():
    state = ("t", "w")
    modes = _pendulum_modes(state, 9.8, 2.0, 2.0, 0.125, (-3.0, 0.0, 3.0))
    return _rws(state, modes, [(-1.5, 1.5), (-1, 1)], r_i=0.5, r_g=0.25,
                params={"eps": 0.01, "eps_t1": 0.1, "eps_t3": 0.01, "delta": 1e-4},
                name="inverted_pendulum_a")


def inverted_pendulum_b():
    state = ("t", "w")
    modes = _pendulum_modes(state, 9.8, 2.0, 2.0, 0.125, (-15.0, 0.0, 15.0))
    return _rws(state, modes, [(-1.5, 1.5), (-4, 4)], r_i=0.5, r_g=0.25,
                params={"eps": 0.05, "eps_t1": 0.1, "eps_t3": 0.01, "delta": 1e-4},
                name="inverted_pendulum_b")


def linear_ss_2():
    state = ("x", "y", "z")
    rows = [
        ("u1", ("1.8631*x - 0.0053*y + 0.9129*z",
                "0.2681*x - 6.4962*y + 0.0370*z",
                "2.2497*x - 6.7180*y + 1.6428*z")),
        ("u2", ("-2.4311*x - 5.1032*y + 0.4565*z",
                "-0.0869*x + 0.0869*y + 0.0185*z",
                "0.0369*x - 5.9869*y + 0.8214*z")),
        ("u3", ("0.0372*x - 0.0821*y - 2.7388*z",
                "0.1941*x + 0.2904*y - 0.1110*z",
                "-1.0360*x + 3.0486*y - 4.9284*z")),
    ]
    return _rws(state, _modes(state, rows), [(-1, 1)] * 3, r_i=0.7, r_g=0.1,
                params={"eps": 1e-4, "eps_t1": 0.1, "eps_t3": 0.01, "delta": 1e-4},
                name="linear_ss_2")


def linear_ss_3():
    state = ("x", "y", "z")
    rows = [
        ("u1", ("0.1764*x + 0.8192*y - 0.3179*z",
                "-1.8379*x - 0.2346*y - 0.7963*z",
                "-1.5023*x - 1.6316*y + 0.6908*z")),
        ("u2", ("-0.0420*x - 1.0286*y + 0.6892*z",
                "0.3240*x + 0.0994*y + 1.8833*z",
                "0.5065*x - 0.1164*y + 0.3254*z")),
        ("u3", ("-0.0952*x - 1.7313*y + 0.3868*z",
                "0.0312*x + 0.4788*y + 0.0540*z",
                "-0.6138*x - 0.4478*y - 0.4861*z")),
        ("u4", ("0.2445*x + 0.1338*y + 1.1991*z",
                "0.7183*x - 1.0062*y - 2.5773*z",
                "0.1535*x + 1.3065*y - 2.0863*z")),
        ("u5", ("-1.4132*x - 1.4928*y - 0.3459*z",
                "-0.5918*x - 0.0867*y + 0.9863*z",
                "0.5189*x - 0.0126*y + 0.6433*z")),
    ]
    return _rws(state, _modes(state, rows), [(-1, 1)] * 3, r_i=0.8, r_g=0.2,
                params={"eps": 1e-4, "eps_t1": 0.05, "eps_t3": 1e-4, "delta": 1e-5},
                name="linear_ss_3")


def non_equilibrium():
    state = ("x", "y", "z")
    rows = [
        ("u1", ("4.15*x - 1.06*y - 6.7*z + 1",
                "5.74*x + 4.78*y - 4.68*z - 4",
                "26.38*x - 6.38*y - 8.29*z + 1")),
        ("u2", ("-3.2*x - 7.6*y - 2*z + 4",
                "0.9*x + 1.2*y - z - 2",
                "x + 6*y + 5*z - 1")),
        ("u3", ("5.75*x - 16.48*y - 2.41*z - 2",
                "9.51*x - 9.49*y + 19.55*z + 1",
                "16.19*x + 4.64*y + 14.05*z - 1")),
        ("u4", ("-12.38*x + 18.42*y + 0.54*z - 1",
                "-11.9*x + 3.24*y - 16.32*z + 2",
                "-26.5*x - 8.64*y - 16.6*z + 1")),
    ]
    return _rws(state, _modes(state, rows), [(-1, 1)] * 3, r_i=0.8, r_g=0.2,
                params={"eps": 0.05, "eps_t1": 0.1, "eps_t3": 0.05, "delta": 1e-3},
                name="non_equilibrium")


def tulip_pipe_3d(variant: str = "x1000_div10"):
    """Radiant heating system.

    The source prescribes enlarging the derivatives 1000x and scaling the
    problem down 10x; the composition is ambiguous, so both readings are
    selectable: "x1000" (rates only) and "x1000_div10" (rates then state).
    """
    C1 = C2 = 2000.0
    Cr = 3500.0
    Kr = 7.8740
    K1 = K2 = 0.4651
    Kw = 16.6667
    K12 = 5.5556
    Tw, p = 18.0, 12.8
    state = ("tc", "t1", "t2")

    def fields(kw):
        ftc = (f"({Kr / Cr})*(t1 - tc) + ({Kr / Cr})*(t2 - tc)"
               f" - ({kw / Cr})*(({Tw}) - tc)")
        ft1 = (f"({Kr / C1})*(tc - t1) + ({K1 / C1})*(7 - t1)"
               f" + ({K12 / C1})*(t2 - t1) + ({p / C1})")
        ft2 = (f"({Kr / C2})*(tc - t2) + ({K2 / C2})*(7 - t2)"
               f" + ({K12 / C2})*(t1 - t2) + ({p / C2})")
        return (ftc, ft1, ft2)

    origin = (24.0, 23.0, 23.0)
    modes = []
    for name, kw in (("u1", Kw), ("u2", 0.0)):
        fs = [parse_poly(s, state).shift(origin) * 1000.0 for s in fields(kw)]
        if variant == "x1000_div10":
            fs = _scale_fields(fs, state_scale=10.0, rate_scale=0.1)
        elif variant != "x1000":
            raise ValueError(f"unknown variant {variant!r}")
        modes.append(Mode(name, fs))
    if variant == "x1000_div10":
        s_box, r_i, r_g = [(-0.4, 0.4), (-0.3, 0.5), (-0.3, 0.5)], 0.3, 0.1
    else:
        s_box, r_i, r_g = [(-4, 4), (-3, 5), (-3, 5)], 3.0, 1.0
    return _rws(state, modes, s_box, r_i=r_i, r_g=r_g,
                params={"eps": 0.01, "eps_t1": 0.1, "eps_t3": 0.1, "delta": 1e-4},
                name=f"tulip_pipe_3d_{variant}")


def nonholonomic():
    state = ("x", "y", "z")
    rows = []
    for u in (-1, 0, 1):
        for v in (-1, 0, 1):
            rows.append((f"u=({u:+d},{v:+d})",
                         (f"{u}", f"{v}", f"({v})*x - ({u})*y")))
    return _rws(state, _modes(state, rows), [(-1, 1)] * 3, r_i=0.5, r_g=0.2,
                params={"eps": 0.1, "eps_t1": 0.1, "eps_t3": 1.0, "delta": 1e-4},
                name="nonholonomic")


def lqr():
    state = ("w", "x", "y", "z")
    base = {
        "m1": (("-0.693*w - 1.099*x + 2.197*y + 3.296*z", "-7.820"),
               ("-1.792*x + 2.197*y + 4.394*z", "-8.735"),
               ("-1.097*x + 1.504*y + 2.197*z", "-2.746"),
               ("0.406*z", "3.244")),
        "m2": (("-1.792*w - 1.099*x + 2.197*y + 1.099*z", "6.696"),
               ("0.406*x - 2.197*y", "4.734"),
               ("-0.693*y", "2.773"),
               ("-2.197*w - 1.099*x + 2.197*y + 1.504*z", "4.263")),
        "m3": (("0.406*w", "0.811"),
               ("1.099*w - 0.144*x + 0.549*y - 0.549*z", "1.910"),
               ("0.549*x - 0.144*y - 0.549*z", "3.871"),
               ("1.099*w - 0.693*z", "4.970")),
        "m4": (("-0.693*w + 2.000*x", "1.863"),
               ("-0.693*x", "4.159"),
               ("-0.693*y", "2.773"),
               ("4.000*x - 4.000*y - 0.693*z", "-1.069")),
    }
    rows = []
    for mname, comps in base.items():
        for u in (-1, 0, 1):
            fields = tuple(f"{lin} + ({gain})*({u})" for lin, gain in comps)
            rows.append((f"{mname},u={u:+d}", fields))
    return _rws(state, _modes(state, rows), [(-1, 1)] * 4, r_i=0.5, r_g=0.2,
                params={"eps": 0.01, "eps_t1": 0.1, "eps_t3": 0.01, "delta": 1e-3},
                name="lqr")


def lorenz():
    state = ("x", "y", "z")
    raw = {
        -100: ("-10*x + 10*y - 100", "28*x - y - x*z", "x*y - 2.6667*z"),
        0: ("-10*x + 10*y", "28*x - y - x*z", "x*y - 2.6667*z"),
        100: ("-10*x + 10*y + 100", "28*x - y - x*z", "x*y - 2.6667*z"),
    }
    modes = []
    for u, fields in raw.items():
        fs = _scale_fields([parse_poly(s, state) for s in fields],
                           state_scale=10.0, rate_scale=0.1)
        modes.append(Mode(f"u={u:+d}", fs))
    return _rws(state, modes, [(-0.4, 0.4)] * 3, r_i=0.3, r_g=0.1,
                params={"eps": 1e-4, "eps_t1": 0.1, "eps_t3": 0.01, "delta": 1e-4},
                name="lorenz")


def heater(instance: str):
    """R-room heating ring; origin shifted to 21 degrees in every room."""
    sizes = {"a": 3, "b": 4, "c": 5, "d": 6, "e": 9}
    if instance not in sizes:
        raise ValueError(f"heater instance must be one of {sorted(sizes)}")
    R = sizes[instance]
    state = tuple(f"t{i + 1}" for i in range(R))

    def room(i, heated):
        up, down = (i + 1) % R, (i - 1) % R
        if heated:
            return (f"0.01*(-11.5*t{i + 1} + 5*t{up + 1} + 5*t{down + 1} + 23.5)")
        return (f"0.01*(-10.5*t{i + 1} + 5*t{up + 1} + 5*t{down + 1} - 5.5)")

    if instance == "d":
        placements = [frozenset({i, (i + 3) % R}) for i in range(R)]
    elif instance == "e":
        placements = [frozenset({i, (i + 3) % R, (i + 6) % R}) for i in range(R)]
    else:
        placements = [frozenset({i}) for i in range(R)]

    rows = [("off", tuple(room(i, False) for i in range(R)))]
    for hot in placements:
        name = "on_" + "_".join(str(i + 1) for i in sorted(hot))
        rows.append((name, tuple(room(i, i in hot) for i in range(R))))
    return _rws(state, _modes(state, rows), [(-4, 4)] * R, r_i=3.0, r_g=1.0,
                params={"eps": 0.001, "eps_t1": 0.1, "eps_t3": 0.001, "delta": 1e-4},
                name=f"heater_{instance}")


def illustrative():
    """The worked two-mode example: reach a small ball around the origin.

    The certificate template ties the two squared coordinates to keep the
    coefficient space two-dimensional (c1*(x^2+y^2) + c2*x*y - 1).
    """
    from certsynth.model import TemplateConfig
    state = ("x", "y")
    rows = [
        ("u1", ("-x + y^2", "1")),
        ("u2", ("-x - y^2", "-1")),
    ]
    plant = SwitchedPlant(state, _modes(state, rows))
    spec = Rws(I=Ball((0.0, 0.0), 0.2), S=Box([(-0.5, 0.5), (-0.5, 0.5)]),
               G=Ball((0.0, 0.0), 0.05))
    tpl = TemplateConfig(kind="monomials", monomials=("x^2 + y^2", "x*y"),
                         offset="-1")
    return Problem(name="illustrative", plant=plant, spec=spec, template=tpl,
                   params={"eps": 0.01, "eps_t1": 1.0, "eps_t2": 1.0,
                           "eps_t3": 1.0, "delta": 1e-3, "Delta": 10.0})


_NUMBERED = [
    ("1", harmonic),
    ("2", linear_ss_1),
    ("3", dc_motor),
    ("4", dcdc),
    ("5", tulip_2d),
    ("6", sliding_motion),
    ("7a", inverted_pendulum_a),
    ("7b", inverted_pendulum_b),
    ("8", linear_ss_2),
    ("9", linear_ss_3),
    ("10", non_equilibrium),
    ("11", tulip_pipe_3d),
    ("12", nonholonomic),
    ("13", lqr),
    ("14", lorenz),
    ("15a", lambda: heater("a")),
    ("15b", lambda: heater("b")),
    ("15c", lambda: heater("c")),
    ("15d", lambda: heater("d")),
    ("15e", lambda: heater("e")),
]


def builtin_benchmarks() -> list:
    """Systems 1-15 of the benchmark suite, in order."""
    return [factory() for _, factory in _NUMBERED]


def benchmark_ids() -> list:
    ids = []
    for num, factory in _NUMBERED:
        ids.append((num, factory().name))
    ids.append(("ex", "illustrative"))
    for s in (0.0, 0.4, 0.8, 1.2, 1.4, 1.6, 1.7, 1.8):
        ids.append((f"3r{s:g}", f"dc_motor_robust_{s:g}"))
    return ids


def get_benchmark(ident: str):
    """Look up a benchmark by number ('1', '15a'), name, or robust alias."""
    for num, factory in _NUMBERED:
        prob = None
        if ident == num:
            return factory()
    for num, factory in _NUMBERED:
        prob = factory()
        if prob.name == ident:
            return prob
    if ident in ("ex", "illustrative"):
        return illustrative()
    if ident.startswith("dc_motor_robust_"):
        return dc_motor(sigma_d=float(ident.rsplit("_", 1)[1]))
    if ident.startswith("3r"):
        return dc_motor(sigma_d=float(ident[2:]))
    if ident.startswith("tulip_pipe_3d_"):
        return tulip_pipe_3d(variant=ident[len("tulip_pipe_3d_"):])
    raise KeyError(f"unknown benchmark {ident!r}")
