"""Frozen reference values; regenerate with tools/generate_oracles.py."""

F_TIMES = [0.5, 1.0, 2.0, 2.5]
F_1_3_0 = [(0.44465404909904405+0j), (0.6706804091290347+0j), (1.1036501458706836+0j), (1.6397380869857416+0j)]
F_1_3_1 = [(0.4274056104990683+0.09713001406047175j), (0.5507249142255043+0.2661415198025682j), (0.42119720623911494+0.38490983716976285j), (0.4101488378256511+0.3440550022374825j)]
F_1_5_1 = [(0.5150342005905457+0.09929926947533917j), (0.582595815823517+0.18080266514122964j), (0.5722963011360058+0.21124553860680362j), (0.5706100883764943+0.2105143369394617j)]
SUPEROHMIC_TAUS = [0.0, 0.25, 1.0]
SUPEROHMIC_ALPHA = [(6+0j), (2.960884089031501-4.413740256941368j), (-1.5+9.185288324856968e-18j)]  # gamma_J = Lambda = 1
ME_TIMES = [0.0, 0.5, 1.0, 2.0]
ME_EN_1_3_1_N8 = [0.5999745113099111, 0.45804020410373264, 0.34686910341921184, 0.29440828015631115]  # TMSV(0.3)
ME_EN_1_3_1_N8_K = [0.5999745113099111, 0.5133361845819431, 0.5000428429420721, 0.39114160804746734]  # TMSV(0.3), k = 0.05
