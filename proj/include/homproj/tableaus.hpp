#pragma once

#include <homproj/core.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace homproj {

/// Explicit or implicit Runge-Kutta coefficients. Embedded pairs carry error
/// weights e (err = h sum_j e_j k_j) instead of the lower-order weights; when
/// e has s+1 entries the last one multiplies f(x_new) (first-same-as-last).
struct ButcherTableau {
    std::string name;
    std::vector<std::vector<double>> a;
    std::vector<double> b;
    std::vector<double> c;
    int order = 0;
    int embedded_order = 0;
    std::vector<double> error_weights;
    /// Second (3rd-order) estimate of the 8(5,3) pair; empty otherwise.
    std::vector<double> error_weights_low;
    /// The step-size law uses exponent 1/(error_exponent_order + 1).
    int error_exponent_order = 0;
    double min_factor = 0.2;
    double max_factor = 10.0;
    /// f(x_new) doubles as the first stage of the next step.
    bool fsal = false;

    std::size_t stages() const noexcept { return b.size(); }
    bool embedded() const noexcept { return !error_weights.empty(); }

    bool is_explicit() const noexcept
    {
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = i; j < a[i].size(); ++j)
                if (a[i][j] != 0.0) return false;
        return true;
    }

    /// b_hat = b - e over the first s stages.
    std::vector<double> embedded_weights() const
    {
        std::vector<double> bh(b);
        for (std::size_t j = 0; j < bh.size() && j < error_weights.size(); ++j) bh[j] -= error_weights[j];
        return bh;
    }
};

namespace tableaus {

inline ButcherTableau fixed(std::string name, std::vector<std::vector<double>> a, std::vector<double> b,
                            std::vector<double> c, int order)
{
    ButcherTableau t;
    t.name = std::move(name);
    t.a = std::move(a);
    t.b = std::move(b);
    t.c = std::move(c);
    t.order = order;
    return t;
}

inline ButcherTableau forward_euler()
{
    return fixed("euler", {{0.0}}, {1.0}, {0.0}, 1);
}

inline ButcherTableau explicit_midpoint()
{
    return fixed("midpoint", {{0.0, 0.0}, {0.5, 0.0}}, {0.0, 1.0}, {0.0, 0.5}, 2);
}

inline ButcherTableau heun()
{
    return fixed("heun", {{0.0, 0.0}, {1.0, 0.0}}, {0.5, 0.5}, {0.0, 1.0}, 2);
}

/// Kutta's third-order method.
inline ButcherTableau kutta3()
{
    return fixed("kutta3",
            {{0.0, 0.0, 0.0}, {0.5, 0.0, 0.0}, {-1.0, 2.0, 0.0}},
            {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0},
            {0.0, 0.5, 1.0},
            3);
}

inline ButcherTableau rk4()
{
    return fixed("rk4",
            {{0.0, 0.0, 0.0, 0.0}, {0.5, 0.0, 0.0, 0.0}, {0.0, 0.5, 0.0, 0.0}, {0.0, 0.0, 1.0, 0.0}},
            {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0},
            {0.0, 0.5, 0.5, 1.0},
            4);
}

/// Explicit method of the requested order from the set above (1, 2, 3, 4).
inline ButcherTableau explicit_of_order(int order)
{
    switch (order) {
    case 1: return forward_euler();
    case 2: return explicit_midpoint();
    case 3: return kutta3();
    case 4: return rk4();
    default: throw Error(ErrorKind::Config, "no explicit tableau of order " + std::to_string(order));
    }
}

/// Dormand-Prince 5(4); steps with the 5th-order weights.
inline ButcherTableau dopri5()
{
    ButcherTableau t;
    t.name = "rk45";
    t.c = {0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0};
    t.a = {{0, 0, 0, 0, 0, 0},
           {1.0 / 5.0, 0, 0, 0, 0, 0},
           {3.0 / 40.0, 9.0 / 40.0, 0, 0, 0, 0},
           {44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0, 0, 0},
           {19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0, 0},
           {9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0}};
    t.b = {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0};
    t.error_weights = {-71.0 / 57600.0, 0.0, 71.0 / 16695.0, -71.0 / 1920.0, 17253.0 / 339200.0, -22.0 / 525.0,
                       1.0 / 40.0};
    t.order = 5;
    t.embedded_order = 4;
    t.error_exponent_order = 4;
    t.min_factor = 0.2;
    t.max_factor = 10.0;
    t.fsal = true;
    return t;
}

/// Dormand-Prince 8(5,3) (Hairer, Norsett & Wanner). The error estimate
/// blends the 5th- and 3rd-order embedded solutions and behaves like a
/// 7th-order local error, hence the 1/8 step-size exponent.
inline ButcherTableau dop853()
{
    ButcherTableau t;
    t.name = "dop853";
    t.c = {0.0, 0.526001519587677318785587544488e-01, 0.789002279381515978178381316732e-01, 0.118350341907227396726757197510, 0.281649658092772603273242802490, 0.333333333333333333333333333333, 0.25, 0.307692307692307692307692307692, 0.651282051282051282051282051282, 0.6, 0.857142857142857142857142857142, 1.0};
    t.a.assign(12, std::vector<double>(12, 0.0));
    t.a[1][0] = 5.26001519587677318785587544488e-2;
    t.a[2][0] = 1.97250569845378994544595329183e-2;
    t.a[2][1] = 5.91751709536136983633785987549e-2;
    t.a[3][0] = 2.95875854768068491816892993775e-2;
    t.a[3][2] = 8.87627564304205475450678981324e-2;
    t.a[4][0] = 2.41365134159266685502369798665e-1;
    t.a[4][2] = -8.84549479328286085344864962717e-1;
    t.a[4][3] = 9.24834003261792003115737966543e-1;
    t.a[5][0] = 3.7037037037037037037037037037e-2;
    t.a[5][3] = 1.70828608729473871279604482173e-1;
    t.a[5][4] = 1.25467687566822425016691814123e-1;
    t.a[6][0] = 3.7109375e-2;
    t.a[6][3] = 1.70252211019544039314978060272e-1;
    t.a[6][4] = 6.02165389804559606850219397283e-2;
    t.a[6][5] = -1.7578125e-2;
    t.a[7][0] = 3.70920001185047927108779319836e-2;
    t.a[7][3] = 1.70383925712239993810214054705e-1;
    t.a[7][4] = 1.07262030446373284651809199168e-1;
    t.a[7][5] = -1.53194377486244017527936158236e-2;
    t.a[7][6] = 8.27378916381402288758473766002e-3;
    t.a[8][0] = 6.24110958716075717114429577812e-1;
    t.a[8][3] = -3.36089262944694129406857109825;
    t.a[8][4] = -8.68219346841726006818189891453e-1;
    t.a[8][5] = 2.75920996994467083049415600797e1;
    t.a[8][6] = 2.01540675504778934086186788979e1;
    t.a[8][7] = -4.34898841810699588477366255144e1;
    t.a[9][0] = 4.77662536438264365890433908527e-1;
    t.a[9][3] = -2.48811461997166764192642586468;
    t.a[9][4] = -5.90290826836842996371446475743e-1;
    t.a[9][5] = 2.12300514481811942347288949897e1;
    t.a[9][6] = 1.52792336328824235832596922938e1;
    t.a[9][7] = -3.32882109689848629194453265587e1;
    t.a[9][8] = -2.03312017085086261358222928593e-2;
    t.a[10][0] = -9.3714243008598732571704021658e-1;
    t.a[10][3] = 5.18637242884406370830023853209;
    t.a[10][4] = 1.09143734899672957818500254654;
    t.a[10][5] = -8.14978701074692612513997267357;
    t.a[10][6] = -1.85200656599969598641566180701e1;
    t.a[10][7] = 2.27394870993505042818970056734e1;
    t.a[10][8] = 2.49360555267965238987089396762;
    t.a[10][9] = -3.0467644718982195003823669022;
    t.a[11][0] = 2.27331014751653820792359768449;
    t.a[11][3] = -1.05344954667372501984066689879e1;
    t.a[11][4] = -2.00087205822486249909675718444;
    t.a[11][5] = -1.79589318631187989172765950534e1;
    t.a[11][6] = 2.79488845294199600508499808837e1;
    t.a[11][7] = -2.85899827713502369474065508674;
    t.a[11][8] = -8.87285693353062954433549289258;
    t.a[11][9] = 1.23605671757943030647266201528e1;
    t.a[11][10] = 6.43392746015763530355970484046e-1;
    t.b.assign(12, 0.0);
    t.b[0] = 5.42937341165687622380535766363e-2;
    t.b[5] = 4.45031289275240888144113950566;
    t.b[6] = 1.89151789931450038304281599044;
    t.b[7] = -5.8012039600105847814672114227;
    t.b[8] = 3.1116436695781989440891606237e-1;
    t.b[9] = -1.52160949662516078556178806805e-1;
    t.b[10] = 2.01365400804030348374776537501e-1;
    t.b[11] = 4.47106157277725905176885569043e-2;
    t.error_weights.assign(13, 0.0);
    t.error_weights[0] = 0.1312004499419488073250102996e-1;
    t.error_weights[5] = -0.1225156446376204440720569753e+1;
    t.error_weights[6] = -0.4957589496572501915214079952;
    t.error_weights[7] = 0.1664377182454986536961530415e+1;
    t.error_weights[8] = -0.3503288487499736816886487290;
    t.error_weights[9] = 0.3341791187130174790297318841;
    t.error_weights[10] = 0.8192320648511571246570742613e-1;
    t.error_weights[11] = -0.2235530786388629525884427845e-1;
    t.error_weights_low = t.b;
    t.error_weights_low.push_back(0.0);
    t.error_weights_low[0] -= 0.244094488188976377952755905512;
    t.error_weights_low[8] -= 0.733846688281611857341361741547;
    t.error_weights_low[11] -= 0.220588235294117647058823529412e-1;
    t.order = 8;
    t.embedded_order = 5;
    t.error_exponent_order = 7;
    t.min_factor = 0.333;
    t.max_factor = 6.0;
    t.fsal = true;
    return t;
}

} // namespace tableaus
} // namespace homproj
