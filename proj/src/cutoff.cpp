#include "homog/cutoff.hpp"

#include <algorithm>
#include <cmath>

namespace homog {

namespace {
// P(s) = s - 2 s^7 / 7 + s^13 / 13, the antiderivative of (1 - s^6)^2
double big_p(double s) {
    double s6 = std::pow(s, 6);
    return s - 2.0 * s6 * s / 7.0 + s6 * s6 * s / 13.0;
}
} // namespace

double Chi::value(double r) {
    if (r <= 1.0 / 3.0) return 1.0;
    if (r >= 2.0 / 3.0) return 0.0;
    double s = 6.0 * r - 3.0;
    return 0.5 - 0.5 * k * big_p(s);
}

double Chi::d1(double r) {
    if (r <= 1.0 / 3.0 || r >= 2.0 / 3.0) return 0.0;
    double s = 6.0 * r - 3.0;
    double q = 1.0 - std::pow(s, 6);
    return -3.0 * k * q * q;
}

double Chi::d2(double r) {
    if (r <= 1.0 / 3.0 || r >= 2.0 / 3.0) return 0.0;
    double s = 6.0 * r - 3.0;
    double s5 = std::pow(s, 5);
    return 216.0 * k * s5 * (1.0 - s5 * s);
}

double GCutoff::value(double r) const {
    double h = 0.5 * a_;
    double u = std::min(std::fabs(r) / h, 1.0);
    double g = h * (u - u * u * u + 0.5 * u * u * u * u);
    return r < 0 ? -g : g;
}

double GCutoff::d1(double r) const {
    double u = std::fabs(r) / (0.5 * a_);
    if (u >= 1.0) return 0.0;
    return 1.0 - 3.0 * u * u + 2.0 * u * u * u;
}

double GCutoff::d2(double r) const {
    double u = std::fabs(r) / (0.5 * a_);
    if (u >= 1.0) return 0.0;
    double q = (-6.0 * u + 6.0 * u * u) / (0.5 * a_);
    return r < 0 ? -q : q;
}

} // namespace homog
