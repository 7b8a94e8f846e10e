#pragma once

namespace homog {

// Blend used by the Hanzawa map and by tube-supported velocities:
// chi = 1 on [0, 1/3], chi = 0 on [2/3, inf), C^2, chi' < 0 in between and
// max |chi'| = 3k < 4 with k = 1 / (1 - 2/7 + 1/13).
struct Chi {
    static constexpr double k = 1.0 / (1.0 - 2.0 / 7.0 + 1.0 / 13.0);
    static double value(double r);
    static double d1(double r);
    static double d2(double r);
    static double max_slope() { return 3.0 * k; }
};

// Level-set compression g: odd, g(0) = 0, g'(0) = 1, g' = 0 for |r| >= a/2,
// |g''| <= 3/a. g' is the reversed cubic smoothstep in |r| / (a/2).
class GCutoff {
public:
    explicit GCutoff(double a) : a_(a) {}
    double value(double r) const;
    double d1(double r) const;
    double d2(double r) const;
    double a() const { return a_; }

private:
    double a_;
};

} // namespace homog
