#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace homog {

// Points and linear maps are stored padded to three components. In 2D the
// third coordinate of points is zero; deformation-type matrices carry 1 on
// the padded diagonal, curvature-type matrices carry 0.
using Vec = Eigen::Vector3d;
using Mat = Eigen::Matrix3d;

enum class ErrorKind {
    InvalidArgument,
    OutsideTube,
    NoConvergence,
    DegenerateGradient,
    EmptyTiling,
    TubeExit,
    StepTooLarge,
    NotInvertibleYet,
    SlopeCertificateFailed,
    NormalsNearOrthogonal,
    BoundViolated,
    ResolutionTooCoarse,
    GridMismatch,
    SolverDiverged,
    MeshTooCoarse,
    GradientUnavailable,
    InclusionEscape,
    MinRadiusReached,
    ConfigInvalid,
    CertificateFailed,
    CacheCorrupt,
};

const char* to_string(ErrorKind k);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

inline Vec pad(double x, double y, double z = 0.0) { return Vec(x, y, z); }

inline double norm_d(const Vec& v, int d) { return v.head(d).norm(); }

// largest singular value of the leading d x d block
double spectral_norm(const Mat& m, int d);
double det_d(const Mat& m, int d);
// inverse of the leading block, identity on the padded part
Mat inverse_d(const Mat& m, int d);
// identity on R^d, zero on the padded part
Mat eye_d(int d);

// lowercase hex SHA-256 digest
std::string sha256_hex(const void* data, std::size_t n);
inline std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

// Runs f(i) for i in [0, n). Each index is written by exactly one worker, so
// results do not depend on the thread count.
template <class F>
void parallel_for(std::size_t n, F&& f) {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    std::size_t workers = std::min<std::size_t>(hw, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) f(i);
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

} // namespace homog
