#include "homog/common.hpp"

#include <openssl/evp.h>

#include <cstdio>

namespace homog {

const char* to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::OutsideTube: return "OutsideTube";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::DegenerateGradient: return "DegenerateGradient";
    case ErrorKind::EmptyTiling: return "EmptyTiling";
    case ErrorKind::TubeExit: return "TubeExit";
    case ErrorKind::StepTooLarge: return "StepTooLarge";
    case ErrorKind::NotInvertibleYet: return "NotInvertibleYet";
    case ErrorKind::SlopeCertificateFailed: return "SlopeCertificateFailed";
    case ErrorKind::NormalsNearOrthogonal: return "NormalsNearOrthogonal";
    case ErrorKind::BoundViolated: return "BoundViolated";
    case ErrorKind::ResolutionTooCoarse: return "ResolutionTooCoarse";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::SolverDiverged: return "SolverDiverged";
    case ErrorKind::MeshTooCoarse: return "MeshTooCoarse";
    case ErrorKind::GradientUnavailable: return "GradientUnavailable";
    case ErrorKind::InclusionEscape: return "InclusionEscape";
    case ErrorKind::MinRadiusReached: return "MinRadiusReached";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::CertificateFailed: return "CertificateFailed";
    case ErrorKind::CacheCorrupt: return "CacheCorrupt";
    }
    return "Unknown";
}

double spectral_norm(const Mat& m, int d) {
    if (d == 2) {
        Eigen::Matrix2d b = m.topLeftCorner<2, 2>();
        Eigen::JacobiSVD<Eigen::Matrix2d> svd(b);
        return svd.singularValues()(0);
    }
    Eigen::JacobiSVD<Mat> svd(m);
    return svd.singularValues()(0);
}

double det_d(const Mat& m, int d) {
    if (d == 2) return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    return m.determinant();
}

Mat inverse_d(const Mat& m, int d) {
    if (d == 2) {
        Mat r = Mat::Identity();
        double det = det_d(m, 2);
        r(0, 0) = m(1, 1) / det;
        r(1, 1) = m(0, 0) / det;
        r(0, 1) = -m(0, 1) / det;
        r(1, 0) = -m(1, 0) / det;
        return r;
    }
    return m.inverse();
}

Mat eye_d(int d) {
    Mat r = Mat::Zero();
    for (int i = 0; i < d; ++i) r(i, i) = 1.0;
    return r;
}

std::string sha256_hex(const void* data, std::size_t n) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1)
        throw Error(ErrorKind::InvalidArgument, "SHA-256 failed");
    std::string out(2 * len, '0');
    for (unsigned int i = 0; i < len; ++i) std::snprintf(&out[2 * i], 3, "%02x", md[i]);
    return out;
}

} // namespace homog
