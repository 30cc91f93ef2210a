#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "promptforge/core.hpp"

namespace promptforge {

// Seven unconstrained affine scalars, indexed by AffineIndex.
enum AffineIndex : std::size_t { kTx = 0, kTy, kTheta, kSx, kSy, kShx, kShy };

struct AffineRaw {
  std::array<double, 7> v{};

  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }
};

using AffineGrad = std::array<double, 7>;

struct AffineRanges {
  double t = 0.05;
  double theta = 0.1;
  double sh = 0.1;
};

struct AffineConstrained {
  double tx = 0.0, ty = 0.0, theta = 0.0, sx = 1.0, sy = 1.0, shx = 0.0, shy = 0.0;
};

struct ConstrainedAffine {
  AffineConstrained value;
  // d(constrained)/d(raw), diagonal, same order as AffineRaw.
  std::array<double, 7> jacobian{};
};

double sigmoid(double x);
double logit(double p);

ConstrainedAffine constrain_affine(const AffineRaw& raw, const AffineRanges& ranges = {});

// Row-major 3x3. Maps source coordinates to destination coordinates in
// center-origin normalized units ([-1, 1] per axis).
struct Affine3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(int r, int c) const { return m[std::size_t(3 * r + c)]; }
  double det2() const { return m[0] * m[4] - m[1] * m[3]; }

  static Affine3 identity() { return {}; }
  static Affine3 scaling(double sx, double sy) { return {{sx, 0, 0, 0, sy, 0, 0, 0, 1}}; }
};

Affine3 build_matrix(const AffineConstrained& c);

inline constexpr double kSingularDet = 1e-6;

// Per destination pixel: the bilinear footprint of its inverse-mapped
// sample. Corner order is (x0,y0), (x0+1,y0), (x0,y0+1), (x0+1,y0+1).
struct WarpTape {
  int height = 0;
  int width = 0;
  Affine3 forward;
  std::array<double, 4> inverse{};  // 2x2 inverse linear block
  Image source;
  std::vector<std::int32_t> x0, y0;
  std::vector<std::array<float, 4>> weights;
  std::vector<std::uint8_t> corner_valid;  // bit k set when corner k lies in the source
  std::vector<std::uint8_t> in_bounds;

  std::size_t pixels() const { return std::size_t(height) * std::size_t(width); }
};

struct WarpResult {
  Image image;
  WarpTape tape;
};

// Inverse-mapping bilinear warp with zero fill. A destination pixel is in
// bounds when its sample falls strictly inside (-1, W) x (-1, H), i.e. when
// at least one bilinear corner with positive weight is a source pixel.
WarpResult warp_bilinear(const Image& img, const Affine3& a);

// Same output as warp_bilinear without recording a tape.
void warp_apply(const Image& img, const Affine3& a, Image& out, Mask* out_of_bounds = nullptr);

struct WarpGrads {
  Image image;
  AffineGrad raw{};
};

// grad_raw requires the constrained parameters the matrix was built from
// and their squashing Jacobian; pass nullptr to skip the parameter path
// (fixed-matrix warps).
WarpGrads warp_backward(const WarpTape& tape, const Image& grad_out, const ConstrainedAffine* params);

// Gradient of the loss with respect to the 2x2 linear block and the
// translation of the matrix used by the tape: {a00, a01, a10, a11, tx, ty}.
std::array<double, 6> warp_matrix_grad(const WarpTape& tape, const Image& grad_out);

}  // namespace promptforge
