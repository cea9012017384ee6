#ifndef WSR_TPS_HPP
#define WSR_TPS_HPP

#include <vector>

#include "wsr/tensor.hpp"

namespace wsr {

// Control points on a regular side x side grid over [-1,1]^2, row-major,
// corners at (+-1, +-1).
struct ControlGrid {
  std::vector<double> xs, ys;
  static ControlGrid regular(int side);
  int count() const { return static_cast<int>(xs.size()); }
};

// Radial kernel U(r) = r^2 log(r^2), evaluated from the squared distance.
double tps_kernel_sq(double r2);

// Normalized coordinate of pixel center i out of n: -1 + (2i+1)/n.
double pixel_center_coord(int i, int n);

// The bordered (C+3)x(C+3) interpolation system for a fixed control grid,
// factorized once, plus everything precomputed for evaluating warp fields on
// a regular out_h x out_w pixel grid. The field produced from control-point
// shifts d is identity + J*d per coordinate, and J depends only on the grid
// and the output size, so forward and backward are both single mat-vecs.
// Immutable after construction; safe to share across threads.
class TpsSystem {
 public:
  TpsSystem(const ControlGrid& grid, int out_h, int out_w);

  int control_count() const { return c_; }
  int out_h() const { return out_h_; }
  int out_w() const { return out_w_; }

  // identity grid as x-plane then y-plane, each out_h*out_w, row-major
  const std::vector<double>& identity_grid() const { return identity_; }
  // (out_h*out_w) x C, shared by the x and y coordinate functions
  const std::vector<double>& shift_jacobian() const { return jacobian_; }

  // Solve the interpolation system for arbitrary per-point target values
  // (size C); returns C non-affine weights followed by 3 affine terms.
  std::vector<double> solve(const std::vector<double>& targets) const;

  // Evaluate a solved weight vector at an arbitrary point.
  double evaluate(const std::vector<double>& weights, double x, double y) const;

  const ControlGrid& grid() const { return grid_; }

 private:
  ControlGrid grid_;
  int c_;
  int out_h_, out_w_;
  int n_;                      // C + 3
  std::vector<double> lu_;     // factorized system, n_ x n_
  std::vector<int> piv_;
  std::vector<double> identity_;
  std::vector<double> jacobian_;
};

// shifts: [2C] as (dx_0..dx_{C-1}, dy_0..dy_{C-1}) -> field [2, h, w]
// (channel 0 = x source coordinate, channel 1 = y), normalized units.
template <typename T>
Tensor<T> tps_grid(Tape<T>* tape, const Tensor<T>& shifts, const TpsSystem& sys);

// Bilinear sampling of f [D, h, w] at field coordinates [2, h', w'],
// clamp-to-edge; differentiable w.r.t. both inputs.
template <typename T>
Tensor<T> grid_sample(Tape<T>* tape, const Tensor<T>& f, const Tensor<T>& field);

// Field for a uniform translation (dx, dy) in normalized units.
template <typename T>
Tensor<T> translation_field(int h, int w, double dx, double dy);

}  // namespace wsr

#endif  // WSR_TPS_HPP
